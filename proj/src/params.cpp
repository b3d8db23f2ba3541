#include "hyperfuse/params.hpp"

#include <cmath>

namespace hyperfuse {

template <typename T>
void ModelParams<T>::add(const std::string& name, Tensor<T> value) {
  auto [it, inserted] = tensors_.emplace(name, std::move(value));
  if (!inserted) throw ContractError("duplicate parameter name: " + name);
}

template <typename T>
Tensor<T>& ModelParams<T>::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

template <typename T>
const Tensor<T>& ModelParams<T>::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

template <typename T>
std::size_t ModelParams<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

double Rng::normal() {
  // Box-Muller; u1 in (0,1].
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template <typename T>
Tensor<T> kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng, double gain_scale) {
  double bound = gain_scale * std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
void add_conv(ModelParams<T>& params, const std::string& prefix, std::size_t in, std::size_t out, std::size_t k,
              Rng& rng, double gain_scale) {
  params.add(prefix + ".weight", kaiming_uniform<T>(Shape{out, in, k, k}, in * k * k, rng, gain_scale));
  params.add(prefix + ".bias", Tensor<T>(Shape{out}));
}

template <typename T>
void add_zero_conv(ModelParams<T>& params, const std::string& prefix, std::size_t in, std::size_t out,
                   std::size_t k) {
  params.add(prefix + ".weight", Tensor<T>(Shape{out, in, k, k}));
  params.add(prefix + ".bias", Tensor<T>(Shape{out}));
}

template <typename T>
ParamBinding<T>::ParamBinding(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad) : tape_(tape) {
  for (const auto& [name, t] : params) vars_.emplace(name, tape.leaf(t, requires_grad));
}

template <typename T>
Var<T> ParamBinding<T>::operator()(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("parameter not bound: " + name);
  return it->second;
}

template <typename T>
ModelParams<T> ParamBinding<T>::grads() const {
  ModelParams<T> out;
  for (const auto& [name, v] : vars_)
    out.add(name, tape_.has_grad(v.id()) ? v.grad() : Tensor<T>(v.shape()));
  return out;
}

template class ModelParams<float>;
template class ModelParams<double>;
template class ParamBinding<float>;
template class ParamBinding<double>;
template Tensor<float> kaiming_uniform(const Shape&, std::size_t, Rng&, double);
template Tensor<double> kaiming_uniform(const Shape&, std::size_t, Rng&, double);
template void add_conv(ModelParams<float>&, const std::string&, std::size_t, std::size_t, std::size_t, Rng&, double);
template void add_conv(ModelParams<double>&, const std::string&, std::size_t, std::size_t, std::size_t, Rng&,
                       double);
template void add_zero_conv(ModelParams<float>&, const std::string&, std::size_t, std::size_t, std::size_t);
template void add_zero_conv(ModelParams<double>&, const std::string&, std::size_t, std::size_t, std::size_t);

}  // namespace hyperfuse
