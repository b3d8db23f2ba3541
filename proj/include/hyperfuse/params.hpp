#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "hyperfuse/tape.hpp"
#include "hyperfuse/tensor.hpp"

namespace hyperfuse {

// Named parameter tensors, iterated in lexicographic name order.
template <typename T>
class ModelParams {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  void add(const std::string& name, Tensor<T> value);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  std::size_t count() const { return tensors_.size(); }
  std::size_t total_elements() const;

  typename Map::iterator begin() { return tensors_.begin(); }
  typename Map::iterator end() { return tensors_.end(); }
  typename Map::const_iterator begin() const { return tensors_.begin(); }
  typename Map::const_iterator end() const { return tensors_.end(); }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& [name, t] : tensors_) out.add(name, t.template cast<U>());
    return out;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) { return a.tensors_ == b.tensors_; }

 private:
  Map tensors_;
};

// Portable uniform draws; std::*_distribution output is not specified
// bit-for-bit across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }
  double normal();
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

// U(-b, b) with b = sqrt(6 / fan_in).
template <typename T>
Tensor<T> kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng, double gain_scale = 1.0);

// Conv weight [out,in,k,k] with Kaiming init plus zero bias under
// "<prefix>.weight" / "<prefix>.bias".
template <typename T>
void add_conv(ModelParams<T>& params, const std::string& prefix, std::size_t in, std::size_t out, std::size_t k,
              Rng& rng, double gain_scale = 1.0);
template <typename T>
void add_zero_conv(ModelParams<T>& params, const std::string& prefix, std::size_t in, std::size_t out,
                   std::size_t k);

// Every parameter as a tape leaf for one forward/backward pass.
template <typename T>
class ParamBinding {
 public:
  ParamBinding(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad = true);
  // Binds existing tape nodes, e.g. leaves perturbed by a gradient check.
  ParamBinding(Tape<T>& tape, std::map<std::string, Var<T>> vars) : tape_(tape), vars_(std::move(vars)) {}
  Var<T> operator()(const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }
  // Gradients after backward; zeros for parameters the loss never reached.
  ModelParams<T> grads() const;
  Tape<T>& tape() const { return tape_; }

 private:
  Tape<T>& tape_;
  std::map<std::string, Var<T>> vars_;
};

extern template class ModelParams<float>;
extern template class ModelParams<double>;
extern template class ParamBinding<float>;
extern template class ParamBinding<double>;

}  // namespace hyperfuse
