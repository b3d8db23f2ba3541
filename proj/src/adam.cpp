#include "hyperfuse/adam.hpp"

#include <cmath>

namespace hyperfuse {

template <typename T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state, const AdamConfig& cfg,
               int t) {
  if (t < 1) throw ParameterError("adam_step: t must be >= 1");
  for (auto& [name, p] : params) {
    if (!grads.contains(name)) throw ContractError("adam_step: no gradient for " + name);
    const Tensor<T>& g = grads.at(name);
    if (g.shape() != p.shape())
      throw ShapeError("adam_step: gradient shape " + shape_str(g.shape()) + " differs from parameter " + name +
                       " " + shape_str(p.shape()));
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params) {
    const Tensor<T>& g = grads.at(name);
    auto [mit, _m] = state.m.try_emplace(name, p.shape());
    auto [vit, _v] = state.v.try_emplace(name, p.shape());
    Tensor<T>& m = mit->second;
    Tensor<T>& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      double gi = static_cast<double>(g[i]);
      double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double step = cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - step);
    }
  }
}

template void adam_step(ModelParams<float>&, const ModelParams<float>&, AdamState<float>&, const AdamConfig&, int);
template void adam_step(ModelParams<double>&, const ModelParams<double>&, AdamState<double>&, const AdamConfig&,
                        int);

}  // namespace hyperfuse
