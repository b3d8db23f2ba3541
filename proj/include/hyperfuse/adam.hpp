#pragma once

#include <map>
#include <string>

#include "hyperfuse/params.hpp"

namespace hyperfuse {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moments keyed by parameter name.
template <typename T>
struct AdamState {
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
};

// Bias-corrected Adam update for step t (1-based). Every parameter needs a
// same-shaped gradient.
template <typename T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state, const AdamConfig& cfg,
               int t);

}  // namespace hyperfuse
