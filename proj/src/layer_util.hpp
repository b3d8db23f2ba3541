#pragma once

#include <string>

#include "hyperfuse/ops.hpp"
#include "hyperfuse/params.hpp"

namespace hyperfuse::detail {

template <typename T>
Var<T> conv(Var<T> x, const ParamBinding<T>& p, const std::string& name, int stride = 1, int padding = -1) {
  Var<T> w = p(name + ".weight");
  if (padding < 0) padding = static_cast<int>(w.shape()[2] / 2);
  return conv2d(x, w, p(name + ".bias"), stride, padding);
}

template <typename T>
Var<T> conv_silu(Var<T> x, const ParamBinding<T>& p, const std::string& name, int stride = 1) {
  return silu(conv(x, p, name, stride));
}

}  // namespace hyperfuse::detail
