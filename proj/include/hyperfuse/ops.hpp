#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hyperfuse/tape.hpp"
#include "hyperfuse/tensor.hpp"

namespace hyperfuse {

// Differentiable operations. Every op records itself on the tape of its
// first argument; all inputs must share that tape.

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, double factor);
// Scalar [1] result.
template <typename T>
Var<T> sum(Var<T> a);

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);  // [M,K] x [K,N]
template <typename T>
Var<T> transpose(Var<T> a);  // [M,N] -> [N,M]
template <typename T>
Var<T> reshape(Var<T> a, Shape shape);

template <typename T>
Var<T> silu(Var<T> a);

// Cross-correlation with zero padding. input [C_in,H,W], weight
// [C_out,C_in,k,k], bias [C_out].
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias, int stride, int padding);

// DCN v1 with a 3x3 kernel, stride 1, padding 1. offsets is [18,H,W] with
// channel 2t holding the x displacement and 2t+1 the y displacement of tap t
// (taps in row-major kernel order).
template <typename T>
Var<T> deform_conv2d(Var<T> input, Var<T> weight, Var<T> offsets, Var<T> bias);

// Bilinear read of every channel at (x, y); corners outside the grid read as 0.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& input, double x, double y);
// Differentiable variant; xy is a [2] tensor holding (x, y).
template <typename T>
Var<T> bilinear_sample(Var<T> input, Var<T> xy);

// Nearest-neighbour resampling with source index floor(dst * src / dst_extent).
template <typename T>
Var<T> resize_nearest(Var<T> input, std::size_t height, std::size_t width);

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> inputs);
template <typename T>
Var<T> concat_channels(std::initializer_list<Var<T>> inputs) {
  return concat_channels(std::span<const Var<T>>(inputs.begin(), inputs.size()));
}
template <typename T>
Var<T> slice_channels(Var<T> input, std::size_t begin, std::size_t count);
template <typename T>
std::vector<Var<T>> split_channels(Var<T> input, std::span<const std::size_t> counts);

}  // namespace hyperfuse
