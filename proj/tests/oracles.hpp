#pragma once

// Reference implementations used only by tests. Each one follows the
// textbook definition directly and shares no code with the library path it
// checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "hyperfuse/tape.hpp"
#include "hyperfuse/tensor.hpp"

namespace oracle {

using hyperfuse::Shape;
using hyperfuse::Tensor;

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

// Direct cross-correlation sum with explicit zero padding.
inline Tensor<double> conv2d(const Tensor<double>& in, const Tensor<double>& w, const Tensor<double>& b, int stride,
                             int pad) {
  int cin = static_cast<int>(in.dim(0)), h = static_cast<int>(in.dim(1)), wd = static_cast<int>(in.dim(2));
  int cout = static_cast<int>(w.dim(0)), k = static_cast<int>(w.dim(2));
  int ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor<double> out(Shape{static_cast<std::size_t>(cout), static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
  for (int o = 0; o < cout; ++o)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x) {
        double s = b[o];
        for (int c = 0; c < cin; ++c)
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
              int iy = y * stride - pad + i, ix = x * stride - pad + j;
              if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
              s += w[((o * cin + c) * k + i) * k + j] * in.at(c, iy, ix);
            }
        out.at(o, y, x) = s;
      }
  return out;
}

// Bilinear interpolation formula on a single plane with zero outside.
inline double bilinear(const Tensor<double>& in, std::size_t c, double x, double y) {
  auto px = [&](long yy, long xx) {
    if (yy < 0 || xx < 0 || yy >= static_cast<long>(in.dim(1)) || xx >= static_cast<long>(in.dim(2))) return 0.0;
    return in.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
  };
  long x0 = static_cast<long>(std::floor(x)), y0 = static_cast<long>(std::floor(y));
  double ax = x - static_cast<double>(x0), ay = y - static_cast<double>(y0);
  double top = px(y0, x0) + ax * (px(y0, x0 + 1) - px(y0, x0));
  double bottom = px(y0 + 1, x0) + ax * (px(y0 + 1, x0 + 1) - px(y0 + 1, x0));
  return top + ay * (bottom - top);
}

// Dense evaluation of X + Dv^-1 H De^-1 H^T X Theta.
inline Tensor<double> dense_hyperconv(const Tensor<double>& x, const Tensor<double>& h, const Tensor<double>& theta) {
  std::size_t n = h.dim(0), e = h.dim(1), c = x.dim(1), c2 = theta.dim(1);
  std::vector<double> dv(n, 0.0), de(e, 0.0);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t j = 0; j < e; ++j) {
      dv[v] += h.at(v, j);
      de[j] += h.at(v, j);
    }
  // A = Dv^-1 H De^-1 H^T  (n x n)
  std::vector<double> a(n * n, 0.0);
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v) {
      double s = 0.0;
      for (std::size_t j = 0; j < e; ++j)
        if (de[j] > 0) s += h.at(u, j) * h.at(v, j) / de[j];
      a[u * n + v] = s / dv[u];
    }
  Tensor<double> out(Shape{n, c2});
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t k = 0; k < c2; ++k) {
      double s = 0.0;
      for (std::size_t v = 0; v < n; ++v)
        for (std::size_t m = 0; m < c; ++m) s += a[u * n + v] * x.at(v, m) * theta.at(m, k);
      out.at(u, k) = (c == c2 ? x.at(u, k) : 0.0) + s;
    }
  return out;
}

// Brute-force Eq.1-style edges: for each centroid v, all u with distance < lambda.
inline std::vector<std::vector<std::uint32_t>> brute_force_edges(const Tensor<double>& f, double lambda) {
  std::size_t n = f.dim(0), c = f.dim(1);
  std::vector<std::vector<std::uint32_t>> edges(n);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t u = 0; u < n; ++u) {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) s += (f.at(u, k) - f.at(v, k)) * (f.at(u, k) - f.at(v, k));
      if (std::sqrt(s) < lambda) edges[v].push_back(static_cast<std::uint32_t>(u));
    }
  return edges;
}

// Central finite differences of a scalar function of several tensors,
// compared against the tape's reverse-mode gradients. Returns the worst
// relative error |a - n| / max(|a|, |n|, floor).
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

using LossBuilder = std::function<hyperfuse::Var<double>(hyperfuse::Tape<double>&, const std::vector<hyperfuse::Var<double>>&)>;

inline double evaluate(const LossBuilder& f, const std::vector<Tensor<double>>& inputs) {
  hyperfuse::Tape<double> tape;
  std::vector<hyperfuse::Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t, false));
  return f(tape, vars).value()[0];
}

inline GradCheckResult finite_difference_check(const LossBuilder& f, std::vector<Tensor<double>> inputs,
                                               std::size_t max_entries_per_input = 0, double h = 1e-5,
                                               double floor = 1e-6, std::uint64_t seed = 7) {
  hyperfuse::Tape<double> tape;
  std::vector<hyperfuse::Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
  auto loss = f(tape, vars);
  tape.backward(loss);
  std::vector<Tensor<double>> analytic;
  for (const auto& v : vars) analytic.push_back(tape.has_grad(v.id()) ? v.grad() : Tensor<double>(v.shape()));

  std::mt19937_64 rng(seed);
  GradCheckResult res;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<std::size_t> idx(inputs[i].size());
    for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
    if (max_entries_per_input && idx.size() > max_entries_per_input) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_entries_per_input);
    }
    for (auto j : idx) {
      double orig = inputs[i][j];
      inputs[i][j] = orig + h;
      double up = evaluate(f, inputs);
      inputs[i][j] = orig - h;
      double down = evaluate(f, inputs);
      inputs[i][j] = orig;
      double numeric = (up - down) / (2 * h);
      double a = analytic[i][j];
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      res.max_rel_error = std::max(res.max_rel_error, rel);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace oracle
