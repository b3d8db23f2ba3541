#include "hyperfuse/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

namespace hyperfuse {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* arg) {
  require(s.size() == rank, std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                                ", got " + shape_str(s));
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.ptr();
  const T* s = src.ptr();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

struct ConvGeometry {
  std::size_t c_in, h, w, k, stride, pad, h_out, w_out;
  std::size_t patch() const { return c_in * k * k; }
  std::size_t pixels() const { return h_out * w_out; }
};

template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* col) {
  for (std::size_t c = 0; c < g.c_in; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* row = col + ((c * g.k + ki) * g.k + kj) * g.pixels();
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          T* dst = row + oy * g.w_out;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            for (std::size_t ox = 0; ox < g.w_out; ++ox) dst[ox] = T(0);
            continue;
          }
          const T* src = in + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : src[ix];
          }
        }
      }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* in) {
  for (std::size_t c = 0; c < g.c_in; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* row = col + ((c * g.k + ki) * g.k + kj) * g.pixels();
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          const T* src = row + oy * g.w_out;
          T* dst = in + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
}

// out[C_out, P] = weight[C_out, K] * col[K, P] + bias
template <typename T>
void gemm_bias(const Tensor<T>& weight, const T* col, std::size_t k, std::size_t p, const Tensor<T>& bias,
               T* out) {
  std::size_t c_out = weight.dim(0);
  ConstMatMap<T> wm(weight.ptr(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(k));
  ConstMatMap<T> cm(col, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
  MatMap<T> om(out, static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(p));
  om.noalias() = wm * cm;
  for (std::size_t o = 0; o < c_out; ++o) om.row(static_cast<Eigen::Index>(o)).array() += bias[o];
}

// Weight/bias gradients plus d(col) = W^T * G.
template <typename T>
void gemm_backward(BackwardContext<T>& ctx, const Tensor<T>& weight, const T* col, std::size_t k,
                   std::size_t p, AlignedVector<T>* dcol, std::size_t weight_slot, std::size_t bias_slot) {
  std::size_t c_out = weight.dim(0);
  ConstMatMap<T> g(ctx.grad_output().ptr(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(p));
  ConstMatMap<T> cm(col, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
  if (auto* gw = ctx.input_grad(weight_slot)) {
    MatMap<T> gwm(gw->ptr(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(k));
    gwm.noalias() += g * cm.transpose();
  }
  if (auto* gb = ctx.input_grad(bias_slot)) {
    for (std::size_t o = 0; o < c_out; ++o) {
      const T* row = ctx.grad_output().ptr() + o * p;
      T acc = 0;
      for (std::size_t i = 0; i < p; ++i) acc += row[i];
      (*gb)[o] += acc;
    }
  }
  if (dcol) {
    dcol->resize(k * p);
    ConstMatMap<T> wm(weight.ptr(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(k));
    MatMap<T> dm(dcol->data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
    dm.noalias() = wm.transpose() * g;
  }
}

// Corner addresses and weights of one bilinear read; -1 marks an
// out-of-grid corner.
struct BilinearTap {
  long idx[4];
  double wt[4];
  double fx, fy;
};

BilinearTap bilinear_tap(double x, double y, std::size_t h, std::size_t w) {
  BilinearTap t{};
  double x0f = std::floor(x), y0f = std::floor(y);
  t.fx = x - x0f;
  t.fy = y - y0f;
  long x0 = static_cast<long>(x0f), y0 = static_cast<long>(y0f);
  const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
  t.wt[0] = (1 - t.fy) * (1 - t.fx);
  t.wt[1] = (1 - t.fy) * t.fx;
  t.wt[2] = t.fy * (1 - t.fx);
  t.wt[3] = t.fy * t.fx;
  for (int i = 0; i < 4; ++i) {
    bool inside = xs[i] >= 0 && ys[i] >= 0 && xs[i] < static_cast<long>(w) && ys[i] < static_cast<long>(h);
    t.idx[i] = inside ? ys[i] * static_cast<long>(w) + xs[i] : -1;
  }
  return t;
}

template <typename T>
T tap_read(const T* plane, const BilinearTap& t) {
  T v = T(0);
  for (int i = 0; i < 4; ++i)
    if (t.idx[i] >= 0) v += static_cast<T>(t.wt[i]) * plane[t.idx[i]];
  return v;
}

template <typename T>
T corner(const T* plane, long idx) {
  return idx >= 0 ? plane[idx] : T(0);
}

// d(read)/dx and d(read)/dy for one plane.
template <typename T>
void tap_coord_grad(const T* plane, const BilinearTap& t, T& dx, T& dy) {
  T v00 = corner(plane, t.idx[0]), v01 = corner(plane, t.idx[1]);
  T v10 = corner(plane, t.idx[2]), v11 = corner(plane, t.idx[3]);
  T fx = static_cast<T>(t.fx), fy = static_cast<T>(t.fy);
  dx = (1 - fy) * (v01 - v00) + fy * (v11 - v10);
  dy = (1 - fx) * (v10 - v00) + fx * (v11 - v01);
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  accumulate(out, b.value());
  return a.tape().record("add", std::move(out), {a, b}, [](BackwardContext<T>& ctx) {
    for (std::size_t i = 0; i < 2; ++i)
      if (auto* g = ctx.input_grad(i)) accumulate(*g, ctx.grad_output());
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape().record("mul", std::move(out), {a, b}, [](BackwardContext<T>& ctx) {
    const auto& g = ctx.grad_output();
    if (auto* ga = ctx.input_grad(0))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * ctx.input(1)[i];
    if (auto* gb = ctx.input_grad(1))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * ctx.input(0)[i];
  });
}

template <typename T>
Var<T> scale(Var<T> a, double factor) {
  Tensor<T> out = a.value();
  T f = static_cast<T>(factor);
  for (auto& v : out.data()) v *= f;
  return a.tape().record("scale", std::move(out), {a}, [f](BackwardContext<T>& ctx) {
    auto* ga = ctx.input_grad(0);
    const auto& g = ctx.grad_output();
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += f * g[i];
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T s = T(0);
  for (T v : a.value().data()) s += v;
  return a.tape().record("sum", Tensor<T>::scalar(s), {a}, [](BackwardContext<T>& ctx) {
    auto* ga = ctx.input_grad(0);
    T g = ctx.grad_output()[0];
    for (auto& v : ga->data()) v += g;
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_rank(a.shape(), 2, "matmul", "lhs");
  require_rank(b.shape(), 2, "matmul", "rhs");
  require(a.shape()[1] == b.shape()[0],
          "matmul: inner extents differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  auto m = static_cast<Eigen::Index>(a.shape()[0]);
  auto k = static_cast<Eigen::Index>(a.shape()[1]);
  auto n = static_cast<Eigen::Index>(b.shape()[1]);
  Tensor<T> out(Shape{a.shape()[0], b.shape()[1]});
  MatMap<T>(out.ptr(), m, n).noalias() = ConstMatMap<T>(a.value().ptr(), m, k) * ConstMatMap<T>(b.value().ptr(), k, n);
  return a.tape().record("matmul", std::move(out), {a, b}, [m, k, n](BackwardContext<T>& ctx) {
    ConstMatMap<T> g(ctx.grad_output().ptr(), m, n);
    if (auto* ga = ctx.input_grad(0))
      MatMap<T>(ga->ptr(), m, k).noalias() += g * ConstMatMap<T>(ctx.input(1).ptr(), k, n).transpose();
    if (auto* gb = ctx.input_grad(1))
      MatMap<T>(gb->ptr(), k, n).noalias() += ConstMatMap<T>(ctx.input(0).ptr(), m, k).transpose() * g;
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  require_rank(a.shape(), 2, "transpose", "input");
  std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor<T> out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = a.value().at(i, j);
  return a.tape().record("transpose", std::move(out), {a}, [r, c](BackwardContext<T>& ctx) {
    auto* ga = ctx.input_grad(0);
    const auto& g = ctx.grad_output();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga->at(i, j) += g.at(j, i);
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.tape().record("reshape", std::move(out), {a}, [](BackwardContext<T>& ctx) {
    auto* ga = ctx.input_grad(0);
    const auto& g = ctx.grad_output();
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

template <typename T>
Var<T> silu(Var<T> a) {
  Tensor<T> out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / (T(1) + std::exp(-x[i]));
  return a.tape().record("silu", std::move(out), {a}, [](BackwardContext<T>& ctx) {
    auto* ga = ctx.input_grad(0);
    const auto& x = ctx.input(0);
    const auto& g = ctx.grad_output();
    for (std::size_t i = 0; i < x.size(); ++i) {
      T s = T(1) / (T(1) + std::exp(-x[i]));
      (*ga)[i] += g[i] * s * (T(1) + x[i] * (T(1) - s));
    }
  });
}

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias, int stride, int padding) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  require_rank(is, 3, "conv2d", "input");
  require_rank(ws, 4, "conv2d", "weight");
  require(ws[2] == ws[3], "conv2d: kernel must be square, got " + shape_str(ws));
  require(ws[1] == is[0], "conv2d: channel mismatch, input " + shape_str(is) + " weight " + shape_str(ws));
  require(bias.shape() == Shape{ws[0]}, "conv2d: bias must be [" + std::to_string(ws[0]) + "]");
  if (stride < 1 || padding < 0) throw ParameterError("conv2d: stride must be >= 1 and padding >= 0");
  long span_h = static_cast<long>(is[1]) + 2 * padding - static_cast<long>(ws[2]);
  long span_w = static_cast<long>(is[2]) + 2 * padding - static_cast<long>(ws[3]);
  require(span_h >= 0 && span_w >= 0, "conv2d: kernel larger than padded input");

  ConvGeometry g{is[0], is[1], is[2], ws[2], static_cast<std::size_t>(stride), static_cast<std::size_t>(padding),
                 static_cast<std::size_t>(span_h / stride + 1), static_cast<std::size_t>(span_w / stride + 1)};
  bool pointwise = g.k == 1 && g.stride == 1 && g.pad == 0;
  AlignedVector<T> col;
  if (!pointwise) {
    col.resize(g.patch() * g.pixels());
    im2col(input.value().ptr(), g, col.data());
  }
  Tensor<T> out(Shape{ws[0], g.h_out, g.w_out});
  gemm_bias(weight.value(), pointwise ? input.value().ptr() : col.data(), g.patch(), g.pixels(), bias.value(),
            out.ptr());

  return input.tape().record(
      "conv2d", std::move(out), {input, weight, bias},
      [g, pointwise, col = std::move(col)](BackwardContext<T>& ctx) {
        const T* colp = pointwise ? ctx.input(0).ptr() : col.data();
        auto* gin = ctx.input_grad(0);
        AlignedVector<T> dcol;
        gemm_backward(ctx, ctx.input(1), colp, g.patch(), g.pixels(), gin ? &dcol : nullptr, 1, 2);
        if (!gin) return;
        if (pointwise) {
          for (std::size_t i = 0; i < dcol.size(); ++i) (*gin)[i] += dcol[i];
        } else {
          col2im(dcol.data(), g, gin->ptr());
        }
      });
}

template <typename T>
Var<T> deform_conv2d(Var<T> input, Var<T> weight, Var<T> offsets, Var<T> bias) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  require_rank(is, 3, "deform_conv2d", "input");
  require_rank(ws, 4, "deform_conv2d", "weight");
  require(ws[2] == 3 && ws[3] == 3, "deform_conv2d: kernel must be 3x3, got " + shape_str(ws));
  require(ws[1] == is[0], "deform_conv2d: channel mismatch, input " + shape_str(is) + " weight " + shape_str(ws));
  require(bias.shape() == Shape{ws[0]}, "deform_conv2d: bias must be [" + std::to_string(ws[0]) + "]");
  const std::size_t taps = 9;
  require(offsets.shape() == Shape{2 * taps, is[1], is[2]},
          "deform_conv2d: offsets must be [18," + std::to_string(is[1]) + "," + std::to_string(is[2]) + "], got " +
              shape_str(offsets.shape()));

  const std::size_t c_in = is[0], h = is[1], w = is[2], pixels = h * w;
  const Tensor<T>& off = offsets.value();
  std::vector<BilinearTap> sample(taps * pixels);
  for (std::size_t t = 0; t < taps; ++t) {
    const T* dx = off.ptr() + (2 * t) * pixels;
    const T* dy = off.ptr() + (2 * t + 1) * pixels;
    double ki = static_cast<double>(t / 3), kj = static_cast<double>(t % 3);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        std::size_t p = y * w + x;
        double sx = static_cast<double>(x) - 1.0 + kj + static_cast<double>(dx[p]);
        double sy = static_cast<double>(y) - 1.0 + ki + static_cast<double>(dy[p]);
        sample[t * pixels + p] = bilinear_tap(sx, sy, h, w);
      }
  }
  AlignedVector<T> col(c_in * taps * pixels);
  const T* in = input.value().ptr();
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t t = 0; t < taps; ++t) {
      T* row = col.data() + (c * taps + t) * pixels;
      const BilinearTap* st = sample.data() + t * pixels;
      const T* plane = in + c * pixels;
      for (std::size_t p = 0; p < pixels; ++p) row[p] = tap_read(plane, st[p]);
    }
  Tensor<T> out(Shape{ws[0], h, w});
  gemm_bias(weight.value(), col.data(), c_in * taps, pixels, bias.value(), out.ptr());

  return input.tape().record(
      "deform_conv2d", std::move(out), {input, weight, offsets, bias},
      [c_in, pixels, col = std::move(col), sample = std::move(sample)](BackwardContext<T>& ctx) {
        const std::size_t taps = 9;
        auto* gin = ctx.input_grad(0);
        auto* goff = ctx.input_grad(2);
        AlignedVector<T> dcol;
        bool need_col = gin || goff;
        gemm_backward(ctx, ctx.input(1), col.data(), c_in * taps, pixels, need_col ? &dcol : nullptr, 1, 3);
        if (!need_col) return;
        const T* in = ctx.input(0).ptr();
        for (std::size_t c = 0; c < c_in; ++c)
          for (std::size_t t = 0; t < taps; ++t) {
            const T* drow = dcol.data() + (c * taps + t) * pixels;
            const BilinearTap* st = sample.data() + t * pixels;
            if (gin) {
              T* gplane = gin->ptr() + c * pixels;
              for (std::size_t p = 0; p < pixels; ++p)
                for (int i = 0; i < 4; ++i)
                  if (st[p].idx[i] >= 0) gplane[st[p].idx[i]] += static_cast<T>(st[p].wt[i]) * drow[p];
            }
            if (goff) {
              const T* plane = in + c * pixels;
              T* gx = goff->ptr() + (2 * t) * pixels;
              T* gy = goff->ptr() + (2 * t + 1) * pixels;
              for (std::size_t p = 0; p < pixels; ++p) {
                T dx, dy;
                tap_coord_grad(plane, st[p], dx, dy);
                gx[p] += drow[p] * dx;
                gy[p] += drow[p] * dy;
              }
            }
          }
      });
}

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& input, double x, double y) {
  require_rank(input.shape(), 3, "bilinear_sample", "input");
  std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  BilinearTap t = bilinear_tap(x, y, h, w);
  Tensor<T> out(Shape{c});
  for (std::size_t i = 0; i < c; ++i) out[i] = tap_read(input.ptr() + i * h * w, t);
  return out;
}

template <typename T>
Var<T> bilinear_sample(Var<T> input, Var<T> xy) {
  require(xy.shape() == Shape{2}, "bilinear_sample: coordinates must be [2]");
  double x = static_cast<double>(xy.value()[0]), y = static_cast<double>(xy.value()[1]);
  Tensor<T> out = bilinear_sample(input.value(), x, y);
  return input.tape().record("bilinear_sample", std::move(out), {input, xy}, [x, y](BackwardContext<T>& ctx) {
    const auto& in = ctx.input(0);
    std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
    BilinearTap t = bilinear_tap(x, y, h, w);
    const auto& g = ctx.grad_output();
    if (auto* gin = ctx.input_grad(0))
      for (std::size_t ch = 0; ch < c; ++ch)
        for (int i = 0; i < 4; ++i)
          if (t.idx[i] >= 0) gin->ptr()[ch * h * w + t.idx[i]] += static_cast<T>(t.wt[i]) * g[ch];
    if (auto* gxy = ctx.input_grad(1))
      for (std::size_t ch = 0; ch < c; ++ch) {
        T dx, dy;
        tap_coord_grad(in.ptr() + ch * h * w, t, dx, dy);
        (*gxy)[0] += g[ch] * dx;
        (*gxy)[1] += g[ch] * dy;
      }
  });
}

template <typename T>
Var<T> resize_nearest(Var<T> input, std::size_t height, std::size_t width) {
  require_rank(input.shape(), 3, "resize_nearest", "input");
  if (height == 0 || width == 0) throw ParameterError("resize_nearest: target extents must be >= 1");
  std::size_t c = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  if (h == height && w == width) return reshape(input, input.shape());
  std::vector<std::size_t> src_y(height), src_x(width);
  for (std::size_t y = 0; y < height; ++y) src_y[y] = y * h / height;
  for (std::size_t x = 0; x < width; ++x) src_x[x] = x * w / width;
  Tensor<T> out(Shape{c, height, width});
  const auto& in = input.value();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) out.at(ch, y, x) = in.at(ch, src_y[y], src_x[x]);
  return input.tape().record("resize_nearest", std::move(out), {input},
                             [c, height, width, src_y = std::move(src_y), src_x = std::move(src_x)](
                                 BackwardContext<T>& ctx) {
                               auto* gin = ctx.input_grad(0);
                               const auto& g = ctx.grad_output();
                               for (std::size_t ch = 0; ch < c; ++ch)
                                 for (std::size_t y = 0; y < height; ++y)
                                   for (std::size_t x = 0; x < width; ++x)
                                     gin->at(ch, src_y[y], src_x[x]) += g.at(ch, y, x);
                             });
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> inputs) {
  require(!inputs.empty(), "concat_channels: no inputs");
  const Shape& first = inputs[0].shape();
  require_rank(first, 3, "concat_channels", "input");
  std::size_t channels = 0;
  for (const auto& v : inputs) {
    const Shape& s = v.shape();
    require(s.size() == 3 && s[1] == first[1] && s[2] == first[2],
            "concat_channels: spatial mismatch " + shape_str(first) + " vs " + shape_str(s));
    channels += s[0];
  }
  Tensor<T> out(Shape{channels, first[1], first[2]});
  std::size_t pos = 0;
  for (const auto& v : inputs) {
    std::copy(v.value().ptr(), v.value().ptr() + v.value().size(), out.ptr() + pos);
    pos += v.value().size();
  }
  return inputs[0].tape().record("concat_channels", std::move(out), inputs, [n = inputs.size()](BackwardContext<T>& ctx) {
    const T* g = ctx.grad_output().ptr();
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t len = ctx.input(i).size();
      if (auto* gi = ctx.input_grad(i))
        for (std::size_t j = 0; j < len; ++j) (*gi)[j] += g[j];
      g += len;
    }
  });
}

template <typename T>
Var<T> slice_channels(Var<T> input, std::size_t begin, std::size_t count) {
  const Shape& s = input.shape();
  require_rank(s, 3, "slice_channels", "input");
  require(count > 0 && begin + count <= s[0], "slice_channels: range out of bounds for " + shape_str(s));
  std::size_t plane = s[1] * s[2];
  Tensor<T> out(Shape{count, s[1], s[2]});
  const T* src = input.value().ptr() + begin * plane;
  std::copy(src, src + count * plane, out.ptr());
  return input.tape().record("slice_channels", std::move(out), {input}, [begin, plane](BackwardContext<T>& ctx) {
    auto* gin = ctx.input_grad(0);
    const auto& g = ctx.grad_output();
    T* dst = gin->ptr() + begin * plane;
    for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
  });
}

template <typename T>
std::vector<Var<T>> split_channels(Var<T> input, std::span<const std::size_t> counts) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  require(input.shape().size() == 3 && total == input.shape()[0],
          "split_channels: counts do not sum to the channel extent of " + shape_str(input.shape()));
  std::vector<Var<T>> parts;
  std::size_t begin = 0;
  for (auto c : counts) {
    parts.push_back(slice_channels(input, begin, c));
    begin += c;
  }
  return parts;
}

#define HYPERFUSE_INSTANTIATE_OPS(T)                                                 \
  template Var<T> add(Var<T>, Var<T>);                                               \
  template Var<T> mul(Var<T>, Var<T>);                                               \
  template Var<T> scale(Var<T>, double);                                             \
  template Var<T> sum(Var<T>);                                                       \
  template Var<T> matmul(Var<T>, Var<T>);                                            \
  template Var<T> transpose(Var<T>);                                                 \
  template Var<T> reshape(Var<T>, Shape);                                            \
  template Var<T> silu(Var<T>);                                                      \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int, int);                          \
  template Var<T> deform_conv2d(Var<T>, Var<T>, Var<T>, Var<T>);                     \
  template Tensor<T> bilinear_sample(const Tensor<T>&, double, double);              \
  template Var<T> bilinear_sample(Var<T>, Var<T>);                                   \
  template Var<T> resize_nearest(Var<T>, std::size_t, std::size_t);                  \
  template Var<T> concat_channels(std::span<const Var<T>>);                          \
  template Var<T> slice_channels(Var<T>, std::size_t, std::size_t);                  \
  template std::vector<Var<T>> split_channels(Var<T>, std::span<const std::size_t>);

HYPERFUSE_INSTANTIATE_OPS(float)
HYPERFUSE_INSTANTIATE_OPS(double)

}  // namespace hyperfuse
