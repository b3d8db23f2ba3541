#include "hyperfuse/fusion.hpp"

#include <cmath>

#include "hyperfuse/ops.hpp"
#include "layer_util.hpp"

namespace hyperfuse {

using detail::conv;
using detail::conv_silu;

namespace {

std::size_t mixed_channels(const BackboneConfig& b) {
  std::size_t c = 0;
  for (std::size_t v : b.channels) c += v;
  return c;
}

void check_grid_stride(std::size_t s) {
  if (s != 8 && s != 16 && s != 32) throw ParameterError("fusion.grid_stride must be 8, 16 or 32, got " + std::to_string(s));
}

std::string idx(const char* base, int i) { return std::string(base) + std::to_string(i); }

}  // namespace

template <typename T>
MixedFeature<T> assemble_mixed_feature(const FeaturePyramid<T>& pyr, std::size_t grid_stride) {
  check_grid_stride(grid_stride);
  const Shape& b1 = pyr.levels[0].shape();
  const std::size_t img_h = b1[1] * FeaturePyramid<T>::kStrides[0];
  const std::size_t img_w = b1[2] * FeaturePyramid<T>::kStrides[0];
  const std::size_t gh = img_h / grid_stride, gw = img_w / grid_stride;
  if (gh == 0 || gw == 0) throw ShapeError("assemble_mixed_feature: image smaller than the fusion grid stride");
  std::vector<Var<T>> parts;
  for (const Var<T>& level : pyr.levels) parts.push_back(resize_nearest(level, gh, gw));
  return {concat_channels(std::span<const Var<T>>(parts)), grid_stride};
}

template <typename T>
Var<T> grid_to_vertices(Var<T> grid) {
  const Shape& s = grid.shape();
  return transpose(reshape(grid, {s[0], s[1] * s[2]}));
}

template <typename T>
Var<T> vertices_to_grid(Var<T> vertices, std::size_t height, std::size_t width) {
  const Shape& s = vertices.shape();
  if (s.size() != 2 || s[0] != height * width)
    throw ShapeError("vertices_to_grid: " + shape_str(s) + " does not hold a " + std::to_string(height) + "x" +
                     std::to_string(width) + " grid");
  return reshape(transpose(vertices), {s[1], height, width});
}

template <typename T>
Tensor<T> distance_features(const MixedFeature<T>& xm, const FusionConfig& cfg) {
  const Tensor<T>& g = xm.grid.value();
  const std::size_t c = g.dim(0), h = g.dim(1), w = g.dim(2), n = h * w;
  const std::size_t extra = cfg.append_coords ? 2 : 0;
  Tensor<T> out({n, c + extra});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t v = 0; v < n; ++v) out.at(v, k) = g[k * n + v];
  if (cfg.append_coords) {
    for (std::size_t v = 0; v < n; ++v) {
      out.at(v, c) = static_cast<T>(cfg.coord_scale * (static_cast<double>(v % w) + 0.5) / static_cast<double>(w));
      out.at(v, c + 1) = static_cast<T>(cfg.coord_scale * (static_cast<double>(v / w) + 0.5) / static_cast<double>(h));
    }
  }
  return out;
}

template <typename T>
HyperFeature<T> apply_hypergraph_fusion(const MixedFeature<T>& xm, const FusionConfig& cfg, Var<T> theta) {
  Tensor<T> dist_in = distance_features(xm, cfg);
  LambdaRule rule;
  rule.quantile = cfg.lambda_quantile;
  rule.max_pairs = cfg.lambda_pairs;
  rule.seed = cfg.lambda_seed;
  HyperFeature<T> out;
  out.lambda = adaptive_lambda(dist_in, rule);
  out.hypergraph = build_hypergraph(dist_in, out.lambda);
  const Shape& s = xm.grid.shape();
  Var<T> xv = grid_to_vertices(xm.grid);
  out.grid = vertices_to_grid(hyperconv_matrix(xv, out.hypergraph, theta), s[1], s[2]);
  return out;
}

template <typename T>
void init_fusion(ModelParams<T>& params, const BackboneConfig& backbone, const FusionConfig& cfg, Rng& rng) {
  check_grid_stride(cfg.grid_stride);
  const auto& ch = backbone.channels;
  const std::size_t w = cfg.head_width;
  if (cfg.enabled) {
    const std::size_t cm = mixed_channels(backbone);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cm));
    Tensor<T> theta({cm, cm});
    for (T& v : theta.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
    params.add("fusion.theta", std::move(theta));
    for (int l = 1; l <= 3; ++l) add_conv(params, idx("fusion.proj", l), cm, w, 1, rng);
  }
  const std::size_t p = cfg.enabled ? w : 0;
  if (cfg.level_fusion == LevelFusion::Concat) {
    add_conv(params, "neck.fuse1", ch[2] + p, w, 1, rng);
    add_conv(params, "neck.fuse2", ch[3] + w + p, w, 1, rng);
    add_conv(params, "neck.fuse3", ch[4] + w + p, w, 1, rng);
  } else {
    for (int l = 1; l <= 3; ++l) add_conv(params, idx("neck.lateral", l), ch[l + 1], w, 1, rng);
  }
  add_conv(params, "neck.down1", w, w, 3, rng);
  add_conv(params, "neck.down2", w, w, 3, rng);
}

template <typename T>
std::array<Var<T>, 3> bottom_up_fuse(const HyperFeature<T>* hyper, const FeaturePyramid<T>& pyr,
                                     const ParamBinding<T>& p, const FusionConfig& cfg) {
  const bool use_hyper = cfg.enabled;
  if (use_hyper && hyper == nullptr) throw ContractError("bottom_up_fuse: fusion enabled but no hyper feature given");
  std::array<Var<T>, 3> proj{};
  if (use_hyper) {
    for (int l = 0; l < 3; ++l) {
      const Shape& target = pyr.levels[l + 2].shape();
      proj[l] = resize_nearest(conv(hyper->grid, p, idx("fusion.proj", l + 1)), target[1], target[2]);
    }
  }
  std::array<Var<T>, 3> out{};
  for (int l = 0; l < 3; ++l) {
    const Var<T>& b = pyr.levels[l + 2];
    Var<T> fused;
    if (cfg.level_fusion == LevelFusion::Concat) {
      std::vector<Var<T>> parts{b};
      if (l > 0) parts.push_back(conv_silu(out[l - 1], p, idx("neck.down", l), 2));
      if (use_hyper) parts.push_back(proj[l]);
      fused = conv(concat_channels(std::span<const Var<T>>(parts)), p, idx("neck.fuse", l + 1));
    } else {
      fused = conv(b, p, idx("neck.lateral", l + 1));
      if (l > 0) fused = add(fused, conv_silu(out[l - 1], p, idx("neck.down", l), 2));
      if (use_hyper) fused = add(fused, proj[l]);
    }
    out[l] = silu(fused);
  }
  return out;
}

#define HYPERFUSE_INSTANTIATE_FUSION(T)                                                                      \
  template MixedFeature<T> assemble_mixed_feature(const FeaturePyramid<T>&, std::size_t);                     \
  template Var<T> grid_to_vertices(Var<T>);                                                                  \
  template Var<T> vertices_to_grid(Var<T>, std::size_t, std::size_t);                                        \
  template Tensor<T> distance_features(const MixedFeature<T>&, const FusionConfig&);                         \
  template HyperFeature<T> apply_hypergraph_fusion(const MixedFeature<T>&, const FusionConfig&, Var<T>);     \
  template void init_fusion(ModelParams<T>&, const BackboneConfig&, const FusionConfig&, Rng&);              \
  template std::array<Var<T>, 3> bottom_up_fuse(const HyperFeature<T>*, const FeaturePyramid<T>&,            \
                                                const ParamBinding<T>&, const FusionConfig&);

HYPERFUSE_INSTANTIATE_FUSION(float)
HYPERFUSE_INSTANTIATE_FUSION(double)

}  // namespace hyperfuse
