#pragma once

#include <array>
#include <optional>

#include "hyperfuse/backbone.hpp"
#include "hyperfuse/hypergraph.hpp"
#include "hyperfuse/params.hpp"

namespace hyperfuse {

enum class LevelFusion { Concat, Sum };

struct FusionConfig {
  // false: no mixed feature, no hypergraph; N1..N3 come from the plain
  // bottom-up pathway over B3..B5.
  bool enabled = true;
  std::size_t grid_stride = 16;
  double lambda_quantile = 0.1;
  std::size_t lambda_pairs = 512;
  std::uint64_t lambda_seed = 0x5eed;
  // Append normalized (x, y) grid coordinates to the vectors used for
  // hyperedge distances (not to the convolved features).
  bool append_coords = false;
  double coord_scale = 1.0;
  std::size_t head_width = 64;
  LevelFusion level_fusion = LevelFusion::Concat;
};

// All five pyramid levels resized to one grid and stacked along channels.
template <typename T>
struct MixedFeature {
  Var<T> grid;  // [sum C_i, Hg, Wg]
  std::size_t grid_stride = 0;
  std::size_t num_vertices() const { return grid.shape()[1] * grid.shape()[2]; }
};

template <typename T>
struct HyperFeature {
  Var<T> grid;  // same shape as the mixed feature
  double lambda = 0;
  Hypergraph hypergraph;
};

template <typename T>
MixedFeature<T> assemble_mixed_feature(const FeaturePyramid<T>& pyr, std::size_t grid_stride);

// [C,Hg,Wg] <-> [Hg*Wg, C] vertex-feature views.
template <typename T>
Var<T> grid_to_vertices(Var<T> grid);
template <typename T>
Var<T> vertices_to_grid(Var<T> vertices, std::size_t height, std::size_t width);

// Vectors handed to hyperedge construction (detached copies).
template <typename T>
Tensor<T> distance_features(const MixedFeature<T>& xm, const FusionConfig& cfg);

// X_hyper = HyperConv(X_m, H) with H from the data-adaptive lambda.
template <typename T>
HyperFeature<T> apply_hypergraph_fusion(const MixedFeature<T>& xm, const FusionConfig& cfg, Var<T> theta);

template <typename T>
void init_fusion(ModelParams<T>& params, const BackboneConfig& backbone, const FusionConfig& cfg, Rng& rng);

// N1..N3 at strides 8, 16, 32. hyper is ignored (and may be empty) when
// fusion is disabled.
template <typename T>
std::array<Var<T>, 3> bottom_up_fuse(const HyperFeature<T>* hyper, const FeaturePyramid<T>& pyr,
                                     const ParamBinding<T>& p, const FusionConfig& cfg);

}  // namespace hyperfuse
