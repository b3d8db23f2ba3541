#pragma once

#include <array>
#include <string>

#include "hyperfuse/params.hpp"
#include "hyperfuse/tape.hpp"

namespace hyperfuse {

enum class BranchFusion { Sum, Concat };

struct BackboneConfig {
  std::size_t in_channels = 3;
  std::array<std::size_t, 5> channels{16, 32, 64, 128, 256};
  // false: every block keeps only its C3K2-style branch (the plain baseline).
  bool mlf_enabled = true;
  BranchFusion branch_fusion = BranchFusion::Sum;
  // false: the deformable branch becomes a plain 3x3 conv over the same
  // weights (pure-conv twin).
  bool deformable = true;
};

// Layout of one multi-level fusion block. Parameters live under a name
// prefix; see init_mlf_block for the names.
struct MlfBlockSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  bool downsample = false;
  bool mlf_enabled = true;
  BranchFusion branch_fusion = BranchFusion::Sum;
  bool deformable = true;

  bool has_entry() const { return downsample || in_channels != out_channels; }
};

// B1..B5 at strides 2,4,8,16,32.
template <typename T>
struct FeaturePyramid {
  static constexpr std::array<std::size_t, 5> kStrides{2, 4, 8, 16, 32};
  std::array<Var<T>, 5> levels;
};

template <typename T>
void init_mlf_block(ModelParams<T>& params, const std::string& prefix, const MlfBlockSpec& spec, Rng& rng);

// [optional stride-2 entry conv] -> {1x1, deformable 3x3, C3K2-style}
// branches fused -> SiLU -> 1x1 compression.
template <typename T>
Var<T> mlf_block(Var<T> input, const ParamBinding<T>& p, const std::string& prefix, const MlfBlockSpec& spec);

template <typename T>
void init_backbone(ModelParams<T>& params, const BackboneConfig& cfg, Rng& rng);

// Input extents must be multiples of 32.
template <typename T>
FeaturePyramid<T> backbone_forward(Var<T> image, const ParamBinding<T>& p, const BackboneConfig& cfg);

MlfBlockSpec backbone_stage_spec(const BackboneConfig& cfg, std::size_t stage);

}  // namespace hyperfuse
