#include "hyperfuse/backbone.hpp"

#include "hyperfuse/ops.hpp"
#include "layer_util.hpp"

namespace hyperfuse {

using detail::conv;
using detail::conv_silu;

namespace {

// Branch outputs are summed, so each branch's last layer is scaled down to
// keep the fused activation variance near that of a single conv.
constexpr double kBranchGain = 0.577;

std::size_t split_low(std::size_t c) { return c / 2; }

}  // namespace

template <typename T>
void init_mlf_block(ModelParams<T>& params, const std::string& prefix, const MlfBlockSpec& spec, Rng& rng) {
  const std::size_t c = spec.out_channels;
  if (c < 2) throw ParameterError("mlf block needs at least 2 output channels");
  if (spec.has_entry()) add_conv(params, prefix + ".entry", spec.in_channels, c, 3, rng);
  const double gain = spec.mlf_enabled && spec.branch_fusion == BranchFusion::Sum ? kBranchGain : 1.0;
  if (spec.mlf_enabled) {
    add_conv(params, prefix + ".pointwise", c, c, 1, rng, gain);
    add_conv(params, prefix + ".deform", c, c, 3, rng, gain);
    add_zero_conv(params, prefix + ".offset", c, 18, 3);
    if (spec.branch_fusion == BranchFusion::Concat) add_conv(params, prefix + ".branch_fuse", 3 * c, c, 1, rng);
  }
  const std::size_t lo = split_low(c), hi = c - lo;
  add_conv(params, prefix + ".c3k2.cv1", hi, hi, 3, rng);
  add_conv(params, prefix + ".c3k2.cv2", hi, hi, 3, rng);
  add_conv(params, prefix + ".c3k2.fuse", c, c, 1, rng, gain);
  add_conv(params, prefix + ".compress", c, c, 1, rng);
}

template <typename T>
Var<T> mlf_block(Var<T> input, const ParamBinding<T>& p, const std::string& prefix, const MlfBlockSpec& spec) {
  if (input.shape().size() != 3 || input.shape()[0] != spec.in_channels)
    throw ShapeError("mlf_block " + prefix + ": expected " + std::to_string(spec.in_channels) + " input channels, got " +
                     shape_str(input.shape()));
  Var<T> x = spec.has_entry() ? conv_silu(input, p, prefix + ".entry", spec.downsample ? 2 : 1) : input;
  const std::size_t c = spec.out_channels;

  // C3K2-style: split, two-conv bottleneck with shortcut on one half, concat, 1x1 fuse.
  const std::size_t lo = split_low(c), hi = c - lo;
  Var<T> keep = slice_channels(x, 0, lo);
  Var<T> work = slice_channels(x, lo, hi);
  Var<T> bottleneck = add(work, conv_silu(conv_silu(work, p, prefix + ".c3k2.cv1"), p, prefix + ".c3k2.cv2"));
  Var<T> c3k2 = conv(concat_channels({keep, bottleneck}), p, prefix + ".c3k2.fuse");

  Var<T> fused = c3k2;
  if (spec.mlf_enabled) {
    Var<T> pointwise = conv(x, p, prefix + ".pointwise");
    Var<T> deform = spec.deformable ? deform_conv2d(x, p(prefix + ".deform.weight"), conv(x, p, prefix + ".offset"),
                                                    p(prefix + ".deform.bias"))
                                    : conv(x, p, prefix + ".deform");
    if (spec.branch_fusion == BranchFusion::Sum) {
      fused = add(add(pointwise, deform), c3k2);
    } else {
      fused = conv(concat_channels({pointwise, deform, c3k2}), p, prefix + ".branch_fuse");
    }
  }
  return conv(silu(fused), p, prefix + ".compress");
}

MlfBlockSpec backbone_stage_spec(const BackboneConfig& cfg, std::size_t stage) {
  MlfBlockSpec spec;
  spec.in_channels = stage == 0 ? cfg.channels[0] : cfg.channels[stage - 1];
  spec.out_channels = cfg.channels[stage];
  // The stride-2 stem already produces B1's resolution.
  spec.downsample = stage > 0;
  spec.mlf_enabled = cfg.mlf_enabled;
  spec.branch_fusion = cfg.branch_fusion;
  spec.deformable = cfg.deformable;
  return spec;
}

template <typename T>
void init_backbone(ModelParams<T>& params, const BackboneConfig& cfg, Rng& rng) {
  add_conv(params, "backbone.stem", cfg.in_channels, cfg.channels[0], 3, rng);
  for (std::size_t s = 0; s < 5; ++s)
    init_mlf_block(params, "backbone.stage" + std::to_string(s + 1), backbone_stage_spec(cfg, s), rng);
}

template <typename T>
FeaturePyramid<T> backbone_forward(Var<T> image, const ParamBinding<T>& p, const BackboneConfig& cfg) {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != cfg.in_channels)
    throw ShapeError("backbone_forward: expected [" + std::to_string(cfg.in_channels) + ",H,W], got " + shape_str(s));
  if (s[1] % 32 != 0 || s[2] % 32 != 0)
    throw ContractError("backbone_forward: image extents must be multiples of 32, got " + shape_str(s));
  FeaturePyramid<T> pyr;
  Var<T> x = conv_silu(image, p, "backbone.stem", 2);
  for (std::size_t st = 0; st < 5; ++st) {
    x = mlf_block(x, p, "backbone.stage" + std::to_string(st + 1), backbone_stage_spec(cfg, st));
    pyr.levels[st] = x;
  }
  return pyr;
}

template void init_mlf_block(ModelParams<float>&, const std::string&, const MlfBlockSpec&, Rng&);
template void init_mlf_block(ModelParams<double>&, const std::string&, const MlfBlockSpec&, Rng&);
template Var<float> mlf_block(Var<float>, const ParamBinding<float>&, const std::string&, const MlfBlockSpec&);
template Var<double> mlf_block(Var<double>, const ParamBinding<double>&, const std::string&, const MlfBlockSpec&);
template void init_backbone(ModelParams<float>&, const BackboneConfig&, Rng&);
template void init_backbone(ModelParams<double>&, const BackboneConfig&, Rng&);
template FeaturePyramid<float> backbone_forward(Var<float>, const ParamBinding<float>&, const BackboneConfig&);
template FeaturePyramid<double> backbone_forward(Var<double>, const ParamBinding<double>&, const BackboneConfig&);

}  // namespace hyperfuse
