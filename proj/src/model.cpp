#include "hyperfuse/model.hpp"

namespace hyperfuse {

template <typename T>
ModelParams<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams<T> params;
  Rng rng(seed);
  init_backbone(params, cfg.backbone, rng);
  init_fusion(params, cfg.backbone, cfg.fusion, rng);
  init_head(params, cfg.fusion.head_width, cfg.head, rng);
  return params;
}

template <typename T>
ModelOutput<T> model_forward(Var<T> image, const ParamBinding<T>& p, const ModelConfig& cfg) {
  ModelOutput<T> out;
  out.pyramid = backbone_forward(image, p, cfg.backbone);
  if (cfg.fusion.enabled) {
    out.mixed = assemble_mixed_feature(out.pyramid, cfg.fusion.grid_stride);
    out.hyper = apply_hypergraph_fusion(*out.mixed, cfg.fusion, p("fusion.theta"));
  }
  out.necks = bottom_up_fuse(out.hyper ? &*out.hyper : nullptr, out.pyramid, p, cfg.fusion);
  out.head = head_forward(out.necks, p, cfg.head);
  return out;
}

template ModelParams<float> init_model(const ModelConfig&, std::uint64_t);
template ModelParams<double> init_model(const ModelConfig&, std::uint64_t);
template ModelOutput<float> model_forward(Var<float>, const ParamBinding<float>&, const ModelConfig&);
template ModelOutput<double> model_forward(Var<double>, const ParamBinding<double>&, const ModelConfig&);

}  // namespace hyperfuse
