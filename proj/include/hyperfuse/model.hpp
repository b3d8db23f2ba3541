#pragma once

#include <optional>

#include "hyperfuse/backbone.hpp"
#include "hyperfuse/fusion.hpp"
#include "hyperfuse/head.hpp"

namespace hyperfuse {

struct ModelConfig {
  BackboneConfig backbone;
  FusionConfig fusion;
  HeadConfig head;
};

template <typename T>
struct ModelOutput {
  FeaturePyramid<T> pyramid;
  std::optional<MixedFeature<T>> mixed;
  std::optional<HyperFeature<T>> hyper;
  std::array<Var<T>, 3> necks;
  HeadOutput<T> head;
};

template <typename T>
ModelParams<T> init_model(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
ModelOutput<T> model_forward(Var<T> image, const ParamBinding<T>& p, const ModelConfig& cfg);

}  // namespace hyperfuse
