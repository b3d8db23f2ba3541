#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hyperfuse/adam.hpp"
#include "hyperfuse/data.hpp"
#include "hyperfuse/eval.hpp"
#include "hyperfuse/model.hpp"

namespace hyperfuse {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 4;
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup = 100;
  bool cosine = true;
  double grad_clip = 10.0;  // global L2 norm, 0 disables
  bool flip = true;
  std::size_t log_every = 50;
  std::size_t eval_every = 0;  // 0: only at the end
  std::size_t threads = 1;     // per-image workers inside a batch
  std::uint64_t seed = 0;
};

struct TrainLogEntry {
  std::size_t step = 0;
  double lr = 0;
  LossBreakdown loss;
  double val_ap50 = -1;  // < 0 when not evaluated at this step
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<TrainLogEntry> log;
};

using TrainObserver = std::function<void(const TrainLogEntry&)>;

// Deterministic for a fixed (model, train config, data): batch gradients are
// reduced in image order regardless of thread count.
TrainResult train_model(const ModelConfig& model, const TrainConfig& cfg, const std::vector<AnnotatedImage>& train,
                        const std::vector<AnnotatedImage>& val, const TrainObserver& observer = {});

double learning_rate_at(const TrainConfig& cfg, std::size_t step);

// Decoded, NMS-filtered detections for one window-sized image, or for a
// larger image tiled with window/stride and stitched.
std::vector<Detection> predict(const ModelParams<float>& params, const ModelConfig& model, const Tensor<float>& image,
                               double score_thresh);
std::vector<Detection> predict_tiled(const ModelParams<float>& params, const ModelConfig& model,
                                     const Tensor<float>& image, double score_thresh, std::size_t window,
                                     std::size_t stride);

EvalResult evaluate_model(const ModelParams<float>& params, const ModelConfig& model,
                          const std::vector<AnnotatedImage>& images, double score_thresh, std::size_t threads = 1);

}  // namespace hyperfuse
