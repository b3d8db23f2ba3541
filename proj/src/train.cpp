#include "hyperfuse/train.hpp"

#include <cmath>
#include <numbers>
#include <thread>

#include "hyperfuse/ops.hpp"

namespace hyperfuse {

namespace {

struct ImageGrad {
  ModelParams<float> grads;
  LossBreakdown loss;
};

ImageGrad image_gradient(const ModelParams<float>& params, const ModelConfig& model, const AnnotatedImage& img) {
  Tape<float> tape;
  ParamBinding<float> p(tape, params);
  auto out = model_forward(tape.leaf(img.image), p, model);
  auto targets = assign_targets(img.gts, img.image.dim(1), img.image.dim(2), model.head);
  ImageGrad g;
  auto loss = detection_loss(out.head, targets, model.head, &g.loss);
  tape.backward(loss);
  g.grads = p.grads();
  return g;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; results land in
// index order so the caller's reduction is deterministic.
template <typename R, typename F>
std::vector<R> parallel_map(std::size_t n, std::size_t threads, F fn) {
  std::vector<R> out(n);
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) out[i] = fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace

double learning_rate_at(const TrainConfig& cfg, std::size_t step) {
  if (cfg.warmup > 0 && step <= cfg.warmup) return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup);
  if (!cfg.cosine || cfg.steps <= cfg.warmup) return cfg.lr;
  const double t = static_cast<double>(step - cfg.warmup) / static_cast<double>(cfg.steps - cfg.warmup);
  return cfg.lr * (0.05 + 0.95 * 0.5 * (1 + std::cos(std::numbers::pi * t)));
}

TrainResult train_model(const ModelConfig& model, const TrainConfig& cfg, const std::vector<AnnotatedImage>& train,
                        const std::vector<AnnotatedImage>& val, const TrainObserver& observer) {
  if (cfg.batch == 0) throw ParameterError("train.batch must be >= 1");
  TrainResult res;
  res.params = init_model<float>(model, cfg.seed);
  if (cfg.steps == 0) return res;
  if (train.empty()) throw ParameterError("training set is empty");

  Rng rng(cfg.seed ^ 0xda7a5eedull);
  std::vector<std::size_t> order(train.size());
  std::size_t cursor = order.size();
  AdamState<float> adam;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    // Epoch-wise shuffled sampling with per-sample flip choices.
    std::vector<AnnotatedImage> batch;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        cursor = 0;
      }
      const AnnotatedImage& src = train[order[cursor++]];
      const std::uint64_t f = rng.below(4);
      batch.push_back(cfg.flip && f ? flip_image(src, f & 1, f & 2) : AnnotatedImage{src.image, src.gts, {}});
    }

    auto per_image = parallel_map<ImageGrad>(batch.size(), cfg.threads,
                                             [&](std::size_t i) { return image_gradient(res.params, model, batch[i]); });
    ModelParams<float> grads = std::move(per_image[0].grads);
    LossBreakdown mean = per_image[0].loss;
    for (std::size_t i = 1; i < per_image.size(); ++i) {
      for (auto& [name, g] : grads) {
        const auto& o = per_image[i].grads.at(name);
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += o[k];
      }
      mean.total += per_image[i].loss.total;
      mean.obj += per_image[i].loss.obj;
      mean.cls += per_image[i].loss.cls;
      mean.box += per_image[i].loss.box;
      mean.positives += per_image[i].loss.positives;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    double norm2 = 0;
    for (auto& [name, g] : grads)
      for (float& v : g.storage()) {
        v = static_cast<float>(v * inv);
        norm2 += static_cast<double>(v) * v;
      }
    if (cfg.grad_clip > 0 && std::sqrt(norm2) > cfg.grad_clip) {
      const double s = cfg.grad_clip / std::sqrt(norm2);
      for (auto& [name, g] : grads)
        for (float& v : g.storage()) v = static_cast<float>(v * s);
    }
    mean.total *= inv;
    mean.obj *= inv;
    mean.cls *= inv;
    mean.box *= inv;

    AdamConfig ac{learning_rate_at(cfg, step), cfg.beta1, cfg.beta2, cfg.eps};
    adam_step(res.params, grads, adam, ac, static_cast<int>(step));

    const bool log_now = step == 1 || step == cfg.steps || (cfg.log_every && step % cfg.log_every == 0);
    const bool eval_now = !val.empty() && (step == cfg.steps || (cfg.eval_every && step % cfg.eval_every == 0));
    if (log_now || eval_now) {
      TrainLogEntry e{step, ac.lr, mean, -1};
      if (eval_now) e.val_ap50 = evaluate_model(res.params, model, val, 0.01, cfg.threads).ap50;
      res.log.push_back(e);
      if (observer) observer(e);
    }
  }
  return res;
}

std::vector<Detection> predict(const ModelParams<float>& params, const ModelConfig& model, const Tensor<float>& image,
                               double score_thresh) {
  Tape<float> tape;
  ParamBinding<float> p(tape, params, false);
  auto out = model_forward(tape.leaf(image), p, model);
  return nms(decode_boxes(out.head, score_thresh), model.head.nms_iou);
}

std::vector<Detection> predict_tiled(const ModelParams<float>& params, const ModelConfig& model,
                                     const Tensor<float>& image, double score_thresh, std::size_t window,
                                     std::size_t stride) {
  if (image.dim(1) == window && image.dim(2) == window) return predict(params, model, image, score_thresh);
  AnnotatedImage whole{image, {}, {}};
  std::vector<TileDetections> per_tile;
  for (const Tile& t : tile_image(whole, window, stride))
    per_tile.push_back({predict(params, model, t.patch.image, score_thresh), t.x, t.y});
  return stitch_detections(per_tile, model.head.nms_iou);
}

EvalResult evaluate_model(const ModelParams<float>& params, const ModelConfig& model,
                          const std::vector<AnnotatedImage>& images, double score_thresh, std::size_t threads) {
  auto dets = parallel_map<std::vector<Detection>>(
      images.size(), threads, [&](std::size_t i) { return predict(params, model, images[i].image, score_thresh); });
  ImagePredictions preds;
  ImageGroundTruth gts;
  for (std::size_t i = 0; i < images.size(); ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "%06zu", i);
    preds[id] = std::move(dets[i]);
    gts[id] = images[i].gts;
  }
  EvalOptions opt;
  opt.num_classes = model.head.num_classes;
  return evaluate(preds, gts, opt);
}

}  // namespace hyperfuse
