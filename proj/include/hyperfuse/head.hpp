#pragma once

#include <array>
#include <vector>

#include "hyperfuse/box.hpp"
#include "hyperfuse/params.hpp"
#include "hyperfuse/tape.hpp"

namespace hyperfuse {

struct HeadConfig {
  std::size_t num_classes = 2;
  double score_thresh = 0.25;
  double nms_iou = 0.5;
  double w_obj = 1.0;
  double w_cls = 0.5;
  double w_box = 2.0;
  // sqrt(area) routing: < small -> stride 8, < medium -> stride 16, else 32.
  double route_small = 64.0;
  double route_medium = 160.0;
};

inline constexpr std::array<std::size_t, 3> kHeadStrides{8, 16, 32};

template <typename T>
struct HeadLevel {
  Var<T> obj;  // [1,H,W]
  Var<T> cls;  // [K,H,W]
  Var<T> box;  // [4,H,W] log-distances l,t,r,b in pixels
  std::size_t stride = 0;
};

template <typename T>
struct HeadOutput {
  std::array<HeadLevel<T>, 3> levels;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
};

template <typename T>
void init_head(ModelParams<T>& params, std::size_t width, const HeadConfig& cfg, Rng& rng);

template <typename T>
HeadOutput<T> head_forward(const std::array<Var<T>, 3>& n, const ParamBinding<T>& p, const HeadConfig& cfg);

struct LevelTargets {
  std::size_t stride = 0;
  std::size_t height = 0, width = 0;
  // Index into Targets::gts of the GT owning each cell, -1 for background.
  std::vector<int> owner;
};

struct Targets {
  std::vector<GroundTruthBox> gts;
  std::array<LevelTargets, 3> levels;
  std::size_t dropped = 0;
  std::size_t num_positive() const;
};

std::size_t route_level(const Box& box, const HeadConfig& cfg);

Targets assign_targets(const std::vector<GroundTruthBox>& gts, std::size_t image_height, std::size_t image_width,
                       const HeadConfig& cfg);

struct LossBreakdown {
  double total = 0, obj = 0, cls = 0, box = 0;
  std::size_t positives = 0;
};

// Scalar [1] loss on the tape of pred; components are weighted and
// normalized like the total.
template <typename T>
Var<T> detection_loss(const HeadOutput<T>& pred, const Targets& targets, const HeadConfig& cfg,
                      LossBreakdown* breakdown = nullptr);

// Score = sigmoid(obj) * max_k sigmoid(cls_k); cells kept iff score > threshold.
template <typename T>
std::vector<Detection> decode_boxes(const HeadOutput<T>& pred, double score_threshold);

// Class-wise greedy suppression of IoU > threshold; output sorted by
// descending score, ties by input index.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

}  // namespace hyperfuse
