#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperfuse/box.hpp"

namespace hyperfuse {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MatchResult {
  std::vector<bool> tp;          // per detection, in input order
  std::vector<bool> gt_matched;  // per GT
};

// Single image, single class. Detections are visited by descending score
// (ties by index) and take the unmatched GT of highest IoU >= iou_t.
MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts, double iou_t);

struct ScoredFlag {
  double score = 0;
  bool tp = false;
};

// 101-point interpolated AP. Flags are stably sorted by descending score, so
// equal scores keep their pooled order. Returns 0 when n_gt == 0.
double average_precision(std::vector<ScoredFlag> flags, std::size_t n_gt);

// IoU thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_iou_thresholds();

struct ClassResult {
  int class_id = 0;
  std::size_t n_gt = 0;
  double ap = 0, ap50 = 0, ar = 0;
};

struct EvalResult {
  double ap = 0, ap50 = 0, ar = 0;
  std::vector<ClassResult> per_class;  // classes with at least one GT
};

struct EvalOptions {
  std::size_t num_classes = 2;
  std::size_t max_dets = 100;  // per image, across classes, by score
};

using ImagePredictions = std::map<std::string, std::vector<Detection>>;
using ImageGroundTruth = std::map<std::string, std::vector<GroundTruthBox>>;

EvalResult evaluate(const ImagePredictions& predictions, const ImageGroundTruth& gts, const EvalOptions& opt);

std::string eval_to_json(const EvalResult& r);
std::string eval_table(const EvalResult& r);

}  // namespace hyperfuse
