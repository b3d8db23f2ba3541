#include "hyperfuse/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "json.hpp"

namespace hyperfuse {

namespace {

std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace

MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts, double iou_t) {
  MatchResult r{std::vector<bool>(dets.size(), false), std::vector<bool>(gts.size(), false)};
  for (std::size_t d : score_order(dets)) {
    double best = -1;
    std::size_t best_g = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (r.gt_matched[g]) continue;
      const double v = iou(dets[d].box, gts[g].box);
      if (v >= iou_t && v > best) {
        best = v;
        best_g = g;
      }
    }
    if (best_g < gts.size()) {
      r.gt_matched[best_g] = true;
      r.tp[d] = true;
    }
  }
  return r;
}

double average_precision(std::vector<ScoredFlag> flags, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  std::stable_sort(flags.begin(), flags.end(), [](const ScoredFlag& a, const ScoredFlag& b) { return a.score > b.score; });
  const std::size_t n = flags.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += flags[i].tp;
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it == recall.end()) break;
    sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

EvalResult evaluate(const ImagePredictions& predictions, const ImageGroundTruth& gts, const EvalOptions& opt) {
  for (const auto& [id, _] : predictions)
    if (!gts.count(id)) throw EvalError("predictions reference unknown image id '" + id + "'");
  const auto thresholds = coco_iou_thresholds();

  // Per image: detections truncated to max_dets by score.
  std::map<std::string, std::vector<Detection>> kept;
  for (const auto& [id, dets] : predictions) {
    auto order = score_order(dets);
    if (order.size() > opt.max_dets) order.resize(opt.max_dets);
    std::sort(order.begin(), order.end());
    auto& k = kept[id];
    for (std::size_t i : order) k.push_back(dets[i]);
  }

  EvalResult res;
  for (std::size_t c = 0; c < opt.num_classes; ++c) {
    const int cls = static_cast<int>(c);
    ClassResult cr;
    cr.class_id = cls;
    std::vector<std::vector<ScoredFlag>> flags(thresholds.size());
    std::vector<std::size_t> matched(thresholds.size(), 0);
    for (const auto& [id, image_gts] : gts) {
      std::vector<GroundTruthBox> g;
      for (const auto& x : image_gts)
        if (x.class_id == cls) g.push_back(x);
      cr.n_gt += g.size();
      std::vector<Detection> d;
      if (auto it = kept.find(id); it != kept.end())
        for (const auto& x : it->second)
          if (x.class_id == cls) d.push_back(x);
      for (std::size_t t = 0; t < thresholds.size(); ++t) {
        auto m = match_detections(d, g, thresholds[t]);
        for (std::size_t i = 0; i < d.size(); ++i) flags[t].push_back({d[i].score, m.tp[i]});
        matched[t] += static_cast<std::size_t>(std::count(m.gt_matched.begin(), m.gt_matched.end(), true));
      }
    }
    if (cr.n_gt == 0) continue;
    // The mean is taken as ap50 + mean(ap_t - ap50): when every ap_t <= ap50
    // the rounded result cannot exceed ap50, unlike a plain sum / count.
    double dev_sum = 0, ar_sum = 0;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      const double ap = average_precision(flags[t], cr.n_gt);
      if (t == 0) cr.ap50 = ap;
      dev_sum += ap - cr.ap50;
      ar_sum += static_cast<double>(matched[t]) / static_cast<double>(cr.n_gt);
    }
    cr.ap = std::max(0.0, cr.ap50 + dev_sum / static_cast<double>(thresholds.size()));
    cr.ar = ar_sum / static_cast<double>(thresholds.size());
    res.per_class.push_back(cr);
  }
  if (!res.per_class.empty()) {
    for (const auto& cr : res.per_class) {
      res.ap += cr.ap;
      res.ap50 += cr.ap50;
      res.ar += cr.ar;
    }
    const double n = static_cast<double>(res.per_class.size());
    res.ap /= n;
    res.ap50 /= n;
    res.ar /= n;
  }
  return res;
}

std::string eval_to_json(const EvalResult& r) {
  nlohmann::json pc = nlohmann::json::object();
  for (const auto& c : r.per_class)
    pc[std::to_string(c.class_id)] = {{"n_gt", c.n_gt}, {"ap", c.ap}, {"ap50", c.ap50}, {"ar", c.ar}};
  return nlohmann::json{{"ap", r.ap}, {"ap50", r.ap50}, {"ar", r.ar}, {"per_class", pc}}.dump(2);
}

std::string eval_table(const EvalResult& r) {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof line, "%-8s %6s %8s %8s %8s\n", "class", "n_gt", "AP", "AP.5", "AR");
  out += line;
  for (const auto& c : r.per_class) {
    std::snprintf(line, sizeof line, "%-8d %6zu %8.4f %8.4f %8.4f\n", c.class_id, c.n_gt, c.ap, c.ap50, c.ar);
    out += line;
  }
  std::snprintf(line, sizeof line, "%-8s %6s %8.4f %8.4f %8.4f\n", "all", "", r.ap, r.ap50, r.ar);
  out += line;
  return out;
}

}  // namespace hyperfuse
