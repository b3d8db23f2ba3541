#include "hyperfuse/head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hyperfuse/ops.hpp"
#include "layer_util.hpp"

namespace hyperfuse {

namespace {

constexpr double kLogClamp = 10.0;

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// Numerically stable binary cross-entropy on a logit.
double bce_logit(double z, double y) { return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))); }

double clamp_log(double v) { return std::clamp(v, -kLogClamp, kLogClamp); }

struct CellGeometry {
  double cx, cy;
};

CellGeometry cell_center(std::size_t stride, std::size_t i, std::size_t j) {
  const double s = static_cast<double>(stride);
  return {s * (static_cast<double>(j) + 0.5), s * (static_cast<double>(i) + 0.5)};
}

}  // namespace

std::size_t Targets::num_positive() const {
  std::size_t n = 0;
  for (const auto& l : levels)
    for (int o : l.owner) n += o >= 0;
  return n;
}

template <typename T>
void init_head(ModelParams<T>& params, std::size_t width, const HeadConfig& cfg, Rng& rng) {
  if (cfg.num_classes == 0) throw ParameterError("head.num_classes must be >= 1");
  add_conv(params, "head.obj", width, 1, 1, rng);
  add_conv(params, "head.cls", width, cfg.num_classes, 1, rng);
  add_conv(params, "head.box", width, 4, 1, rng);
}

template <typename T>
HeadOutput<T> head_forward(const std::array<Var<T>, 3>& n, const ParamBinding<T>& p, const HeadConfig& cfg) {
  HeadOutput<T> out;
  const Shape& first = n[0].shape();
  if (first.size() != 3) throw ShapeError("head_forward: expected [C,H,W] levels, got " + shape_str(first));
  out.image_height = first[1] * kHeadStrides[0];
  out.image_width = first[2] * kHeadStrides[0];
  for (std::size_t l = 0; l < 3; ++l) {
    const Shape& s = n[l].shape();
    if (s.size() != 3 || s[0] != first[0] || s[1] * kHeadStrides[l] != out.image_height ||
        s[2] * kHeadStrides[l] != out.image_width)
      throw ShapeError("head_forward: level " + std::to_string(l) + " has shape " + shape_str(s));
    HeadLevel<T>& lv = out.levels[l];
    lv.obj = detail::conv(n[l], p, "head.obj");
    lv.cls = detail::conv(n[l], p, "head.cls");
    lv.box = detail::conv(n[l], p, "head.box");
    lv.stride = kHeadStrides[l];
    if (lv.cls.shape()[0] != cfg.num_classes)
      throw ShapeError("head_forward: head.cls has " + std::to_string(lv.cls.shape()[0]) + " classes, config says " +
                       std::to_string(cfg.num_classes));
  }
  return out;
}

std::size_t route_level(const Box& box, const HeadConfig& cfg) {
  const double r = std::sqrt(box.area());
  if (r < cfg.route_small) return 0;
  if (r < cfg.route_medium) return 1;
  return 2;
}

Targets assign_targets(const std::vector<GroundTruthBox>& gts, std::size_t image_height, std::size_t image_width,
                       const HeadConfig& cfg) {
  Targets t;
  t.gts = gts;
  for (std::size_t l = 0; l < 3; ++l) {
    LevelTargets& lv = t.levels[l];
    lv.stride = kHeadStrides[l];
    lv.height = image_height / lv.stride;
    lv.width = image_width / lv.stride;
    lv.owner.assign(lv.height * lv.width, -1);
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const Box& b = gts[g].box;
    if (!b.valid()) throw ParameterError("assign_targets: degenerate ground-truth box " + std::to_string(g));
    if (gts[g].class_id < 0 || static_cast<std::size_t>(gts[g].class_id) >= cfg.num_classes)
      throw ParameterError("assign_targets: class id " + std::to_string(gts[g].class_id) + " out of range");
    LevelTargets& lv = t.levels[route_level(b, cfg)];
    if (lv.height == 0 || lv.width == 0) {
      ++t.dropped;
      continue;
    }
    const double s = static_cast<double>(lv.stride);
    const auto col = std::min<std::size_t>(static_cast<std::size_t>(std::max(0.0, std::floor(b.cx() / s))), lv.width - 1);
    const auto row = std::min<std::size_t>(static_cast<std::size_t>(std::max(0.0, std::floor(b.cy() / s))), lv.height - 1);
    int& owner = lv.owner[row * lv.width + col];
    if (owner < 0) {
      owner = static_cast<int>(g);
    } else {
      if (b.area() < gts[owner].box.area()) owner = static_cast<int>(g);
      ++t.dropped;
    }
  }
  return t;
}

template <typename T>
Var<T> detection_loss(const HeadOutput<T>& pred, const Targets& targets, const HeadConfig& cfg,
                      LossBreakdown* breakdown) {
  std::vector<Var<T>> inputs;
  for (const auto& lv : pred.levels) {
    inputs.push_back(lv.obj);
    inputs.push_back(lv.cls);
    inputs.push_back(lv.box);
  }
  const std::size_t k = cfg.num_classes;
  for (std::size_t l = 0; l < 3; ++l) {
    const Shape& s = pred.levels[l].obj.shape();
    const LevelTargets& tl = targets.levels[l];
    if (s[1] != tl.height || s[2] != tl.width || pred.levels[l].cls.shape()[0] != k)
      throw ShapeError("detection_loss: level " + std::to_string(l) + " prediction " + shape_str(s) +
                       " does not match targets");
  }
  const std::size_t npos = targets.num_positive();
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, npos));

  LossBreakdown b;
  b.positives = npos;
  for (std::size_t l = 0; l < 3; ++l) {
    const HeadLevel<T>& lv = pred.levels[l];
    const LevelTargets& tl = targets.levels[l];
    const std::size_t cells = tl.height * tl.width;
    const auto obj = lv.obj.value().data();
    const auto cls = lv.cls.value().data();
    const auto box = lv.box.value().data();
    for (std::size_t c = 0; c < cells; ++c) {
      const int g = tl.owner[c];
      b.obj += bce_logit(obj[c], g >= 0 ? 1.0 : 0.0);
      if (g < 0) continue;
      const GroundTruthBox& gt = targets.gts[g];
      for (std::size_t q = 0; q < k; ++q)
        b.cls += bce_logit(cls[q * cells + c], static_cast<int>(q) == gt.class_id ? 1.0 : 0.0);
      const auto [cx, cy] = cell_center(tl.stride, c / tl.width, c % tl.width);
      const double dl = std::exp(clamp_log(box[c])), dt = std::exp(clamp_log(box[cells + c]));
      const double dr = std::exp(clamp_log(box[2 * cells + c])), db = std::exp(clamp_log(box[3 * cells + c]));
      b.box += 1.0 - iou(Box{cx - dl, cy - dt, cx + dr, cy + db}, gt.box);
    }
  }
  b.obj *= cfg.w_obj * norm;
  b.cls *= cfg.w_cls * norm;
  b.box *= cfg.w_box * norm;
  b.total = b.obj + b.cls + b.box;
  if (breakdown) *breakdown = b;

  Tape<T>& tape = pred.levels[0].obj.tape();
  return tape.record(
      "detection_loss", Tensor<T>::scalar(static_cast<T>(b.total)), std::span<const Var<T>>(inputs),
      [targets, cfg, norm, k](BackwardContext<T>& ctx) {
        const double go = ctx.grad_output()[0];
        for (std::size_t l = 0; l < 3; ++l) {
          const LevelTargets& tl = targets.levels[l];
          const std::size_t cells = tl.height * tl.width;
          const auto obj = ctx.input(3 * l).data();
          const auto cls = ctx.input(3 * l + 1).data();
          const auto box = ctx.input(3 * l + 2).data();
          Tensor<T>* g_obj = ctx.input_grad(3 * l);
          Tensor<T>* g_cls = ctx.input_grad(3 * l + 1);
          Tensor<T>* g_box = ctx.input_grad(3 * l + 2);
          for (std::size_t c = 0; c < cells; ++c) {
            const int g = tl.owner[c];
            if (g_obj) (*g_obj)[c] += static_cast<T>(go * cfg.w_obj * norm * (sigmoid(obj[c]) - (g >= 0 ? 1.0 : 0.0)));
            if (g < 0) continue;
            const GroundTruthBox& gt = targets.gts[g];
            if (g_cls) {
              for (std::size_t q = 0; q < k; ++q) {
                const double y = static_cast<int>(q) == gt.class_id ? 1.0 : 0.0;
                (*g_cls)[q * cells + c] += static_cast<T>(go * cfg.w_cls * norm * (sigmoid(cls[q * cells + c]) - y));
              }
            }
            if (!g_box) continue;
            const auto [cx, cy] = cell_center(tl.stride, c / tl.width, c % tl.width);
            double raw[4], d[4];
            for (int e = 0; e < 4; ++e) {
              raw[e] = box[e * cells + c];
              d[e] = std::exp(clamp_log(raw[e]));
            }
            const Box pb{cx - d[0], cy - d[1], cx + d[2], cy + d[3]};
            const Box& gb = gt.box;
            const double iw = std::min(pb.x2, gb.x2) - std::max(pb.x1, gb.x1);
            const double ih = std::min(pb.y2, gb.y2) - std::max(pb.y1, gb.y1);
            if (iw <= 0 || ih <= 0) continue;
            const double inter = iw * ih;
            const double parea = (d[0] + d[2]) * (d[1] + d[3]);
            const double uni = parea + gb.area() - inter;
            const double d_inter = (parea + gb.area()) / (uni * uni);
            const double d_parea = -inter / (uni * uni);
            // d(iw)/d(distance) is 1 where the predicted edge is the binding one.
            const double diw[2] = {pb.x1 > gb.x1 ? 1.0 : 0.0, pb.x2 < gb.x2 ? 1.0 : 0.0};
            const double dih[2] = {pb.y1 > gb.y1 ? 1.0 : 0.0, pb.y2 < gb.y2 ? 1.0 : 0.0};
            double dd[4];
            dd[0] = d_inter * ih * diw[0] + d_parea * (d[1] + d[3]);
            dd[2] = d_inter * ih * diw[1] + d_parea * (d[1] + d[3]);
            dd[1] = d_inter * iw * dih[0] + d_parea * (d[0] + d[2]);
            dd[3] = d_inter * iw * dih[1] + d_parea * (d[0] + d[2]);
            for (int e = 0; e < 4; ++e) {
              if (raw[e] < -kLogClamp || raw[e] > kLogClamp) continue;
              (*g_box)[e * cells + c] += static_cast<T>(-go * cfg.w_box * norm * dd[e] * d[e]);
            }
          }
        }
      });
}

template <typename T>
std::vector<Detection> decode_boxes(const HeadOutput<T>& pred, double score_threshold) {
  std::vector<Detection> out;
  const double w = static_cast<double>(pred.image_width), h = static_cast<double>(pred.image_height);
  for (const HeadLevel<T>& lv : pred.levels) {
    const Shape& s = lv.obj.shape();
    const std::size_t hh = s[1], ww = s[2], cells = hh * ww;
    const std::size_t k = lv.cls.shape()[0];
    const auto obj = lv.obj.value().data();
    const auto cls = lv.cls.value().data();
    const auto box = lv.box.value().data();
    for (std::size_t c = 0; c < cells; ++c) {
      std::size_t best = 0;
      double best_p = -1;
      for (std::size_t q = 0; q < k; ++q) {
        const double pq = sigmoid(cls[q * cells + c]);
        if (pq > best_p) {
          best_p = pq;
          best = q;
        }
      }
      const double score = sigmoid(obj[c]) * best_p;
      if (!(score > score_threshold)) continue;
      const auto [cx, cy] = cell_center(lv.stride, c / ww, c % ww);
      Box b{cx - std::exp(clamp_log(box[c])), cy - std::exp(clamp_log(box[cells + c])),
            cx + std::exp(clamp_log(box[2 * cells + c])), cy + std::exp(clamp_log(box[3 * cells + c]))};
      b.x1 = std::clamp(b.x1, 0.0, w);
      b.x2 = std::clamp(b.x2, 0.0, w);
      b.y1 = std::clamp(b.y1, 0.0, h);
      b.y2 = std::clamp(b.y2, 0.0, h);
      if (!b.valid()) continue;
      out.push_back({static_cast<int>(best), score, b});
    }
  }
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool suppressed = false;
    for (std::size_t j : kept) {
      if (dets[j].class_id == dets[i].class_id && iou(dets[j].box, dets[i].box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(i);
  }
  std::vector<Detection> out;
  out.reserve(kept.size());
  for (std::size_t i : kept) out.push_back(dets[i]);
  return out;
}

#define HYPERFUSE_INSTANTIATE_HEAD(T)                                                                 \
  template void init_head(ModelParams<T>&, std::size_t, const HeadConfig&, Rng&);                     \
  template HeadOutput<T> head_forward(const std::array<Var<T>, 3>&, const ParamBinding<T>&,           \
                                      const HeadConfig&);                                             \
  template Var<T> detection_loss(const HeadOutput<T>&, const Targets&, const HeadConfig&, LossBreakdown*); \
  template std::vector<Detection> decode_boxes(const HeadOutput<T>&, double);

HYPERFUSE_INSTANTIATE_HEAD(float)
HYPERFUSE_INSTANTIATE_HEAD(double)

}  // namespace hyperfuse
