#pragma once

#include <algorithm>

namespace hyperfuse {

// Axis-aligned pixel box, x1 < x2 and y1 < y2 when valid.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x1 < x2 && y1 < y2; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline double iou(const Box& a, const Box& b) {
  double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

struct GroundTruthBox {
  int class_id = 0;
  Box box;
  friend bool operator==(const GroundTruthBox&, const GroundTruthBox&) = default;
};

struct Detection {
  int class_id = 0;
  double score = 0;
  Box box;
  friend bool operator==(const Detection&, const Detection&) = default;
};

}  // namespace hyperfuse
