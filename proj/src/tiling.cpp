#include <algorithm>

#include "hyperfuse/data.hpp"
#include "hyperfuse/head.hpp"

namespace hyperfuse {

std::vector<std::size_t> tile_offsets(std::size_t extent, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw DataError("tile_offsets: window and stride must be positive");
  if (stride > window)
    throw DataError("tile_offsets: stride " + std::to_string(stride) + " above window " + std::to_string(window) +
                    " would leave gaps");
  if (window > extent)
    throw DataError("tile_offsets: window " + std::to_string(window) + " exceeds image extent " + std::to_string(extent));
  std::vector<std::size_t> out;
  for (std::size_t p = 0;; p += stride) {
    if (p + window >= extent) {
      out.push_back(extent - window);
      break;
    }
    out.push_back(p);
  }
  return out;
}

std::vector<Tile> tile_image(const AnnotatedImage& img, std::size_t window, std::size_t stride) {
  const std::size_t h = img.image.dim(1), w = img.image.dim(2);
  const auto xs = tile_offsets(w, window, stride);
  const auto ys = tile_offsets(h, window, stride);
  std::vector<Tile> out;
  for (std::size_t oy : ys) {
    for (std::size_t ox : xs) {
      Tile t;
      t.x = ox;
      t.y = oy;
      t.patch.image = Tensor<float>(Shape{3, window, window});
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < window; ++y)
          std::copy_n(&img.image.at(c, oy + y, ox), window, &t.patch.image.at(c, y, 0));
      const double x0 = static_cast<double>(ox), y0 = static_cast<double>(oy), win = static_cast<double>(window);
      for (const GroundTruthBox& g : img.gts) {
        const double cx = g.box.cx() - x0, cy = g.box.cy() - y0;
        if (cx < 0 || cx >= win || cy < 0 || cy >= win) continue;
        Box b{std::max(0.0, g.box.x1 - x0), std::max(0.0, g.box.y1 - y0), std::min(win, g.box.x2 - x0),
              std::min(win, g.box.y2 - y0)};
        t.patch.gts.push_back({g.class_id, b});
      }
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<Detection> stitch_detections(const std::vector<TileDetections>& per_tile, double nms_iou) {
  std::vector<Detection> pooled;
  for (const auto& t : per_tile) {
    const double dx = static_cast<double>(t.x), dy = static_cast<double>(t.y);
    for (Detection d : t.detections) {
      d.box = {d.box.x1 + dx, d.box.y1 + dy, d.box.x2 + dx, d.box.y2 + dy};
      pooled.push_back(d);
    }
  }
  return nms(pooled, nms_iou);
}

}  // namespace hyperfuse
