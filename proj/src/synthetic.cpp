#include <algorithm>
#include <cmath>
#include <numbers>

#include "hyperfuse/data.hpp"
#include "hyperfuse/params.hpp"

namespace hyperfuse {

namespace {

// Axis-aligned half extents of a rotated ellipse.
std::pair<double, double> ellipse_half_extents(double a, double b, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {std::sqrt(a * a * c * c + b * b * s * s), std::sqrt(a * a * s * s + b * b * c * c)};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double smoothstep01(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

struct Rgb {
  double r, g, b;
};

// Alpha-blends a soft-edged ellipse into img over its bounding region.
void paint_ellipse(Tensor<float>& img, double cx, double cy, double a, double b, double angle, Rgb color,
                   double opacity, double texture, Rng& rng) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  const auto [hx, hy] = ellipse_half_extents(a, b, angle);
  const auto x0 = static_cast<long>(std::floor(cx - hx - 1)), x1 = static_cast<long>(std::ceil(cx + hx + 1));
  const auto y0 = static_cast<long>(std::floor(cy - hy - 1)), y1 = static_cast<long>(std::ceil(cy + hy + 1));
  const double c = std::cos(angle), s = std::sin(angle);
  const double edge = 1.0 / std::min(a, b);
  for (long y = std::max(0L, y0); y <= std::min<long>(static_cast<long>(h) - 1, y1); ++y) {
    for (long x = std::max(0L, x0); x <= std::min<long>(static_cast<long>(w) - 1, x1); ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double u = (dx * c + dy * s) / a, v = (-dx * s + dy * c) / b;
      const double rho = std::sqrt(u * u + v * v);
      const double alpha = opacity * (1.0 - smoothstep01((rho - (1 - edge)) / (2 * edge)));
      if (alpha <= 0) continue;
      const double jitter = texture * (rng.uniform() - 0.5);
      const double col[3] = {color.r + jitter, color.g + jitter, color.b + jitter};
      for (std::size_t ch = 0; ch < 3; ++ch) {
        float& px = img.at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
        px = static_cast<float>((1 - alpha) * px + alpha * col[ch]);
      }
    }
  }
}

}  // namespace

double CellGeometry::nucleus_radius() const { return std::sqrt(nucleus_a * nucleus_b); }

Box CellGeometry::bounding_box() const {
  const auto [chx, chy] = ellipse_half_extents(cyto_a, cyto_b, cyto_angle);
  const auto [nhx, nhy] = ellipse_half_extents(nucleus_a, nucleus_b, nucleus_angle);
  const double ncx = cx + nucleus_dx, ncy = cy + nucleus_dy;
  return {std::min(cx - chx, ncx - nhx), std::min(cy - chy, ncy - nhy), std::max(cx + chx, ncx + nhx),
          std::max(cy + chy, ncy + nhy)};
}

std::vector<int> contextual_labels(const std::vector<CellGeometry>& cells, const AbnormalRule& rule) {
  std::vector<double> all;
  for (const auto& c : cells) all.push_back(c.nucleus_radius());
  std::vector<int> labels(cells.size(), kNormal);
  if (cells.empty()) return labels;
  const double global = median(all);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::vector<double> near;
    for (std::size_t j = 0; j < cells.size(); ++j)
      if (j != i && std::hypot(cells[i].cx - cells[j].cx, cells[i].cy - cells[j].cy) <= rule.neighbor_radius)
        near.push_back(all[j]);
    const double ref = near.empty() ? global : median(near);
    labels[i] = all[i] > rule.ratio_threshold * ref ? kAbnormal : kNormal;
  }
  return labels;
}

AnnotatedImage gen_synthetic(const SynthConfig& cfg) {
  if (cfg.base_radius_min <= 0 || cfg.base_radius_max < cfg.base_radius_min || cfg.cyto_radius_min <= 0 ||
      cfg.cyto_radius_max < cfg.cyto_radius_min)
    throw DataError("gen_synthetic: invalid radius ranges");
  const double max_half = std::max(cfg.cyto_radius_max * std::sqrt(1.25), 2.0 * cfg.base_radius_max * std::sqrt(1.18) +
                                                                               0.2 * cfg.cyto_radius_max);
  if (static_cast<double>(cfg.image_size) < 2 * max_half + 4)
    throw DataError("gen_synthetic: image_size " + std::to_string(cfg.image_size) + " is too small for a cell");

  Rng rng(cfg.seed);
  const std::size_t n = cfg.image_size;
  AnnotatedImage out;
  out.image = Tensor<float>(Shape{3, n, n});

  const double stain[3] = {rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04)};
  const Rgb bg{0.93 + stain[0], 0.89 + stain[1], 0.91 + stain[2]};
  double wave[3][4];
  for (auto& wv : wave) {
    wv[0] = rng.uniform(0.02, 0.08);
    wv[1] = rng.uniform(0.02, 0.08);
    wv[2] = rng.uniform(0, 2 * std::numbers::pi);
    wv[3] = rng.uniform(0.01, 0.025);
  }
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      double t = 0;
      for (const auto& wv : wave) t += wv[3] * std::sin(wv[0] * x + wv[1] * y + wv[2]);
      const double grain = 0.03 * (rng.uniform() - 0.5);
      out.image.at(0, y, x) = static_cast<float>(bg.r + t + grain);
      out.image.at(1, y, x) = static_cast<float>(bg.g + t + grain);
      out.image.at(2, y, x) = static_cast<float>(bg.b + t + grain);
    }

  const double base = rng.uniform(cfg.base_radius_min, cfg.base_radius_max);
  for (std::size_t i = 0; i < cfg.n_cells; ++i) {
    CellGeometry c;
    const double rc = rng.uniform(cfg.cyto_radius_min, cfg.cyto_radius_max);
    const double ec = std::sqrt(rng.uniform(0.8, 1.25));
    c.cyto_a = rc * ec;
    c.cyto_b = rc / ec;
    c.cyto_angle = rng.uniform(0, std::numbers::pi);
    c.planted = rng.uniform() < cfg.planted_fraction;
    const double rn = base * (c.planted ? rng.uniform(1.6, 2.0) : rng.uniform(0.85, 1.15));
    const double en = std::sqrt(rng.uniform(0.85, 1.18));
    c.nucleus_a = rn * en;
    c.nucleus_b = rn / en;
    c.nucleus_angle = rng.uniform(0, std::numbers::pi);
    const double off = rng.uniform(0, 0.2) * std::min(c.cyto_a, c.cyto_b);
    const double dir = rng.uniform(0, 2 * std::numbers::pi);
    c.nucleus_dx = off * std::cos(dir);
    c.nucleus_dy = off * std::sin(dir);

    // Rejection sampling against heavy overlap; the last draw is kept if
    // every attempt collides.
    const Box local = c.bounding_box();
    for (int attempt = 0; attempt < 50; ++attempt) {
      c.cx = rng.uniform(-local.x1 + 1, static_cast<double>(n) - local.x2 - 1);
      c.cy = rng.uniform(-local.y1 + 1, static_cast<double>(n) - local.y2 - 1);
      bool clear = true;
      for (const auto& o : out.cells)
        if (std::hypot(o.cx - c.cx, o.cy - c.cy) < 0.9 * (rc + std::sqrt(o.cyto_a * o.cyto_b))) clear = false;
      if (clear) break;
    }
    out.cells.push_back(c);
  }

  const Rgb cyto{0.80 + stain[0], 0.62 + stain[1], 0.74 + stain[2]};
  const Rgb nucleus{0.32 + stain[0], 0.18 + stain[1], 0.45 + stain[2]};
  for (const auto& c : out.cells) {
    paint_ellipse(out.image, c.cx, c.cy, c.cyto_a, c.cyto_b, c.cyto_angle, cyto, 0.85, 0.04, rng);
    paint_ellipse(out.image, c.cx + c.nucleus_dx, c.cy + c.nucleus_dy, c.nucleus_a, c.nucleus_b, c.nucleus_angle,
                  nucleus, 0.95, 0.08, rng);
  }
  // Quantize to 8 bits so stored images reload bit-identically.
  for (float& v : out.image.storage()) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;

  const auto labels = contextual_labels(out.cells, cfg.rule);
  for (std::size_t i = 0; i < out.cells.size(); ++i) {
    out.cells[i].label = labels[i];
    out.gts.push_back({labels[i], out.cells[i].bounding_box()});
  }
  return out;
}

std::uint64_t synthetic_image_seed(std::uint64_t seed, std::size_t index) {
  // splitmix64 finalizer over (seed, index)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::vector<AnnotatedImage> gen_synthetic_set(const SynthConfig& cfg, std::size_t count) {
  std::vector<AnnotatedImage> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SynthConfig c = cfg;
    c.seed = synthetic_image_seed(cfg.seed, i);
    out.push_back(gen_synthetic(c));
  }
  return out;
}

AnnotatedImage flip_image(const AnnotatedImage& img, bool horizontal, bool vertical) {
  const std::size_t h = img.image.dim(1), w = img.image.dim(2);
  AnnotatedImage out;
  out.image = Tensor<float>(img.image.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out.image.at(c, vertical ? h - 1 - y : y, horizontal ? w - 1 - x : x) = img.image.at(c, y, x);
  for (GroundTruthBox g : img.gts) {
    if (horizontal) g.box = {static_cast<double>(w) - g.box.x2, g.box.y1, static_cast<double>(w) - g.box.x1, g.box.y2};
    if (vertical) g.box = {g.box.x1, static_cast<double>(h) - g.box.y2, g.box.x2, static_cast<double>(h) - g.box.y1};
    out.gts.push_back(g);
  }
  return out;
}

}  // namespace hyperfuse
