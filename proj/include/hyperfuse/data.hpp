#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperfuse/box.hpp"
#include "hyperfuse/tensor.hpp"

namespace hyperfuse {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kNormal = 0;
inline constexpr int kAbnormal = 1;

// Stored geometry of one rendered cell. Radii are ellipse semi-axes in
// pixels, angles in radians.
struct CellGeometry {
  double cx = 0, cy = 0;
  double cyto_a = 0, cyto_b = 0, cyto_angle = 0;
  double nucleus_dx = 0, nucleus_dy = 0;  // nucleus centre relative to (cx, cy)
  double nucleus_a = 0, nucleus_b = 0, nucleus_angle = 0;
  bool planted = false;  // drawn from the enlarged-nucleus distribution
  int label = kNormal;

  // Geometric mean of the nucleus semi-axes.
  double nucleus_radius() const;
  Box bounding_box() const;
};

struct AnnotatedImage {
  Tensor<float> image;  // [3,H,W] in [0,1]
  std::vector<GroundTruthBox> gts;
  std::vector<CellGeometry> cells;  // generator output only; empty when loaded from disk
};

struct AbnormalRule {
  double ratio_threshold = 1.3;
  double neighbor_radius = 64.0;
};

struct SynthConfig {
  std::size_t image_size = 128;
  std::size_t n_cells = 10;
  AbnormalRule rule;
  // Per-image base nucleus radius; normal nuclei are base * U(0.85, 1.15),
  // planted ones base * U(1.6, 2.0).
  double base_radius_min = 2.5;
  double base_radius_max = 5.0;
  double planted_fraction = 0.25;
  // Cytoplasm radius is independent of the nucleus and of the base.
  double cyto_radius_min = 9.0;
  double cyto_radius_max = 13.0;
  std::uint64_t seed = 1;
};

// Labels every cell by comparing its nucleus radius with the median of the
// other cells whose centres lie within neighbor_radius (global median for
// isolated cells).
std::vector<int> contextual_labels(const std::vector<CellGeometry>& cells, const AbnormalRule& rule);

AnnotatedImage gen_synthetic(const SynthConfig& cfg);
// Image i of a dataset generated from one seed.
std::uint64_t synthetic_image_seed(std::uint64_t seed, std::size_t index);
std::vector<AnnotatedImage> gen_synthetic_set(const SynthConfig& cfg, std::size_t count);

struct Tile {
  AnnotatedImage patch;
  std::size_t x = 0, y = 0;
};

// Window starts along one axis: multiples of stride, the last one clamped so
// the window ends at the border.
std::vector<std::size_t> tile_offsets(std::size_t extent, std::size_t window, std::size_t stride);
std::vector<Tile> tile_image(const AnnotatedImage& img, std::size_t window, std::size_t stride);

struct TileDetections {
  std::vector<Detection> detections;
  std::size_t x = 0, y = 0;
};
std::vector<Detection> stitch_detections(const std::vector<TileDetections>& per_tile, double nms_iou);

// 8-bit RGB PNG or binary PPM (P6), chosen by extension.
Tensor<float> read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Tensor<float>& image);

struct AnnotationRecord {
  std::string image;  // relative to the annotation file's directory
  std::vector<GroundTruthBox> boxes;
  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records);

struct Dataset {
  std::vector<std::string> names;
  std::vector<AnnotatedImage> images;
};

// Reads the JSONL file and every referenced image; boxes must lie inside
// their image.
Dataset load_dataset(const std::filesystem::path& annotations);
// Writes images as <dir>/images/<prefix><i>.<extension> plus
// <dir>/<annotations_name>.
void save_dataset(const std::filesystem::path& dir, const std::string& annotations_name, const std::string& prefix,
                  const std::vector<AnnotatedImage>& images, const std::string& extension = "png");

// Horizontal / vertical flip of image and boxes.
AnnotatedImage flip_image(const AnnotatedImage& img, bool horizontal, bool vertical);

}  // namespace hyperfuse
