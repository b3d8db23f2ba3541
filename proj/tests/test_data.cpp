#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "hyperfuse/data.hpp"

using namespace hyperfuse;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("hyperfuse_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Independent restatement of the contextual rule.
int oracle_label(const std::vector<CellGeometry>& cells, std::size_t i, const AbnormalRule& rule) {
  auto radius = [](const CellGeometry& c) { return std::sqrt(c.nucleus_a * c.nucleus_b); };
  auto med = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2] : (v[v.size() / 2 - 1] + v[v.size() / 2]) / 2;
  };
  std::vector<double> near, all;
  for (std::size_t j = 0; j < cells.size(); ++j) {
    all.push_back(radius(cells[j]));
    double d = std::sqrt((cells[i].cx - cells[j].cx) * (cells[i].cx - cells[j].cx) +
                         (cells[i].cy - cells[j].cy) * (cells[i].cy - cells[j].cy));
    if (j != i && d <= rule.neighbor_radius) near.push_back(radius(cells[j]));
  }
  double ref = near.empty() ? med(all) : med(near);
  return radius(cells[i]) > rule.ratio_threshold * ref ? kAbnormal : kNormal;
}

CellGeometry cell_at(double x, double y, double nucleus) {
  CellGeometry c;
  c.cx = x;
  c.cy = y;
  c.cyto_a = c.cyto_b = 10;
  c.nucleus_a = c.nucleus_b = nucleus;
  return c;
}

AnnotatedImage blank(std::size_t h, std::size_t w) {
  AnnotatedImage a;
  a.image = Tensor<float>(Shape{3, h, w});
  return a;
}

}  // namespace

TEST_SUITE("gen_synthetic") {
  TEST_CASE("no cells gives no boxes") {
    SynthConfig cfg;
    cfg.n_cells = 0;
    auto img = gen_synthetic(cfg);
    CHECK(img.gts.empty());
    CHECK(img.image.shape() == Shape{3, 128, 128});
  }

  TEST_CASE("same seed is bit-identical, different seed differs") {
    SynthConfig cfg;
    cfg.seed = 42;
    auto a = gen_synthetic(cfg), b = gen_synthetic(cfg);
    CHECK(a.image == b.image);
    CHECK(a.gts == b.gts);
    cfg.seed = 43;
    CHECK_FALSE(gen_synthetic(cfg).image == a.image);
  }

  TEST_CASE("planted cell against five neighbours") {
    std::vector<CellGeometry> cells{cell_at(50, 50, 6.0)};
    const double around[5] = {3.8, 4.0, 4.0, 4.1, 4.3};
    for (int k = 0; k < 5; ++k)
      cells.push_back(cell_at(50 + 30 * std::cos(k * 1.2566), 50 + 30 * std::sin(k * 1.2566), around[k]));
    AbnormalRule rule{1.3, 40};
    auto labels = contextual_labels(cells, rule);
    CHECK(labels[0] == kAbnormal);  // 6.0 = 1.5 x median 4.0
    for (int k = 1; k <= 5; ++k) CHECK(labels[k] == kNormal);
  }

  TEST_CASE("isolated cells use the global median") {
    std::vector<CellGeometry> cells{cell_at(0, 0, 10), cell_at(500, 0, 4), cell_at(0, 500, 4), cell_at(500, 500, 5)};
    auto labels = contextual_labels(cells, AbnormalRule{1.3, 50});
    CHECK(labels == std::vector<int>{kAbnormal, kNormal, kNormal, kNormal});
  }

  TEST_CASE("labels are recomputable from stored geometry and boxes are valid") {
    SynthConfig cfg;
    std::size_t abnormal = 0, total = 0;
    for (std::uint64_t s = 0; s < 40; ++s) {
      cfg.seed = s;
      cfg.n_cells = 4 + s % 12;
      auto img = gen_synthetic(cfg);
      REQUIRE(img.cells.size() == cfg.n_cells);
      REQUIRE(img.gts.size() == cfg.n_cells);
      for (std::size_t i = 0; i < img.cells.size(); ++i) {
        CHECK(img.gts[i].class_id == oracle_label(img.cells, i, cfg.rule));
        const Box& b = img.gts[i].box;
        CHECK(b.valid());
        CHECK(b.x1 >= 0);
        CHECK(b.y1 >= 0);
        CHECK(b.x2 <= 128);
        CHECK(b.y2 <= 128);
        abnormal += img.gts[i].class_id == kAbnormal;
        ++total;
      }
      for (float v : img.image.data()) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
      }
    }
    // Both classes occur in reasonable proportion.
    CHECK(abnormal > total / 10);
    CHECK(abnormal < total / 2);
  }

  TEST_CASE("an image too small for a cell is an error") {
    SynthConfig cfg;
    cfg.image_size = 20;
    CHECK_THROWS_AS(gen_synthetic(cfg), DataError);
  }

  TEST_CASE("dataset images use distinct derived seeds") {
    SynthConfig cfg;
    auto set = gen_synthetic_set(cfg, 3);
    CHECK_FALSE(set[0].image == set[1].image);
    cfg.seed = synthetic_image_seed(cfg.seed, 1);
    CHECK(gen_synthetic(cfg).image == set[1].image);
  }
}

TEST_SUITE("tiling") {
  TEST_CASE("worked offsets") {
    CHECK(tile_offsets(1280, 640, 640) == std::vector<std::size_t>{0, 640});
    CHECK(tile_offsets(1000, 640, 512) == std::vector<std::size_t>{0, 360});
    CHECK(tile_offsets(640, 640, 512) == std::vector<std::size_t>{0});
    CHECK(tile_offsets(1664, 640, 512) == std::vector<std::size_t>{0, 512, 1024});
  }

  TEST_CASE("1280 square with stride 640 gives four tiles in row-major order") {
    auto tiles = tile_image(blank(1280, 1280), 640, 640);
    REQUIRE(tiles.size() == 4);
    std::vector<std::pair<std::size_t, std::size_t>> at;
    for (const auto& t : tiles) at.emplace_back(t.x, t.y);
    CHECK(at == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {640, 0}, {0, 640}, {640, 640}});
  }

  TEST_CASE("window larger than the image is an error") {
    CHECK_THROWS_AS(tile_image(blank(600, 800), 640, 512), DataError);
    CHECK_THROWS_AS(tile_offsets(2000, 640, 641), DataError);
  }

  TEST_CASE("random sizes are fully covered by exact windows") {
    std::mt19937_64 g(5);
    for (int trial = 0; trial < 30; ++trial) {
      std::size_t h = 64 + g() % 400, w = 64 + g() % 400, win = 64, stride = 16 + g() % 49;
      auto img = blank(h, w);
      for (std::size_t i = 0; i < img.image.size(); ++i) img.image[i] = static_cast<float>(i % 251) / 251.0f;
      auto tiles = tile_image(img, win, stride);
      std::vector<int> hit(h * w, 0);
      for (const auto& t : tiles) {
        REQUIRE(t.patch.image.shape() == Shape{3, win, win});
        REQUIRE(t.x + win <= w);
        REQUIRE(t.y + win <= h);
        CHECK(t.patch.image.at(2, 5, 7) == img.image.at(2, t.y + 5, t.x + 7));
        for (std::size_t y = t.y; y < t.y + win; ++y)
          for (std::size_t x = t.x; x < t.x + win; ++x) hit[y * w + x] = 1;
      }
      CHECK(std::count(hit.begin(), hit.end(), 0) == 0);
    }
  }

  TEST_CASE("boxes follow their centres and are clipped") {
    auto img = blank(1000, 1000);
    img.gts = {{0, Box{600, 10, 700, 60}}, {1, Box{10, 10, 30, 30}}};
    auto tiles = tile_image(img, 640, 512);
    REQUIRE(tiles.size() == 4);
    // Centre x = 650: outside tile x=0 (0..640), inside tile x=360.
    CHECK(tiles[0].patch.gts.size() == 1);
    CHECK(tiles[0].patch.gts[0].class_id == 1);
    REQUIRE(tiles[1].patch.gts.size() == 1);
    CHECK(tiles[1].patch.gts[0].box == Box{240, 10, 340, 60});
    auto edge = blank(640, 1000);
    edge.gts = {{0, Box{300, 0, 420, 40}}};
    auto et = tile_image(edge, 640, 512);
    REQUIRE(et.size() == 2);
    CHECK(et[0].patch.gts.size() == 1);
    CHECK(et[1].patch.gts.size() == 1);
    CHECK(et[1].patch.gts[0].box == Box{0, 0, 60, 40});
  }
}

TEST_SUITE("stitch_detections") {
  TEST_CASE("empty input") { CHECK(stitch_detections({}, 0.5).empty()); }

  TEST_CASE("single tile at the origin is the identity") {
    std::vector<Detection> d{{0, 0.9, Box{0, 0, 5, 5}}, {1, 0.7, Box{10, 10, 20, 20}}};
    CHECK(stitch_detections({{d, 0, 0}}, 0.5) == d);
  }

  TEST_CASE("duplicate across overlapping tiles keeps the higher score") {
    // Same object seen from tiles at x=0 and x=360, IoU 0.9 after translation.
    TileDetections a{{{0, 0.8, Box{400, 100, 500, 200}}}, 0, 0};
    TileDetections b{{{0, 0.95, Box{45, 100, 145, 200}}}, 360, 0};
    auto out = stitch_detections({a, b}, 0.5);
    REQUIRE(out.size() == 1);
    CHECK(out[0].score == 0.95);
    CHECK(out[0].box == Box{405, 100, 505, 200});
  }
}

TEST_SUITE("image and annotation io") {
  TEST_CASE("PNG and PPM round-trip 8-bit images") {
    auto dir = scratch("img");
    SynthConfig cfg;
    cfg.image_size = 64;
    cfg.n_cells = 2;
    auto img = gen_synthetic(cfg).image;
    write_image(dir / "a.png", img);
    write_image(dir / "a.ppm", img);
    CHECK(read_image(dir / "a.png") == img);
    CHECK(read_image(dir / "a.ppm") == img);
    CHECK_THROWS_AS(read_image(dir / "missing.png"), DataError);
  }

  TEST_CASE("annotations round-trip exactly") {
    auto dir = scratch("ann");
    std::vector<AnnotationRecord> recs{{"images/a.png", {{0, Box{1.25, 2.5, 10.125, 20.0625}}, {1, Box{0.1, 0.2, 0.3, 0.4}}}},
                                       {"images/b.png", {}}};
    write_annotations(dir / "ann.jsonl", recs);
    CHECK(read_annotations(dir / "ann.jsonl") == recs);
  }

  TEST_CASE("empty file is an empty dataset") {
    auto dir = scratch("empty");
    std::ofstream(dir / "ann.jsonl").close();
    CHECK(read_annotations(dir / "ann.jsonl").empty());
    CHECK(load_dataset(dir / "ann.jsonl").images.empty());
  }

  TEST_CASE("errors carry line numbers") {
    auto dir = scratch("bad");
    {
      std::ofstream f(dir / "ann.jsonl");
      f << R"({"image":"a.png","boxes":[]})" << "\n";
      f << R"({"image":"b.png","boxes":[{"class":0,"x1":5,"y1":1,"x2":5,"y2":3}]})" << "\n";
    }
    try {
      read_annotations(dir / "ann.jsonl");
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
    {
      std::ofstream f(dir / "ann2.jsonl");
      f << "{not json\n";
    }
    try {
      read_annotations(dir / "ann2.jsonl");
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(":1:") != std::string::npos);
    }
    {
      std::ofstream f(dir / "ann3.jsonl");
      f << "\n" << R"({"image":"nope.png","boxes":[]})" << "\n";
    }
    try {
      load_dataset(dir / "ann3.jsonl");
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
  }

  TEST_CASE("saved datasets reload identically") {
    auto dir = scratch("ds");
    SynthConfig cfg;
    cfg.image_size = 64;
    cfg.n_cells = 3;
    auto set = gen_synthetic_set(cfg, 3);
    save_dataset(dir, "train.jsonl", "train_", set);
    auto ds = load_dataset(dir / "train.jsonl");
    REQUIRE(ds.images.size() == 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(ds.images[i].image == set[i].image);
      CHECK(ds.images[i].gts == set[i].gts);
    }
  }
}

TEST_SUITE("flip_image") {
  TEST_CASE("horizontal flip mirrors pixels and boxes") {
    auto img = blank(4, 6);
    img.image.at(0, 1, 0) = 1.0f;
    img.gts = {{1, Box{0, 1, 2, 3}}};
    auto f = flip_image(img, true, false);
    CHECK(f.image.at(0, 1, 5) == 1.0f);
    CHECK(f.gts[0].box == Box{4, 1, 6, 3});
    auto v = flip_image(img, false, true);
    CHECK(v.image.at(0, 2, 0) == 1.0f);
    CHECK(v.gts[0].box == Box{0, 1, 2, 3});
  }
}
