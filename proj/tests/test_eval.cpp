#include <random>

#include "doctest.h"
#include "hyperfuse/eval.hpp"

using namespace hyperfuse;

namespace {

Detection det(int cls, double score, Box b) { return {cls, score, b}; }

// The (TP, FP, TP) trace on two GTs of one class.
void trace_case(ImagePredictions& p, ImageGroundTruth& g) {
  g["img"] = {{0, Box{0, 0, 10, 10}}, {0, Box{20, 20, 30, 30}}};
  p["img"] = {det(0, 0.9, Box{0, 0, 10, 10}), det(0, 0.8, Box{50, 50, 60, 60}), det(0, 0.7, Box{20, 20, 30, 30})};
}

}  // namespace

TEST_SUITE("iou") {
  TEST_CASE("worked values") {
    CHECK(iou(Box{0, 0, 2, 2}, Box{0, 0, 2, 2}) == 1.0);
    CHECK(iou(Box{0, 0, 1, 1}, Box{2, 2, 3, 3}) == 0.0);
    CHECK(iou(Box{0, 0, 2, 2}, Box{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
    CHECK(iou(Box{0, 0, 1, 1}, Box{1, 0, 2, 1}) == 0.0);
  }
}

TEST_SUITE("match_detections") {
  TEST_CASE("one detection on one GT") {
    auto m = match_detections({det(0, 0.5, Box{0, 0, 4, 4})}, {{0, Box{0, 0, 4, 4}}}, 0.5);
    CHECK(m.tp == std::vector<bool>{true});
    CHECK(m.gt_matched == std::vector<bool>{true});
  }

  TEST_CASE("two detections on one GT") {
    auto m = match_detections({det(0, 0.6, Box{0, 0, 4, 4.2}), det(0, 0.9, Box{0, 0, 4, 4})}, {{0, Box{0, 0, 4, 4}}},
                              0.5);
    CHECK(m.tp == std::vector<bool>{false, true});
  }

  TEST_CASE("greedy trace (TP, FP, TP)") {
    ImagePredictions p;
    ImageGroundTruth g;
    trace_case(p, g);
    auto m = match_detections(p["img"], g["img"], 0.5);
    CHECK(m.tp == std::vector<bool>{true, false, true});
  }

  TEST_CASE("a detection takes the highest-IoU unmatched GT") {
    std::vector<GroundTruthBox> gts{{0, Box{0, 0, 10, 10}}, {0, Box{1, 0, 11, 10}}};
    auto m = match_detections({det(0, 0.9, Box{1, 0, 11, 10}), det(0, 0.8, Box{0, 0, 10, 10})}, gts, 0.5);
    CHECK(m.tp == std::vector<bool>{true, true});
    CHECK(m.gt_matched == std::vector<bool>{true, true});
  }
}

TEST_SUITE("average_precision") {
  TEST_CASE("all found without false positives") {
    CHECK(average_precision({{0.9, true}, {0.5, true}}, 2) == 1.0);
  }

  TEST_CASE("no detections") { CHECK(average_precision({}, 3) == 0.0); }

  TEST_CASE("hand-traced PR curve") {
    double ap = average_precision({{0.9, true}, {0.8, false}, {0.7, true}}, 2);
    CHECK(ap == doctest::Approx((51.0 + 50.0 * 2.0 / 3.0) / 101.0).epsilon(1e-12));
    CHECK(std::abs(ap - 0.8350) <= 1e-4);
  }

  TEST_CASE("a detection below all others never lowers AP") {
    std::mt19937_64 g(3);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<ScoredFlag> f;
      for (int i = 0; i < 12; ++i) f.push_back({u(g), g() % 2 == 0});
      std::size_t n_tp = 0;
      for (auto& x : f) n_tp += x.tp;
      std::size_t n_gt = n_tp + g() % 4 + 1;
      double before = average_precision(f, n_gt);
      f.push_back({0.05, g() % 2 == 0});
      CHECK(average_precision(f, n_gt) >= before);
    }
  }
}

TEST_SUITE("evaluate") {
  EvalOptions opt;

  TEST_CASE("perfect predictions") {
    ImageGroundTruth g{{"a", {{0, Box{0, 0, 10, 10}}, {1, Box{20, 20, 40, 35}}}}, {"b", {{1, Box{5, 5, 9, 9}}}}};
    ImagePredictions p;
    for (const auto& [id, gts] : g)
      for (const auto& x : gts) p[id].push_back(det(x.class_id, 0.9, x.box));
    auto r = evaluate(p, g, opt);
    CHECK(r.ap == 1.0);
    CHECK(r.ap50 == 1.0);
    CHECK(r.ar == 1.0);
  }

  TEST_CASE("empty predictions") {
    ImageGroundTruth g{{"a", {{0, Box{0, 0, 10, 10}}}}};
    auto r = evaluate({}, g, opt);
    CHECK(r.ap == 0.0);
    CHECK(r.ap50 == 0.0);
    CHECK(r.ar == 0.0);
  }

  TEST_CASE("single image trace gives AP.5 0.8350") {
    ImagePredictions p;
    ImageGroundTruth g;
    trace_case(p, g);
    auto r = evaluate(p, g, opt);
    REQUIRE(r.per_class.size() == 1);
    CHECK(std::abs(r.per_class[0].ap50 - 0.8350) <= 1e-4);
    CHECK(std::abs(r.ap50 - 0.8350) <= 1e-4);
  }

  TEST_CASE("unknown image id is an error") {
    ImageGroundTruth g{{"a", {}}};
    ImagePredictions p{{"zzz", {}}};
    CHECK_THROWS_AS(evaluate(p, g, opt), EvalError);
  }

  TEST_CASE("classes without GT are excluded") {
    ImageGroundTruth g{{"a", {{0, Box{0, 0, 10, 10}}}}};
    ImagePredictions p{{"a", {det(0, 0.9, Box{0, 0, 10, 10}), det(1, 0.9, Box{30, 30, 40, 40})}}};
    auto r = evaluate(p, g, opt);
    CHECK(r.per_class.size() == 1);
    CHECK(r.ap == 1.0);
  }

  TEST_CASE("top-100 cap per image") {
    ImageGroundTruth g{{"a", {{0, Box{0, 0, 10, 10}}}}};
    ImagePredictions p;
    for (int i = 0; i < 100; ++i) p["a"].push_back(det(0, 0.9, Box{50.0 + i, 50, 60.0 + i, 60}));
    p["a"].push_back(det(0, 0.1, Box{0, 0, 10, 10}));
    CHECK(evaluate(p, g, opt).ar == 0.0);
    opt.max_dets = 101;
    CHECK(evaluate(p, g, opt).ar == 1.0);
  }

  TEST_CASE("fuzzed: AP.5 >= AP, values in [0,1], order invariance") {
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
      ImageGroundTruth g;
      ImagePredictions p;
      for (int i = 0; i < 4; ++i) {
        std::string id = "im" + std::to_string(i);
        auto& gl = g[id];
        for (int k = 0; k < 3; ++k) {
          double x = 100 * u(gen), y = 100 * u(gen);
          gl.push_back({static_cast<int>(gen() % 2), Box{x, y, x + 10 + 20 * u(gen), y + 10 + 20 * u(gen)}});
        }
        for (const auto& x : gl) {
          double j = 4 * u(gen);
          p[id].push_back(det(x.class_id, u(gen), Box{x.box.x1 + j, x.box.y1, x.box.x2 + j, x.box.y2 - j / 2}));
        }
        p[id].push_back(det(0, u(gen), Box{0, 0, 30, 30}));
      }
      auto r = evaluate(p, g, opt);
      CHECK(r.ap50 >= r.ap);
      CHECK(r.ap >= 0);
      CHECK(r.ap50 <= 1);
      CHECK(r.ar <= 1);
      ImagePredictions reversed;
      for (auto& [id, d] : p) reversed[id] = std::vector<Detection>(d.rbegin(), d.rend());
      auto r2 = evaluate(reversed, g, opt);
      CHECK(r2.ap50 == doctest::Approx(r.ap50).epsilon(1e-12));
    }
  }

  TEST_CASE("json and table output") {
    ImagePredictions p;
    ImageGroundTruth g;
    trace_case(p, g);
    auto r = evaluate(p, g, opt);
    auto j = eval_to_json(r);
    CHECK(j.find("\"ap50\"") != std::string::npos);
    CHECK(j.find("\"per_class\"") != std::string::npos);
    auto t = eval_table(r);
    CHECK(t.find("AP.5") != std::string::npos);
    CHECK(t.find("all") != std::string::npos);
  }
}
