#include <cmath>
#include <random>

#include "doctest.h"
#include "hyperfuse/adam.hpp"
#include "hyperfuse/checkpoint.hpp"
#include "hyperfuse/ops.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace hyperfuse;
using oracle::random_tensor;

namespace {

Tensor<double> t3(std::size_t c, std::size_t h, std::size_t w, std::vector<double> v) {
  return Tensor<double>(Shape{c, h, w}, std::move(v));
}

// Weighted sum with fixed random weights so gradient checks see every
// output with a distinct coefficient.
Var<double> weighted_sum(Var<double> y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  auto w = y.tape().constant(random_tensor(y.shape(), rng));
  return sum(mul(y, w));
}

constexpr double kGradTol = 1e-4;

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape invariants") {
    CHECK_THROWS_AS(Tensor<double>(Shape{2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    Tensor<double> t(Shape{2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.reshaped(Shape{3, 2}).shape() == Shape{3, 2});
    CHECK_THROWS_AS(t.reshaped(Shape{4}), ShapeError);
  }

  TEST_CASE("non-finite values are rejected on the tape") {
    Tape<double> tape;
    CHECK_THROWS_AS(tape.leaf(Tensor<double>(Shape{1}, std::nan(""))), ContractError);
    auto x = tape.leaf(Tensor<double>(Shape{1}, 1e308));
    CHECK_THROWS_AS(scale(x, 10.0), ContractError);
  }
}

TEST_SUITE("conv2d") {
  TEST_CASE("2x2 all-ones kernel sums the input") {
    Tape<double> tape;
    auto x = tape.leaf(t3(1, 2, 2, {1, 2, 3, 4}));
    auto w = tape.leaf(Tensor<double>(Shape{1, 1, 2, 2}, 1.0));
    auto b = tape.leaf(Tensor<double>(Shape{1}));
    auto y = conv2d(x, w, b, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 1});
    CHECK(y.value()[0] == 10.0);
  }

  TEST_CASE("1x1 identity kernel and zero kernel") {
    std::mt19937_64 rng(1);
    Tape<double> tape;
    auto x = tape.leaf(random_tensor(Shape{3, 5, 4}, rng));
    Tensor<double> eye(Shape{3, 3, 1, 1});
    for (std::size_t c = 0; c < 3; ++c) eye[c * 3 + c] = 1.0;
    auto b = tape.leaf(Tensor<double>(Shape{3}));
    CHECK(conv2d(x, tape.leaf(eye), b, 1, 0).value() == x.value());
    auto zero = conv2d(x, tape.leaf(Tensor<double>(Shape{3, 3, 3, 3})), b, 1, 1).value();
    for (double v : zero.data()) CHECK(v == 0.0);
  }

  TEST_CASE("matches the direct-sum oracle") {
    std::mt19937_64 rng(2);
    for (int stride : {1, 2})
      for (int pad : {0, 1, 2}) {
        auto in = random_tensor(Shape{3, 7, 6}, rng);
        auto w = random_tensor(Shape{4, 3, 3, 3}, rng);
        auto b = random_tensor(Shape{4}, rng);
        Tape<double> tape;
        auto y = conv2d(tape.leaf(in), tape.leaf(w), tape.leaf(b), stride, pad).value();
        auto ref = oracle::conv2d(in, w, b, stride, pad);
        REQUIRE(y.shape() == ref.shape());
        CHECK(max_abs_diff(y, ref) < 1e-12);
      }
  }

  TEST_CASE("channel mismatch is a shape error") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>(Shape{2, 4, 4}));
    auto w = tape.leaf(Tensor<double>(Shape{1, 3, 3, 3}));
    auto b = tape.leaf(Tensor<double>(Shape{1}));
    CHECK_THROWS_AS(conv2d(x, w, b, 1, 1), ShapeError);
  }

  TEST_CASE("deterministic") {
    std::mt19937_64 rng(3);
    auto in = random_tensor(Shape{2, 8, 8}, rng);
    auto w = random_tensor(Shape{3, 2, 3, 3}, rng);
    auto b = random_tensor(Shape{3}, rng);
    Tape<double> t1, t2;
    auto y1 = conv2d(t1.leaf(in), t1.leaf(w), t1.leaf(b), 2, 1).value();
    auto y2 = conv2d(t2.leaf(in), t2.leaf(w), t2.leaf(b), 2, 1).value();
    CHECK(y1 == y2);
  }
}

TEST_SUITE("bilinear_sample") {
  TEST_CASE("worked values") {
    auto in = t3(1, 2, 2, {0, 2, 4, 6});
    CHECK(bilinear_sample(in, 0.5, 0.5)[0] == doctest::Approx(oracle::bilinear(in, 0, 0.5, 0.5)));
    CHECK(bilinear_sample(in, 0.5, 0.5)[0] == doctest::Approx(3.0));
    CHECK(bilinear_sample(in, 1.0, 0.0)[0] == 2.0);
    CHECK(bilinear_sample(in, -5.0, -5.0)[0] == 0.0);
  }

  TEST_CASE("agrees with the formula oracle, including partially outside points") {
    std::mt19937_64 rng(4);
    auto in = random_tensor(Shape{3, 5, 6}, rng);
    std::uniform_real_distribution<double> coord(-1.5, 7.0);
    for (int i = 0; i < 200; ++i) {
      double x = coord(rng), y = coord(rng);
      auto s = bilinear_sample(in, x, y);
      for (std::size_t c = 0; c < 3; ++c) CHECK(s[c] == doctest::Approx(oracle::bilinear(in, c, x, y)).epsilon(1e-12));
    }
  }
}

TEST_SUITE("deform_conv2d") {
  TEST_CASE("zero offsets reproduce conv2d with padding 1") {
    std::mt19937_64 rng(5);
    auto in = random_tensor(Shape{3, 6, 7}, rng);
    auto w = random_tensor(Shape{4, 3, 3, 3}, rng);
    auto b = random_tensor(Shape{4}, rng);
    Tape<double> tape;
    auto x = tape.leaf(in), wv = tape.leaf(w), bv = tape.leaf(b);
    auto d = deform_conv2d(x, wv, tape.leaf(Tensor<double>(Shape{18, 6, 7})), bv).value();
    auto c = conv2d(x, wv, bv, 1, 1).value();
    CHECK(max_abs_diff(d, c) <= 1e-12);
  }

  TEST_CASE("single tap sampling between two pixels") {
    Tape<double> tape;
    auto x = tape.leaf(t3(1, 1, 2, {0, 2}));
    Tensor<double> w(Shape{1, 1, 3, 3});
    w[4] = 1.0;  // centre tap only
    Tensor<double> off(Shape{18, 1, 2});
    off.at(2 * 4, 0, 0) = 0.5;  // centre tap x displacement at output (0,0)
    auto y = deform_conv2d(x, tape.leaf(w), tape.leaf(off), tape.leaf(Tensor<double>(Shape{1}))).value();
    CHECK(y.at(0, 0, 0) == doctest::Approx(oracle::bilinear(x.value(), 0, 0.5, 0.0)));
    CHECK(y.at(0, 0, 0) == doctest::Approx(1.0));
  }

  TEST_CASE("taps pushed out of the grid leave only the bias") {
    std::mt19937_64 rng(6);
    Tape<double> tape;
    auto x = tape.leaf(random_tensor(Shape{2, 4, 4}, rng));
    auto w = tape.leaf(random_tensor(Shape{3, 2, 3, 3}, rng));
    auto b = tape.leaf(Tensor<double>(Shape{3}, std::vector<double>{0.5, -1.0, 2.0}));
    auto y = deform_conv2d(x, w, tape.leaf(Tensor<double>(Shape{18, 4, 4}, 100.0)), b).value();
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t p = 0; p < 16; ++p) CHECK(y[o * 16 + p] == b.value()[o]);
  }

  TEST_CASE("offset channel count is validated") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>(Shape{1, 3, 3}));
    auto w = tape.leaf(Tensor<double>(Shape{1, 1, 3, 3}));
    auto b = tape.leaf(Tensor<double>(Shape{1}));
    CHECK_THROWS_AS(deform_conv2d(x, w, tape.leaf(Tensor<double>(Shape{9, 3, 3})), b), ShapeError);
  }
}

TEST_SUITE("elementwise and layout") {
  TEST_CASE("silu") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>(Shape{3}, std::vector<double>{0.0, 1.0, 30.0}));
    auto y = silu(x).value();
    CHECK(y[0] == 0.0);
    CHECK(y[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(0.731058).epsilon(1e-6));
    CHECK(std::abs(y[2] - 30.0) < 1e-9);
  }

  TEST_CASE("resize_nearest") {
    Tape<double> tape;
    auto one = resize_nearest(tape.leaf(t3(1, 1, 1, {7})), 2, 2).value();
    for (double v : one.data()) CHECK(v == 7.0);
    auto src = tape.leaf(t3(1, 2, 2, {1, 2, 3, 4}));
    CHECK(resize_nearest(src, 1, 1).value()[0] == 1.0);
    CHECK(resize_nearest(src, 2, 2).value() == src.value());
    auto up = resize_nearest(src, 4, 4).value();
    CHECK(up.at(0, 3, 3) == 4.0);
    CHECK(up.at(0, 1, 2) == 2.0);
  }

  TEST_CASE("concat_channels") {
    std::mt19937_64 rng(7);
    Tape<double> tape;
    auto a = tape.leaf(random_tensor(Shape{3, 4, 4}, rng));
    auto b = tape.leaf(random_tensor(Shape{5, 4, 4}, rng));
    auto ab = concat_channels({a, b});
    CHECK(ab.shape() == Shape{8, 4, 4});
    CHECK(concat_channels({a}).value() == a.value());
    auto small = tape.leaf(Tensor<double>(Shape{2, 2, 2}));
    CHECK_THROWS_AS(concat_channels({a, small}), ShapeError);
  }

  TEST_CASE("concat then split recovers the inputs exactly") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
      Tape<double> tape;
      std::size_t h = 1 + rng() % 6, w = 1 + rng() % 6;
      std::vector<Var<double>> parts;
      std::vector<std::size_t> counts;
      for (std::size_t k = 0, n = 1 + rng() % 4; k < n; ++k) {
        counts.push_back(1 + rng() % 4);
        parts.push_back(tape.leaf(random_tensor(Shape{counts.back(), h, w}, rng)));
      }
      auto joined = concat_channels(std::span<const Var<double>>(parts));
      auto back = split_channels(joined, counts);
      REQUIRE(back.size() == parts.size());
      for (std::size_t k = 0; k < parts.size(); ++k) CHECK(back[k].value() == parts[k].value());
    }
  }
}

TEST_SUITE("backward") {
  TEST_CASE("sum of squares") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>(Shape{4}, std::vector<double>{1, -2, 0.5, 3}), true);
    tape.backward(sum(mul(x, x)));
    for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == 2 * x.value()[i]);
  }

  TEST_CASE("contract errors") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>(Shape{2}, 1.0), true);
    CHECK_THROWS_AS(tape.backward(x), ContractError);
    auto l = sum(x);
    tape.backward(l);
    CHECK_THROWS_AS(tape.backward(l), ContractError);
    tape.zero_grad();
    CHECK_NOTHROW(tape.backward(l));
  }

  TEST_CASE("tape ids increase and each backward function runs once") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>(Shape{3}, 1.0), true);
    int calls = 0;
    auto counted = tape.record("counted", x.value(), {x}, [&calls](BackwardContext<double>& ctx) {
      ++calls;
      auto* g = ctx.input_grad(0);
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += ctx.grad_output()[i];
    });
    auto y = add(counted, counted);
    auto l = sum(mul(y, counted));
    CHECK(counted.id() > x.id());
    CHECK(y.id() > counted.id());
    CHECK(l.id() > y.id());
    for (NodeId id = 0; id < tape.size(); ++id)
      for (NodeId in : tape.inputs(id)) CHECK(in < id);
    tape.backward(l);
    CHECK(calls == 1);
    // l = sum(2c * c) => dl/dx = 4x
    for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(4.0));
  }

  TEST_CASE("conv2d gradient matches finite differences") {
    std::mt19937_64 rng(11);
    std::vector<Tensor<double>> in{random_tensor(Shape{2, 6, 5}, rng), random_tensor(Shape{3, 2, 3, 3}, rng),
                                   random_tensor(Shape{3}, rng)};
    for (int stride : {1, 2}) {
      auto res = oracle::finite_difference_check(
          [stride](Tape<double>&, const std::vector<Var<double>>& v) {
            return weighted_sum(conv2d(v[0], v[1], v[2], stride, 1));
          },
          in);
      CHECK(res.max_rel_error < kGradTol);
    }
  }

  TEST_CASE("unweighted sum(conv2d) gradient") {
    std::mt19937_64 rng(12);
    std::vector<Tensor<double>> in{random_tensor(Shape{1, 4, 4}, rng), random_tensor(Shape{2, 1, 3, 3}, rng),
                                   random_tensor(Shape{2}, rng)};
    auto res = oracle::finite_difference_check(
        [](Tape<double>&, const std::vector<Var<double>>& v) { return sum(conv2d(v[0], v[1], v[2], 1, 0)); }, in);
    CHECK(res.max_rel_error < kGradTol);
  }

  TEST_CASE("randomized gradient property over every differentiable op") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 6; ++trial) {
      std::size_t c = 1 + rng() % 4, h = 2 + rng() % 7, w = 2 + rng() % 7, co = 1 + rng() % 4;
      std::size_t k = 1 + 2 * (rng() % 2);
      CAPTURE(trial);
      auto input = random_tensor(Shape{c, h, w}, rng);

      auto conv = oracle::finite_difference_check(
          [](Tape<double>&, const std::vector<Var<double>>& v) { return weighted_sum(conv2d(v[0], v[1], v[2], 1, 1)); },
          {input, random_tensor(Shape{co, c, k, k}, rng), random_tensor(Shape{co}, rng)});
      CHECK(conv.max_rel_error < kGradTol);

      // Non-integer offsets keep every sample away from the bilinear kinks.
      auto offsets = random_tensor(Shape{18, h, w}, rng, -1.3, 1.3);
      auto deform = oracle::finite_difference_check(
          [](Tape<double>&, const std::vector<Var<double>>& v) {
            return weighted_sum(deform_conv2d(v[0], v[1], v[2], v[3]));
          },
          {input, random_tensor(Shape{co, c, 3, 3}, rng), offsets, random_tensor(Shape{co}, rng)});
      CHECK(deform.max_rel_error < kGradTol);

      std::uniform_real_distribution<double> coord(-0.7, static_cast<double>(std::max(h, w)) - 0.3);
      auto point = Tensor<double>(Shape{2}, std::vector<double>{coord(rng), coord(rng)});
      auto sample = oracle::finite_difference_check(
          [](Tape<double>&, const std::vector<Var<double>>& v) { return weighted_sum(bilinear_sample(v[0], v[1])); },
          {input, point});
      CHECK(sample.max_rel_error < kGradTol);

      auto act = oracle::finite_difference_check(
          [](Tape<double>&, const std::vector<Var<double>>& v) { return weighted_sum(silu(v[0])); },
          {random_tensor(Shape{c, h, w}, rng, -4, 4)});
      CHECK(act.max_rel_error < kGradTol);

      std::size_t rh = 1 + rng() % 9, rw = 1 + rng() % 9;
      auto rs = oracle::finite_difference_check(
          [rh, rw](Tape<double>&, const std::vector<Var<double>>& v) {
            return weighted_sum(resize_nearest(v[0], rh, rw));
          },
          {input});
      CHECK(rs.max_rel_error < kGradTol);

      auto cat = oracle::finite_difference_check(
          [](Tape<double>&, const std::vector<Var<double>>& v) {
            auto joined = concat_channels({v[0], v[1]});
            return weighted_sum(slice_channels(joined, 1, joined.shape()[0] - 1));
          },
          {input, random_tensor(Shape{co, h, w}, rng)});
      CHECK(cat.max_rel_error < kGradTol);

      auto mm = oracle::finite_difference_check(
          [](Tape<double>&, const std::vector<Var<double>>& v) {
            return weighted_sum(transpose(matmul(v[0], v[1])));
          },
          {random_tensor(Shape{h, c}, rng), random_tensor(Shape{c, w}, rng)});
      CHECK(mm.max_rel_error < kGradTol);
    }
  }
}

TEST_SUITE("adam") {
  TEST_CASE("zero gradients leave parameters unchanged") {
    ModelParams<double> p, g;
    p.add("w", Tensor<double>(Shape{3}, std::vector<double>{1, -2, 3}));
    g.add("w", Tensor<double>(Shape{3}));
    auto before = p;
    AdamState<double> state;
    for (int t = 1; t <= 5; ++t) adam_step(p, g, state, AdamConfig{}, t);
    CHECK(p == before);
  }

  TEST_CASE("first step on a scalar") {
    ModelParams<double> p, g;
    p.add("w", Tensor<double>::scalar(0.0));
    g.add("w", Tensor<double>::scalar(1.0));
    AdamState<double> state;
    adam_step(p, g, state, AdamConfig{0.1, 0.9, 0.999, 1e-8}, 1);
    // m_hat = 1, v_hat = 1 after bias correction.
    CHECK(p.at("w")[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));
  }

  TEST_CASE("identical inputs give identical updates") {
    std::mt19937_64 rng(21);
    ModelParams<float> a, ga;
    a.add("x", random_tensor(Shape{4, 4}, rng).cast<float>());
    ga.add("x", random_tensor(Shape{4, 4}, rng).cast<float>());
    auto b = a;
    AdamState<float> sa, sb;
    for (int t = 1; t <= 3; ++t) {
      adam_step(a, ga, sa, AdamConfig{}, t);
      adam_step(b, ga, sb, AdamConfig{}, t);
    }
    CHECK(a == b);
  }

  TEST_CASE("errors") {
    ModelParams<double> p, g;
    p.add("w", Tensor<double>(Shape{2}));
    g.add("w", Tensor<double>(Shape{3}));
    AdamState<double> s;
    CHECK_THROWS_AS(adam_step(p, g, s, AdamConfig{}, 1), ShapeError);
    CHECK_THROWS_AS(adam_step(p, p, s, AdamConfig{}, 0), ParameterError);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("byte layout") {
    ModelParams<float> p;
    p.add("a", Tensor<float>(Shape{2}, std::vector<float>{1.0f, -2.0f}));
    p.add("b.weight", Tensor<float>(Shape{1, 1, 1, 1}, 0.5f));
    std::string bytes = encode_checkpoint(p);
    REQUIRE(bytes.substr(0, 8) == "HGCKPT1\n");
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    auto header = nlohmann::json::parse(bytes.substr(16, len));
    REQUIRE(header.is_array());
    REQUIRE(header.size() == 2);
    CHECK(header[0]["name"] == "a");
    CHECK(header[0]["dtype"] == "f32");
    CHECK(header[0]["shape"] == nlohmann::json::array({2}));
    CHECK(header[0]["byte_offset"] == 0);
    CHECK(header[1]["byte_offset"] == 8);
    CHECK(bytes.size() == 16 + len + 12);
    // 1.0f little-endian
    CHECK(static_cast<unsigned char>(bytes[16 + len + 3]) == 0x3f);
    CHECK(static_cast<unsigned char>(bytes[16 + len + 2]) == 0x80);
  }

  TEST_CASE("round trip and dtype conversion") {
    std::mt19937_64 rng(31);
    ModelParams<double> p;
    p.add("x", random_tensor(Shape{3, 2, 2}, rng));
    p.add("y", random_tensor(Shape{5}, rng));
    CHECK(decode_checkpoint<double>(encode_checkpoint(p)) == p);
    auto f = decode_checkpoint<float>(encode_checkpoint(p));
    CHECK(f == p.cast<float>());
    CHECK_THROWS_AS(decode_checkpoint<double>(std::string("HGCKPT2\n") + std::string(8, '\0')), CheckpointError);
  }
}
