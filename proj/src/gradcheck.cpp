#include "hyperfuse/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <random>

#include "hyperfuse/hypergraph.hpp"
#include "hyperfuse/model.hpp"
#include "hyperfuse/ops.hpp"

namespace hyperfuse {

namespace {

double eval_loss(const LossFn& f, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t, false));
  return f(tape, vars).value()[0];
}

Tensor<double> rand_tensor(const Shape& shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(shape);
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

// Projects onto fixed random weights so every output entry reaches the loss
// with a distinct coefficient.
Var<double> project(Var<double> x, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(x, x.tape().constant(rand_tensor(x.shape(), rng))));
}

}  // namespace

GradCheck check_gradient(const std::string& name, const LossFn& f, std::vector<Tensor<double>> inputs,
                         std::size_t max_entries, double tol, double h, double floor, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheck res;
  res.name = name;
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
  const auto loss = f(tape, vars);
  // Round-off in the differenced losses scales with |loss|, so the floor does too.
  floor *= std::max(1.0, std::abs(loss.value()[0]));
  tape.backward(loss);
  std::vector<Tensor<double>> analytic;
  for (const auto& v : vars) analytic.push_back(tape.has_grad(v.id()) ? v.grad() : Tensor<double>(v.shape()));

  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<std::size_t> idx(inputs[i].size());
    for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
    if (max_entries && idx.size() > max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_entries);
    }
    for (auto j : idx) {
      const double orig = inputs[i][j];
      inputs[i][j] = orig + h;
      const double up = eval_loss(f, inputs);
      inputs[i][j] = orig - h;
      const double down = eval_loss(f, inputs);
      inputs[i][j] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[i][j];
      res.max_rel_error = std::max(res.max_rel_error, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor}));
      ++res.checked;
    }
  }
  res.passed = res.checked > 0 && res.max_rel_error < tol;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

std::vector<GradCheck> run_gradient_suite(std::uint64_t seed, double tol) {
  std::vector<GradCheck> out;
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  auto run = [&](const std::string& name, const LossFn& f, std::vector<Tensor<double>> inputs,
                 std::size_t max_entries = 0) {
    out.push_back(check_gradient(name, f, std::move(inputs), max_entries, tol, 1e-5, 1e-6, rng.next()));
  };
  const std::uint64_t ps = rng.next();

  run("add", [&](Tape<double>&, const auto& v) { return project(add(v[0], v[1]), ps); },
      {rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng)});
  run("mul", [&](Tape<double>&, const auto& v) { return project(mul(v[0], v[1]), ps); },
      {rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng)});
  run("scale", [&](Tape<double>&, const auto& v) { return project(scale(v[0], -1.7), ps); }, {rand_tensor({5}, rng)});
  run("sum", [&](Tape<double>&, const auto& v) { return sum(v[0]); }, {rand_tensor({2, 3, 3}, rng)});
  run("matmul", [&](Tape<double>&, const auto& v) { return project(matmul(v[0], v[1]), ps); },
      {rand_tensor({4, 3}, rng), rand_tensor({3, 5}, rng)});
  run("transpose", [&](Tape<double>&, const auto& v) { return project(transpose(v[0]), ps); },
      {rand_tensor({4, 3}, rng)});
  run("reshape", [&](Tape<double>&, const auto& v) { return project(reshape(v[0], Shape{6, 2}), ps); },
      {rand_tensor({3, 4}, rng)});
  run("silu", [&](Tape<double>&, const auto& v) { return project(silu(v[0]), ps); }, {rand_tensor({3, 5, 5}, rng, -4, 4)});
  for (int stride : {1, 2})
    for (int k : {1, 3})
      run("conv2d k" + std::to_string(k) + " s" + std::to_string(stride),
          [&, stride, k](Tape<double>&, const auto& v) { return project(conv2d(v[0], v[1], v[2], stride, k / 2), ps); },
          {rand_tensor({3, 7, 6}, rng), rand_tensor({4, 3, static_cast<std::size_t>(k), static_cast<std::size_t>(k)}, rng),
           rand_tensor({4}, rng)});
  run("deform_conv2d", [&](Tape<double>&, const auto& v) { return project(deform_conv2d(v[0], v[1], v[2], v[3]), ps); },
      {rand_tensor({2, 6, 5}, rng), rand_tensor({3, 2, 3, 3}, rng), rand_tensor({18, 6, 5}, rng, -1.3, 1.3),
       rand_tensor({3}, rng)});
  run("bilinear_sample", [&](Tape<double>&, const auto& v) { return project(bilinear_sample(v[0], v[1]), ps); },
      {rand_tensor({3, 5, 6}, rng), Tensor<double>(Shape{2}, std::vector<double>{rng.uniform(-0.7, 5.3), rng.uniform(-0.7, 4.3)})});
  run("resize_nearest", [&](Tape<double>&, const auto& v) { return project(resize_nearest(v[0], 7, 3), ps); },
      {rand_tensor({2, 4, 5}, rng)});
  run("concat/slice/split",
      [&](Tape<double>&, const auto& v) {
        auto joined = concat_channels({v[0], v[1]});
        const std::size_t counts[2] = {2, 3};
        auto parts = split_channels(slice_channels(joined, 1, 5), counts);
        return add(project(parts[0], ps), project(parts[1], ps + 1));
      },
      {rand_tensor({3, 3, 4}, rng), rand_tensor({3, 3, 4}, rng)});

  {
    auto feats = rand_tensor({20, 3}, rng);
    Hypergraph hg = build_hypergraph(feats, adaptive_lambda(feats, LambdaRule{0.3, 512, 1, 1e-12}));
    run("hyperconv_spatial", [&](Tape<double>&, const auto& v) { return project(hyperconv_spatial(v[0], hg, v[1]), ps); },
        {rand_tensor({20, 4}, rng), rand_tensor({4, 4}, rng)});
    run("hyperconv_matrix", [&](Tape<double>&, const auto& v) { return project(hyperconv_matrix(v[0], hg, v[1]), ps); },
        {rand_tensor({20, 4}, rng), rand_tensor({4, 4}, rng)});
  }

  HeadConfig hc;
  {
    std::vector<GroundTruthBox> gts{{0, Box{1, 2, 13, 11}}, {1, Box{18, 20, 29, 31}}, {1, Box{3, 1, 30, 27}}};
    auto targets = assign_targets(gts, 32, 32, hc);
    std::vector<Tensor<double>> inputs;
    for (std::size_t l = 0; l < 3; ++l) {
      const std::size_t s = 32 / kHeadStrides[l];
      inputs.push_back(rand_tensor({1, s, s}, rng, -2, 2));
      inputs.push_back(rand_tensor({2, s, s}, rng, -2, 2));
      inputs.push_back(rand_tensor({4, s, s}, rng, 1.0, 2.5));
    }
    run("detection_loss",
        [&](Tape<double>&, const auto& v) {
          HeadOutput<double> head;
          head.image_height = head.image_width = 32;
          for (std::size_t l = 0; l < 3; ++l) head.levels[l] = {v[3 * l], v[3 * l + 1], v[3 * l + 2], kHeadStrides[l]};
          return detection_loss(head, targets, hc);
        },
        inputs);
  }

  {
    ModelConfig mc;
    mc.backbone.channels = {2, 3, 3, 4, 4};
    mc.fusion.head_width = 3;
    ModelParams<double> params = init_model<double>(mc, rng.next());
    std::vector<std::string> names;
    std::vector<Tensor<double>> inputs{rand_tensor({3, 64, 64}, rng, 0, 1)};
    for (auto& [name, t] : params) {
      // Offsets biased into (0, 1) keep bilinear taps off the integer grid,
      // where the sampling kernel has kinks.
      if (name.find(".offset.weight") != std::string::npos) t = rand_tensor(t.shape(), rng, -0.01, 0.01);
      if (name.find(".offset.bias") != std::string::npos) t = rand_tensor(t.shape(), rng, 0.3, 0.7);
      if (name.rfind("head.", 0) == 0 && name.find(".bias") != std::string::npos) t = rand_tensor(t.shape(), rng, -0.5, 0.5);
      names.push_back(name);
      inputs.push_back(t);
    }
    std::vector<GroundTruthBox> gts{{0, Box{4, 6, 20, 18}}, {1, Box{30, 28, 52, 50}}, {1, Box{2, 30, 14, 44}}};
    auto targets = assign_targets(gts, 64, 64, mc.head);
    run("backbone -> fusion -> head",
        [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
          std::map<std::string, Var<double>> bound;
          for (std::size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], v[i + 1]);
          ParamBinding<double> p(tape, std::move(bound));
          return detection_loss(model_forward(v[0], p, mc).head, targets, mc.head);
        },
        inputs, 8);
  }
  return out;
}

}  // namespace hyperfuse
