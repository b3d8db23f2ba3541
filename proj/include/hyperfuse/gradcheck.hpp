#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hyperfuse/tape.hpp"

namespace hyperfuse {

using LossFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct GradCheck {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0;
  double seconds = 0;
  bool passed = false;
};

// Central differences against the tape gradient. Relative error per entry is
// |a - n| / max(|a|, |n|, floor * max(1, |loss|)); at most max_entries per
// input are sampled (0 = all).
GradCheck check_gradient(const std::string& name, const LossFn& loss, std::vector<Tensor<double>> inputs,
                         std::size_t max_entries = 0, double tol = 1e-4, double h = 1e-5, double floor = 1e-6,
                         std::uint64_t seed = 7);

// Every differentiable op, the hypergraph convolutions, the detection loss,
// and the composed backbone -> fusion -> head graph on a 3x64x64 input.
std::vector<GradCheck> run_gradient_suite(std::uint64_t seed = 0, double tol = 1e-4);

}  // namespace hyperfuse
