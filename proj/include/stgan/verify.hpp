#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stgan/gradcheck.hpp"
#include "stgan/layers.hpp"

namespace stgan {

// One finite-difference check: a named op or network, its group
// ("primitive", "layer", "model", "loss") and its pass threshold.
struct GradCheckCase {
  std::string name;
  std::string group;
  double tolerance = 1e-5;
  std::function<FiniteDiffReport()> run;
};

struct GradCheckResult {
  std::string name;
  std::string group;
  double tolerance = 0.0;
  FiniteDiffReport report;
  double seconds = 0.0;

  bool passed() const { return report.passed(tolerance); }
};

// Every differentiable op, layer, network and loss bundle. The fault fixture
// adds an op whose backward rule is deliberately wrong, to show the suite
// can fail.
std::vector<GradCheckCase> gradcheck_registry(bool include_fault_fixture = false);

std::vector<GradCheckResult> run_gradcheck(
    const std::vector<GradCheckCase>& cases,
    const std::function<void(const GradCheckResult&)>& on_result = {});

// Fixed-width table: name, group, max rel. error, tolerance, checked,
// excluded, seconds, PASS/FAIL.
std::string format_gradcheck_table(const std::vector<GradCheckResult>& results);

// Weights ~ Normal(0, 1/fan_in), biases ~ Normal(0, 0.1), gains ~ 1 +
// Normal(0, 0.1). A generic point for gradient checks: the 0.02 training init
// leaves attention logits near zero and most gradients near the
// finite-difference noise floor.
void randomize_for_gradcheck(ParamSet& params, Rng& rng);

// mean(t * R) for a fixed standard-normal R drawn from `seed`, a scalar
// probe that weights every output element differently.
Tensor random_projection(const Tensor& t, std::uint64_t seed);

}  // namespace stgan
