#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stgan/layers.hpp"

namespace stgan {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// First/second moment buffers keyed by parameter name, plus the step count.
struct AdamState {
  struct Moments {
    Shape shape;
    std::vector<double> m;
    std::vector<double> v;
  };
  std::map<std::string, Moments> moments;
  std::int64_t step = 0;
};

// Zeroed state mirroring `params`.
AdamState make_adam_state(const ParamSet& params);

// One bias-corrected Adam update using each parameter's accumulated grad.
// Parameters without a gradient are treated as having a zero gradient.
void adam_step(ParamSet& params, AdamState& state, const AdamConfig& cfg);

}  // namespace stgan
