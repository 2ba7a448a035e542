#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "stgan/tensor.hpp"

namespace stgan {

struct FiniteDiffOptions {
  double step = 1e-5;
  // Check at most this many elements per tensor (evenly strided); 0 = all.
  std::size_t max_elements_per_tensor = 0;
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Elements where a relu/leaky_relu/abs input changed sign between the
  // +step and -step evaluations; their central difference is meaningless.
  std::size_t excluded = 0;
  std::string worst_location;
  double worst_autograd = 0.0;
  double worst_numeric = 0.0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

// Compares autograd gradients of `objective` (a rank-0 tensor computed from
// the current contents of `inputs`) with central differences. The inputs
// must be leaves with requires_grad set; they are perturbed in place and
// restored bit-exactly. Existing gradients on the inputs are cleared.
FiniteDiffReport finite_diff_check(const std::function<Tensor()>& objective,
                                   const std::vector<Tensor>& inputs,
                                   FiniteDiffOptions options = {},
                                   const std::vector<std::string>& names = {});

// Single-input convenience form.
FiniteDiffReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                                   Tensor x, FiniteDiffOptions options = {});

}  // namespace stgan
