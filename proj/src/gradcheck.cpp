#include "stgan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "stgan/ops.hpp"

namespace stgan {
namespace {

// Hashes the sign of every observed kink-op input.
class SignPatternRecorder : public detail::KinkObserver {
 public:
  SignPatternRecorder() : previous_(detail::kink_observer()) {
    detail::set_kink_observer(this);
  }
  ~SignPatternRecorder() override { detail::set_kink_observer(previous_); }

  void observe(std::span<const double> inputs) override {
    for (double v : inputs) {
      const std::uint64_t code = v > 0 ? 1 : (v < 0 ? 2 : 3);
      hash_ = (hash_ ^ code) * 0x100000001b3ULL;
    }
  }
  std::uint64_t hash() const { return hash_; }

 private:
  detail::KinkObserver* previous_;
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

struct Probe {
  double value;
  std::uint64_t pattern;
};

Probe evaluate(const std::function<Tensor()>& objective) {
  NoGradGuard no_grad;
  SignPatternRecorder recorder;
  const double v = objective().item();
  return {v, recorder.hash()};
}

}  // namespace

double relative_error(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-8});
  return std::fabs(a - b) / denom;
}

FiniteDiffReport finite_diff_check(const std::function<Tensor()>& objective,
                                   const std::vector<Tensor>& inputs,
                                   FiniteDiffOptions options,
                                   const std::vector<std::string>& names) {
  if (!(options.step > 0)) throw std::invalid_argument("finite_diff_check: step must be > 0");
  for (auto t : inputs) t.zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Tensor loss = objective();
    const bool on_graph = loss.requires_grad();
    if (on_graph) loss.backward();
    for (const auto& t : inputs) {
      if (on_graph && t.has_grad()) {
        analytic.emplace_back(t.grad().begin(), t.grad().end());
      } else {
        analytic.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
      }
    }
  }

  FiniteDiffReport report;
  const double h = options.step;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor x = inputs[k];
    auto values = x.mutable_data();
    const std::size_t n = values.size();
    std::size_t stride = 1;
    if (options.max_elements_per_tensor > 0 && n > options.max_elements_per_tensor) {
      stride = (n + options.max_elements_per_tensor - 1) / options.max_elements_per_tensor;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double original = values[i];
      values[i] = original + h;
      const Probe plus = evaluate(objective);
      values[i] = original - h;
      const Probe minus = evaluate(objective);
      values[i] = original;
      if (plus.pattern != minus.pattern) {
        ++report.excluded;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * h);
      const double err = relative_error(analytic[k][i], numeric);
      ++report.checked;
      if (err > report.max_rel_error || report.worst_location.empty()) {
        report.max_rel_error = std::max(err, report.max_rel_error);
        report.worst_location =
            (k < names.size() ? names[k] : "input" + std::to_string(k)) + "[" +
            std::to_string(i) + "]";
        report.worst_autograd = analytic[k][i];
        report.worst_numeric = numeric;
      }
    }
  }
  for (auto t : inputs) t.zero_grad();
  return report;
}

FiniteDiffReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                                   Tensor x, FiniteDiffOptions options) {
  if (!x.requires_grad()) x.set_requires_grad(true);
  return finite_diff_check([&] { return f(x); }, {x}, options, {"x"});
}

}  // namespace stgan
