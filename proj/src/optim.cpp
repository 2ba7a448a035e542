#include "stgan/optim.hpp"

#include <cmath>

#include "stgan/errors.hpp"

namespace stgan {

void AdamConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("adam: learning_rate must be > 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw ConfigError("adam: betas must lie in [0, 1)");
  }
  if (!(eps > 0)) throw ConfigError("adam: eps must be > 0");
}

AdamState make_adam_state(const ParamSet& params) {
  AdamState state;
  for (const auto& [name, entry] : params) {
    const auto n = static_cast<std::size_t>(entry.tensor.numel());
    state.moments.emplace(name, AdamState::Moments{entry.tensor.shape(),
                                                   std::vector<double>(n, 0.0),
                                                   std::vector<double>(n, 0.0)});
  }
  return state;
}

void adam_step(ParamSet& params, AdamState& state, const AdamConfig& cfg) {
  cfg.validate();
  if (state.moments.empty() && !params.empty()) state = make_adam_state(params);
  if (state.moments.size() != params.size()) {
    throw ShapeError("adam: optimizer state tracks " + std::to_string(state.moments.size()) +
                     " parameters, model has " + std::to_string(params.size()));
  }
  for (const auto& [name, entry] : params) {
    auto it = state.moments.find(name);
    if (it == state.moments.end() || it->second.shape != entry.tensor.shape()) {
      throw ShapeError("adam: no matching moment buffers for parameter " + name + " " +
                       shape_str(entry.tensor.shape()));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& [name, entry] : params) {
    Tensor p = entry.tensor;
    auto& mom = state.moments.at(name);
    auto theta = p.mutable_data();
    const auto grad = p.grad();
    const bool has_grad = !grad.empty();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = has_grad ? grad[i] : 0.0;
      mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
      mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = mom.m[i] / correction1;
      const double v_hat = mom.v[i] / correction2;
      theta[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

}  // namespace stgan
