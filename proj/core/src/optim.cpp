#include "mtm/optim.hpp"

#include <cmath>

#include "mtm/error.hpp"

namespace mtm {

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::adam ? "adam" : "sgd_nesterov";
}

OptimizerState::OptimizerState(OptimizerKind kind, OptimizerHyperparams hyper,
                               std::size_t num_params)
    : kind_(kind), hyper_(hyper), first_(num_params, 0.0) {
  if (kind_ == OptimizerKind::adam) second_.assign(num_params, 0.0);
  if (!(hyper_.learning_rate >= 0.0)) throw ConfigError("learning rate must be nonnegative");
}

namespace {

void check_lengths(const OptimizerState& state, std::span<double> params,
                   std::span<const double> grads) {
  if (params.size() != state.size()) {
    throw DimensionError("optimizer parameter length", state.size(), params.size());
  }
  if (grads.size() != params.size()) {
    throw DimensionError("optimizer gradient length", params.size(), grads.size());
  }
}

} // namespace

void sgd_nesterov_step(OptimizerState& state, std::span<double> params,
                       std::span<const double> grads) {
  if (state.kind_ != OptimizerKind::sgd_nesterov) {
    throw ConfigError("sgd_nesterov_step called on a non-SGD optimizer state");
  }
  check_lengths(state, params, grads);
  const auto& h = state.hyper_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + h.weight_decay * params[i];
    double& v = state.first_[i];
    v = h.momentum * v + g;
    params[i] -= h.learning_rate * (g + h.momentum * v);
  }
  ++state.steps_;
}

void adam_step(OptimizerState& state, std::span<double> params, std::span<const double> grads) {
  if (state.kind_ != OptimizerKind::adam) {
    throw ConfigError("adam_step called on a non-Adam optimizer state");
  }
  check_lengths(state, params, grads);
  const auto& h = state.hyper_;
  const auto t = static_cast<double>(state.steps_ + 1);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + h.weight_decay * params[i];
    double& m = state.first_[i];
    double& v = state.second_[i];
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g * g;
    params[i] -= h.learning_rate * (m / c1) / (std::sqrt(v / c2) + h.epsilon);
  }
  ++state.steps_;
}

void optimizer_step(OptimizerState& state, std::span<double> params,
                    std::span<const double> grads) {
  if (state.kind() == OptimizerKind::adam) {
    adam_step(state, params, grads);
  } else {
    sgd_nesterov_step(state, params, grads);
  }
}

} // namespace mtm
