#include "mtm/weight_optimizers.hpp"

#include <algorithm>
#include <cmath>

namespace mtm {

void GainSchedule::validate() const {
  if (!(a0 > 0.0) || !(b0 > 0.0)) throw ConfigError("gain constants a0, b0 must be positive");
  if (!(a_exp > 0.0) || !(b_exp > 0.0)) {
    throw ConfigError("gain exponents a_exp, b_exp must be positive");
  }
}

Gains gains(const GainSchedule& schedule, std::uint64_t n) {
  if (n == 0) throw ConfigError("gain schedule is indexed from n = 1");
  const auto x = static_cast<double>(n);
  return {schedule.a0 / std::pow(x, schedule.a_exp), schedule.b0 / std::pow(x, schedule.b_exp)};
}

std::string to_string(WeightOptKind k) {
  switch (k) {
  case WeightOptKind::spsa: return "spsa";
  case WeightOptKind::spsa_track: return "spsa_track";
  case WeightOptKind::backprop: return "backprop";
  case WeightOptKind::inner_first_order: return "inner_first_order";
  case WeightOptKind::spsa_coarse: return "spsa_coarse";
  }
  return "?";
}

WeightOptKind weight_opt_kind_from_string(const std::string& name) {
  for (auto k : {WeightOptKind::spsa, WeightOptKind::spsa_track, WeightOptKind::backprop,
                 WeightOptKind::inner_first_order, WeightOptKind::spsa_coarse}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown weight optimizer '" + name + "'");
}

bool is_spsa_kind(WeightOptKind k) noexcept {
  return k == WeightOptKind::spsa || k == WeightOptKind::spsa_track ||
         k == WeightOptKind::spsa_coarse;
}

WeightOptimizer WeightOptimizer::perturbation(WeightOptKind kind, std::size_t num_weights,
                                              GainSchedule schedule,
                                              RngStream perturbation_stream, bool normalize) {
  if (!is_spsa_kind(kind)) throw ConfigError(to_string(kind) + " is not a perturbation method");
  if (num_weights == 0) throw ConfigError("need at least one multi-task weight");
  schedule.validate();
  WeightOptimizer w;
  w.kind_ = kind;
  w.weights_.assign(num_weights, 1.0);
  w.schedule_ = schedule;
  w.rng_ = perturbation_stream;
  w.normalize_ = normalize;
  return w;
}

WeightOptimizer WeightOptimizer::gradient(WeightOptKind kind, std::size_t num_weights,
                                          const OptimizerState& optimizer) {
  if (kind != WeightOptKind::backprop && kind != WeightOptKind::inner_first_order) {
    throw ConfigError(to_string(kind) + " is not a gradient method");
  }
  if (kind == WeightOptKind::inner_first_order && optimizer.kind() != OptimizerKind::adam) {
    throw ConfigError("inner_first_order weights use Adam");
  }
  if (optimizer.size() != num_weights) {
    throw DimensionError("weight optimizer state", num_weights, optimizer.size());
  }
  WeightOptimizer w;
  w.kind_ = kind;
  w.weights_.assign(num_weights, 1.0);
  w.optimizer_ = optimizer;
  return w;
}

MultiTaskWeights WeightOptimizer::as_multitask_weights() const {
  return {weights_, kind_ == WeightOptKind::spsa_coarse ? WeightMode::coarse
                                                        : WeightMode::per_task};
}

void WeightOptimizer::set_weights(std::vector<double> w) {
  if (w.size() != weights_.size()) throw DimensionError("weights", weights_.size(), w.size());
  weights_ = std::move(w);
}

SpsaStep WeightOptimizer::perturb_and_step(const LossEval& loss_eval, std::span<const int> active,
                                           bool hold) {
  SpsaStep step;
  step.n = updates_ + 1;
  step.gain = gains(schedule_, step.n);
  const std::size_t m = weights_.size();

  std::vector<bool> mask(m, active.empty());
  for (int k : active) {
    if (k < 0 || static_cast<std::size_t>(k) >= m) {
      throw DimensionError("active weight index", m, static_cast<std::size_t>(k));
    }
    mask[static_cast<std::size_t>(k)] = true;
  }
  // One draw per coordinate regardless of the mask keeps the stream aligned.
  step.delta.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    const int d = rng_.rademacher();
    step.delta[k] = mask[k] ? d : 0;
  }

  if (hold) step.hold = weights_;
  const std::vector<double>& centre = weights_;
  std::vector<double> probe(m);
  for (std::size_t k = 0; k < m; ++k) probe[k] = centre[k] - step.gain.beta * step.delta[k];
  step.loss_minus = loss_eval(probe);
  for (std::size_t k = 0; k < m; ++k) probe[k] = centre[k] + step.gain.beta * step.delta[k];
  step.loss_plus = loss_eval(probe);
  if (!std::isfinite(step.loss_minus) || !std::isfinite(step.loss_plus)) {
    throw NonFiniteError("perturbation observation", static_cast<long>(step.n));
  }

  const double diff = (step.loss_plus - step.loss_minus) / (2.0 * step.gain.beta);
  std::vector<double> next = centre;
  for (std::size_t k = 0; k < m; ++k) {
    if (!mask[k]) continue;
    next[k] = std::max(centre[k] - step.gain.alpha * step.delta[k] * diff, kWeightFloor);
  }
  weights_ = next;
  step.updated = std::move(next);
  ++updates_;
  return step;
}

SpsaStep WeightOptimizer::spsa_update(const LossEval& loss_eval, std::span<const int> active) {
  if (kind_ != WeightOptKind::spsa && kind_ != WeightOptKind::spsa_coarse) {
    throw ConfigError("spsa_update called on a " + to_string(kind_) + " optimizer");
  }
  return perturb_and_step(loss_eval, active, false);
}

SpsaStep WeightOptimizer::spsa_track_update(const LossEval& loss_eval) {
  if (kind_ != WeightOptKind::spsa_track) {
    throw ConfigError("spsa_track_update called on a " + to_string(kind_) + " optimizer");
  }
  return perturb_and_step(loss_eval, {}, true);
}

void WeightOptimizer::gradient_step(const TaskLosses& losses) {
  const auto grad = multitask_weight_grad(as_multitask_weights(), losses);
  optimizer_step(optimizer_, weights_, grad);
  for (double& w : weights_) w = std::max(w, kWeightFloor);
  ++updates_;
}

void WeightOptimizer::backprop_step(const TaskLosses& losses) {
  if (kind_ != WeightOptKind::backprop) {
    throw ConfigError("backprop_step called on a " + to_string(kind_) + " optimizer");
  }
  gradient_step(losses);
}

void WeightOptimizer::inner_first_order_step(const TaskLosses& losses) {
  if (kind_ != WeightOptKind::inner_first_order) {
    throw ConfigError("inner_first_order_step called on a " + to_string(kind_) + " optimizer");
  }
  gradient_step(losses);
}

void WeightOptimizer::renormalize(std::span<const int> active) {
  if (active.empty()) {
    weights_ = mtm::renormalize(weights_);
    return;
  }
  std::vector<double> sub;
  for (int k : active) sub.push_back(weights_.at(static_cast<std::size_t>(k)));
  sub = mtm::renormalize(sub);
  for (std::size_t j = 0; j < active.size(); ++j) {
    weights_[static_cast<std::size_t>(active[j])] = sub[j];
  }
}

std::vector<double> renormalize(std::span<const double> weights) {
  double norm2 = 0.0;
  for (double w : weights) norm2 += w * w;
  if (!(norm2 > 0.0) || !std::isfinite(norm2)) {
    throw ConfigError("cannot renormalize a zero or non-finite weight vector");
  }
  const double scale = std::sqrt(static_cast<double>(weights.size()) / norm2);
  std::vector<double> out(weights.begin(), weights.end());
  for (double& w : out) w *= scale;
  return out;
}

} // namespace mtm
