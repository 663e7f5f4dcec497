#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtm/losses.hpp"
#include "mtm/optim.hpp"
#include "mtm/rng.hpp"

namespace mtm {

/// alpha_n = a0 / n^a_exp (step size), beta_n = b0 / n^b_exp (perturbation size).
struct GainSchedule {
  double a0 = 0.25;
  double a_exp = 1.0 / 6.0;
  double b0 = 15.0;
  double b_exp = 1.0 / 24.0;

  void validate() const;
};

struct Gains {
  double alpha = 0.0;
  double beta = 0.0;
};

Gains gains(const GainSchedule& schedule, std::uint64_t n);

enum class WeightOptKind { spsa, spsa_track, backprop, inner_first_order, spsa_coarse };

std::string to_string(WeightOptKind k);
WeightOptKind weight_opt_kind_from_string(const std::string& name);
bool is_spsa_kind(WeightOptKind k) noexcept;

/// Observed (possibly noisy) objective at a weight vector.
using LossEval = std::function<double(std::span<const double>)>;

/// Smallest value a weight may take after an update.
inline constexpr double kWeightFloor = 1e-3;

/// Record of one perturbation update, for tracing and tests.
struct SpsaStep {
  std::uint64_t n = 0;
  Gains gain;
  std::vector<int> delta;       // +-1, zero on coordinates that were not active
  double loss_plus = 0.0;       // observation at w + beta * delta
  double loss_minus = 0.0;      // observation at w - beta * delta
  std::vector<double> hold;     // odd-index estimate (equals the previous estimate)
  std::vector<double> updated;  // even-index estimate after clamping
};

/// Multi-task weight state plus whichever optimizer drives it.
class WeightOptimizer {
public:
  /// Zeroth-order optimizer (spsa, spsa_track or spsa_coarse) starting at all ones.
  static WeightOptimizer perturbation(WeightOptKind kind, std::size_t num_weights,
                                      GainSchedule schedule, RngStream perturbation_stream,
                                      bool normalize);

  /// Gradient optimizer (backprop or inner_first_order) starting at all ones.
  static WeightOptimizer gradient(WeightOptKind kind, std::size_t num_weights,
                                  const OptimizerState& optimizer);

  WeightOptKind kind() const noexcept { return kind_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  MultiTaskWeights as_multitask_weights() const;
  void set_weights(std::vector<double> w);
  std::uint64_t updates() const noexcept { return updates_; }
  bool normalize() const noexcept { return normalize_; }
  const GainSchedule& schedule() const noexcept { return schedule_; }
  const OptimizerState& optimizer() const noexcept { return optimizer_; }

  /// w <- w - alpha_n * delta * (L+ - L-) / (2 beta_n) from one pair of
  /// observations. `active` restricts perturbation and update to a subset
  /// of coordinates (the coarse groups present in an episode).
  SpsaStep spsa_update(const LossEval& loss_eval, std::span<const int> active = {});

  /// Tracking form: the estimate at the odd index is held at its
  /// predecessor, both observations are centred on it, and the even index
  /// carries the update.
  SpsaStep spsa_track_update(const LossEval& loss_eval);

  /// One step of the model's optimizer kind on the analytic weight gradient.
  void backprop_step(const TaskLosses& losses);

  /// One step of a dedicated Adam optimizer on the analytic weight gradient.
  void inner_first_order_step(const TaskLosses& losses);

  /// Rescales to L2 norm sqrt(M), or sqrt(|active|) over `active` only.
  void renormalize(std::span<const int> active = {});

private:
  WeightOptimizer() = default;
  SpsaStep perturb_and_step(const LossEval& loss_eval, std::span<const int> active, bool hold);
  void gradient_step(const TaskLosses& losses);

  WeightOptKind kind_ = WeightOptKind::spsa;
  std::vector<double> weights_;
  GainSchedule schedule_;
  RngStream rng_;
  bool normalize_ = false;
  OptimizerState optimizer_;
  std::uint64_t updates_ = 0;
};

/// w * sqrt(M) / ||w||_2.
std::vector<double> renormalize(std::span<const double> weights);

} // namespace mtm
