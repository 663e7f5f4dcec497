#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mtm {

enum class OptimizerKind { sgd_nesterov, adam };

std::string to_string(OptimizerKind k);

struct OptimizerHyperparams {
  double learning_rate = 0.1;
  double momentum = 0.9;      // sgd_nesterov
  double weight_decay = 0.0;  // coupled: g' = g + weight_decay * theta
  double beta1 = 0.9;         // adam
  double beta2 = 0.999;       // adam
  double epsilon = 1e-8;      // adam

  friend bool operator==(const OptimizerHyperparams&, const OptimizerHyperparams&) = default;
};

/// Buffers and counters of a first-order optimizer. For sgd_nesterov
/// `first()` is the velocity and `second()` is empty.
class OptimizerState {
public:
  OptimizerState() = default;
  OptimizerState(OptimizerKind kind, OptimizerHyperparams hyper, std::size_t num_params);

  OptimizerKind kind() const noexcept { return kind_; }
  const OptimizerHyperparams& hyper() const noexcept { return hyper_; }
  void set_learning_rate(double lr) noexcept { hyper_.learning_rate = lr; }
  std::uint64_t step_count() const noexcept { return steps_; }
  std::size_t size() const noexcept { return first_.size(); }

  std::span<const double> first() const noexcept { return first_; }
  std::span<const double> second() const noexcept { return second_; }

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;

private:
  friend void sgd_nesterov_step(OptimizerState&, std::span<double>, std::span<const double>);
  friend void adam_step(OptimizerState&, std::span<double>, std::span<const double>);

  OptimizerKind kind_ = OptimizerKind::adam;
  OptimizerHyperparams hyper_;
  std::vector<double> first_;
  std::vector<double> second_;
  std::uint64_t steps_ = 0;
};

/// v <- mu * v + g',  theta <- theta - lr * (g' + mu * v),  g' = g + wd * theta.
void sgd_nesterov_step(OptimizerState& state, std::span<double> params,
                       std::span<const double> grads);

/// Bias-corrected Adam with optional coupled weight decay.
void adam_step(OptimizerState& state, std::span<double> params, std::span<const double> grads);

/// Dispatches on `state.kind()`.
void optimizer_step(OptimizerState& state, std::span<double> params,
                    std::span<const double> grads);

} // namespace mtm
