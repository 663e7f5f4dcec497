#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mtm/episodes.hpp"
#include "mtm/losses.hpp"
#include "mtm/mlp.hpp"

namespace mtm {

/// A twice-differentiable scalar function of the flat parameters.
class Objective {
public:
  virtual ~Objective() = default;

  virtual std::size_t dimension() const = 0;
  virtual double value(std::span<const double> theta) const = 0;
  virtual double value_and_grad(std::span<const double> theta, std::span<double> grad) const = 0;
  /// out = Hessian(theta) * direction
  virtual void hvp(std::span<const double> theta, std::span<const double> direction,
                   std::span<double> out) const = 0;
};

/// Loss of a fixed batch under an MLP with the given head.
template <LossHead Head>
class NetObjective final : public Objective {
public:
  NetObjective(MlpShape shape, Matrix batch, Head head)
      : shape_(std::move(shape)), batch_(std::move(batch)), head_(std::move(head)) {}

  std::size_t dimension() const override { return shape_.parameter_count(); }

  double value(std::span<const double> theta) const override {
    const Matrix out = detail::forward<double>(shape_, theta, batch_, nullptr);
    return head_.evaluate(out, nullptr);
  }

  double value_and_grad(std::span<const double> theta, std::span<double> grad) const override {
    auto [loss, g] = loss_and_grad<double>(shape_, theta, batch_, head_);
    std::copy(g.begin(), g.end(), grad.begin());
    return loss;
  }

  void hvp(std::span<const double> theta, std::span<const double> direction,
           std::span<double> out) const override {
    const auto h = hessian_vector_product(shape_, theta, direction, batch_, head_);
    std::copy(h.begin(), h.end(), out.begin());
  }

  const Head& head() const noexcept { return head_; }

private:
  MlpShape shape_;
  Matrix batch_;
  Head head_;
};

struct MamlConfig {
  double adapt_lr = 0.01;      // alpha
  double meta_lr = 1e-3;       // beta
  int inner_steps_train = 5;
  int inner_steps_eval = 10;
  bool second_order = true;

  void validate() const;
};

/// theta' after the inner loop, plus the iterates it passed through when
/// the outer gradient has to be propagated back through the adaptation.
struct AdaptedParams {
  std::vector<double> theta_prime;
  std::vector<std::vector<double>> tape; // theta_0 .. theta_{K-1}
  int steps = 0;

  bool has_tape() const noexcept { return steps == 0 || !tape.empty(); }
};

/// K steps of theta <- theta - alpha * grad L_support(theta).
AdaptedParams inner_adapt(std::span<const double> theta, const Objective& support,
                          double adapt_lr, int steps, bool keep_tape);

AdaptedParams inner_adapt(std::span<const double> theta, const Objective& support,
                          const MamlConfig& cfg);

/// Pulls a gradient taken at theta' back to theta. With `second_order`,
/// applies (I - alpha * H_support(theta_k)) for k = K-1 .. 0; otherwise the
/// gradient passes through unchanged (first-order approximation).
std::vector<double> backprop_through_adaptation(const AdaptedParams& adapted,
                                                const Objective& support, double adapt_lr,
                                                bool second_order,
                                                std::span<const double> grad_at_prime);

struct TaskObjectives {
  const Objective* support = nullptr;
  const Objective* query = nullptr;
};

struct OuterResult {
  std::vector<double> grad;
  TaskLosses losses;
};

/// Gradient of sum_i L_query_i(theta'_i) / w_i^2 w.r.t. theta, or of the
/// plain sum when `weights` is null.
OuterResult outer_grad(std::span<const double> theta, std::span<const TaskObjectives> tasks,
                       const MamlConfig& cfg, const MultiTaskWeights* weights = nullptr);

/// Per-task state between computing the query losses and the parameter
/// gradient, so that multi-task weights can be updated in between.
struct PreparedTask {
  AdaptedParams adapted;
  double query_loss = 0.0;
  std::vector<double> class_partials; // per local class, sums to query_loss
};

std::vector<PreparedTask> maml_prepare(const Backbone& net, const Episode& episode,
                                       const MamlConfig& cfg);

/// sum over tasks of the outer gradient of sum_k scale[i][k] * L_{i,k}.
std::vector<double> maml_weighted_grad(const Backbone& net, const Episode& episode,
                                       const std::vector<PreparedTask>& prepared,
                                       const MamlConfig& cfg,
                                       const std::vector<std::vector<double>>& class_scales);

/// Episode form of outer_grad. Partial losses are keyed by dataset class id.
OuterResult outer_grad(const Backbone& net, const Episode& episode, const MamlConfig& cfg,
                       const MultiTaskWeights* weights = nullptr);

/// Query accuracy after `inner_steps_eval` adaptation steps.
double maml_task_accuracy(const Backbone& net, const Task& task, const MamlConfig& cfg);

std::vector<double> maml_eval(const Backbone& net, const Episode& episode,
                              const MamlConfig& cfg);

} // namespace mtm
