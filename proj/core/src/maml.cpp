#include "mtm/maml.hpp"

#include <algorithm>
#include <cmath>

namespace mtm {

void MamlConfig::validate() const {
  if (!(adapt_lr > 0.0)) throw ConfigError("maml adapt_lr must be positive");
  if (!(meta_lr > 0.0)) throw ConfigError("maml meta_lr must be positive");
  if (inner_steps_train < 1 || inner_steps_eval < 1) {
    throw ConfigError("maml inner steps must be at least 1");
  }
}

AdaptedParams inner_adapt(std::span<const double> theta, const Objective& support,
                          double adapt_lr, int steps, bool keep_tape) {
  if (steps < 0) throw ConfigError("inner steps must be nonnegative");
  if (theta.size() != support.dimension()) {
    throw DimensionError("inner_adapt parameters", support.dimension(), theta.size());
  }
  AdaptedParams out;
  out.steps = steps;
  out.theta_prime.assign(theta.begin(), theta.end());
  std::vector<double> grad(theta.size());
  for (int k = 0; k < steps; ++k) {
    if (keep_tape) out.tape.push_back(out.theta_prime);
    double loss = 0.0;
    try {
      loss = support.value_and_grad(out.theta_prime, grad);
    } catch (const NonFiniteError&) {
      throw NonFiniteError("inner adaptation step", k);
    }
    if (!std::isfinite(loss)) throw NonFiniteError("inner adaptation step", k);
    for (std::size_t j = 0; j < grad.size(); ++j) out.theta_prime[j] -= adapt_lr * grad[j];
  }
  return out;
}

AdaptedParams inner_adapt(std::span<const double> theta, const Objective& support,
                          const MamlConfig& cfg) {
  return inner_adapt(theta, support, cfg.adapt_lr, cfg.inner_steps_train, cfg.second_order);
}

std::vector<double> backprop_through_adaptation(const AdaptedParams& adapted,
                                                const Objective& support, double adapt_lr,
                                                bool second_order,
                                                std::span<const double> grad_at_prime) {
  std::vector<double> v(grad_at_prime.begin(), grad_at_prime.end());
  if (!second_order || adapted.steps == 0) return v;
  if (adapted.tape.size() != static_cast<std::size_t>(adapted.steps)) {
    throw ConfigError("second-order outer gradient requested but the adaptation tape is missing");
  }
  std::vector<double> hv(v.size());
  for (std::size_t k = adapted.tape.size(); k-- > 0;) {
    support.hvp(adapted.tape[k], v, hv);
    for (std::size_t j = 0; j < v.size(); ++j) v[j] -= adapt_lr * hv[j];
  }
  return v;
}

OuterResult outer_grad(std::span<const double> theta, std::span<const TaskObjectives> tasks,
                       const MamlConfig& cfg, const MultiTaskWeights* weights) {
  if (weights != nullptr) {
    weights->validate();
    if (weights->size() != tasks.size()) {
      throw DimensionError("multi-task weights", tasks.size(), weights->size());
    }
  }
  OuterResult out;
  out.grad.assign(theta.size(), 0.0);
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const AdaptedParams adapted = inner_adapt(theta, *tasks[i].support, cfg);
    const double loss = tasks[i].query->value_and_grad(adapted.theta_prime, g);
    out.losses.add_task(loss);
    const auto back = backprop_through_adaptation(adapted, *tasks[i].support, cfg.adapt_lr,
                                                  cfg.second_order, g);
    const double scale =
        weights == nullptr ? 1.0 : 1.0 / (weights->values[i] * weights->values[i]);
    for (std::size_t j = 0; j < theta.size(); ++j) out.grad[j] += scale * back[j];
  }
  return out;
}

namespace {

NetObjective<CrossEntropyHead> support_objective(const MlpShape& shape, const Task& task) {
  return {shape, task.support, CrossEntropyHead{task.support_labels, task.n_way(), {}}};
}

void check_head_width(const MlpShape& shape, const Task& task) {
  if (shape.output_dim() != task.n_way()) {
    throw DimensionError("maml output dimension vs n_way", task.n_way(), shape.output_dim());
  }
}

} // namespace

std::vector<PreparedTask> maml_prepare(const Backbone& net, const Episode& episode,
                                       const MamlConfig& cfg) {
  std::vector<PreparedTask> prepared;
  prepared.reserve(episode.tasks.size());
  for (const Task& task : episode.tasks) {
    check_head_width(net.shape(), task);
    const auto support = support_objective(net.shape(), task);
    PreparedTask p;
    p.adapted = inner_adapt(net.params().values(), support, cfg);
    const Matrix logits =
        detail::forward<double>(net.shape(), p.adapted.theta_prime, task.query, nullptr);
    p.class_partials = cross_entropy_partials(logits, task.query_labels, task.n_way());
    for (double x : p.class_partials) p.query_loss += x;
    if (!std::isfinite(p.query_loss)) throw NonFiniteError("maml query loss", -1);
    prepared.push_back(std::move(p));
  }
  return prepared;
}

std::vector<double> maml_weighted_grad(const Backbone& net, const Episode& episode,
                                       const std::vector<PreparedTask>& prepared,
                                       const MamlConfig& cfg,
                                       const std::vector<std::vector<double>>& class_scales) {
  if (prepared.size() != episode.tasks.size() || class_scales.size() != episode.tasks.size()) {
    throw DimensionError("prepared maml tasks", episode.tasks.size(), prepared.size());
  }
  const std::size_t n = net.params().size();
  std::vector<double> total(n, 0.0);
  std::vector<double> g(n);
  for (std::size_t i = 0; i < episode.tasks.size(); ++i) {
    const Task& task = episode.tasks[i];
    const NetObjective<CrossEntropyHead> query(
        net.shape(), task.query, CrossEntropyHead{task.query_labels, task.n_way(), class_scales[i]});
    query.value_and_grad(prepared[i].adapted.theta_prime, g);
    const auto support = support_objective(net.shape(), task);
    const auto back =
        backprop_through_adaptation(prepared[i].adapted, support, cfg.adapt_lr, cfg.second_order, g);
    for (std::size_t j = 0; j < n; ++j) total[j] += back[j];
  }
  return total;
}

OuterResult outer_grad(const Backbone& net, const Episode& episode, const MamlConfig& cfg,
                       const MultiTaskWeights* weights) {
  if (weights != nullptr) {
    weights->validate();
    if (weights->size() != episode.tasks.size()) {
      throw DimensionError("multi-task weights", episode.tasks.size(), weights->size());
    }
  }
  const auto prepared = maml_prepare(net, episode, cfg);
  std::vector<std::vector<double>> scales;
  OuterResult out;
  for (std::size_t i = 0; i < episode.tasks.size(); ++i) {
    const Task& task = episode.tasks[i];
    const double s = weights == nullptr ? 1.0 : 1.0 / (weights->values[i] * weights->values[i]);
    scales.emplace_back(task.n_way(), s);
    out.losses.add_task(prepared[i].query_loss, prepared[i].class_partials, task.class_ids);
  }
  out.grad = maml_weighted_grad(net, episode, prepared, cfg, scales);
  return out;
}

double maml_task_accuracy(const Backbone& net, const Task& task, const MamlConfig& cfg) {
  check_head_width(net.shape(), task);
  const auto support = support_objective(net.shape(), task);
  const auto adapted =
      inner_adapt(net.params().values(), support, cfg.adapt_lr, cfg.inner_steps_eval, false);
  const Matrix logits =
      detail::forward<double>(net.shape(), adapted.theta_prime, task.query, nullptr);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
    if (pred == task.query_labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

std::vector<double> maml_eval(const Backbone& net, const Episode& episode,
                              const MamlConfig& cfg) {
  std::vector<double> acc;
  acc.reserve(episode.tasks.size());
  for (const Task& task : episode.tasks) acc.push_back(maml_task_accuracy(net, task, cfg));
  return acc;
}

} // namespace mtm
