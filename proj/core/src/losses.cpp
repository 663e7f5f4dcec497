#include "mtm/losses.hpp"

#include <algorithm>
#include <cmath>

namespace mtm {

std::string to_string(DistanceKind d) {
  return d == DistanceKind::squared_euclidean ? "squared_euclidean" : "euclidean";
}

DistanceKind distance_from_string(const std::string& name) {
  if (name == "squared_euclidean") return DistanceKind::squared_euclidean;
  if (name == "euclidean") return DistanceKind::euclidean;
  throw ConfigError("unknown distance '" + name + "'");
}

std::vector<double> ProtoNetHead::query_weights() const {
  std::vector<std::size_t> counts(n_way, 0);
  for (int y : query_labels) ++counts[static_cast<std::size_t>(y)];
  // classes without query rows do not enter the outer average
  const auto classes = static_cast<double>(
      std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }));
  std::vector<double> w(query_labels.size());
  for (std::size_t q = 0; q < query_labels.size(); ++q) {
    const auto k = static_cast<std::size_t>(query_labels[q]);
    w[q] = detail::scale_of(class_scale, query_labels[q]) /
           (classes * static_cast<double>(counts[k]));
  }
  return w;
}

double cross_entropy(const Matrix& logits, std::span<const int> labels) {
  CrossEntropyHead head{{labels.begin(), labels.end()}, logits.cols(), {}};
  return head.evaluate(logits, nullptr);
}

std::vector<double> cross_entropy_partials(const Matrix& logits, std::span<const int> labels,
                                           std::size_t num_classes) {
  if (logits.cols() != num_classes) {
    throw DimensionError("cross-entropy logits columns", num_classes, logits.cols());
  }
  if (labels.size() != logits.rows()) {
    throw DimensionError("cross-entropy labels", logits.rows(), labels.size());
  }
  detail::check_labels(labels, num_classes);
  std::vector<double> partial(num_classes, 0.0);
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    const auto y = static_cast<std::size_t>(labels[r]);
    partial[y] += inv_n * (detail::log_sum_exp<double>(row) - row[y]);
  }
  return partial;
}

ProtoLoss protonet_loss(const Matrix& emb_support, const Matrix& emb_query,
                        std::span<const int> support_labels, std::span<const int> query_labels,
                        std::size_t n_way, DistanceKind distance) {
  if (emb_support.cols() != emb_query.cols()) {
    throw DimensionError("query embedding width", emb_support.cols(), emb_query.cols());
  }
  if (query_labels.size() != emb_query.rows()) {
    throw DimensionError("query labels", emb_query.rows(), query_labels.size());
  }
  detail::check_labels(query_labels, n_way);
  const Matrix protos = detail::prototypes(emb_support, support_labels, n_way);

  ProtoNetHead head;
  head.n_way = n_way;
  head.query_labels.assign(query_labels.begin(), query_labels.end());
  const std::vector<double> w = head.query_weights();

  ProtoLoss out;
  out.per_class.assign(n_way, 0.0);
  std::vector<double> logits(n_way);
  std::size_t correct = 0;
  for (std::size_t q = 0; q < emb_query.rows(); ++q) {
    for (std::size_t k = 0; k < n_way; ++k) {
      double sq = 0.0;
      for (std::size_t j = 0; j < emb_query.cols(); ++j) {
        const double diff = emb_query(q, j) - protos(k, j);
        sq += diff * diff;
      }
      logits[k] = distance == DistanceKind::squared_euclidean ? -sq : -std::sqrt(sq);
    }
    const auto y = static_cast<std::size_t>(query_labels[q]);
    const double term = w[q] * (detail::log_sum_exp<double>(logits) - logits[y]);
    out.per_class[y] += term;
    const auto pred = static_cast<std::size_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (pred == y) ++correct;
  }
  for (double p : out.per_class) out.total += p;
  out.accuracy = emb_query.rows() == 0
                     ? 0.0
                     : static_cast<double>(correct) / static_cast<double>(emb_query.rows());
  return out;
}

ProtoLoss protonet_loss(const Matrix& emb_support, const Matrix& emb_query, const Task& task,
                        DistanceKind distance) {
  return protonet_loss(emb_support, emb_query, task.support_labels, task.query_labels,
                       task.n_way(), distance);
}

// ---------------------------------------------------------------------------

std::set<int> TaskLosses::groups_present() const {
  std::set<int> out;
  for (const auto& m : per_class) {
    for (const auto& [k, v] : m) out.insert(k);
  }
  return out;
}

void TaskLosses::add_task(double value, std::span<const double> local_partials,
                          std::span<const int> group_of_local) {
  if (local_partials.size() != group_of_local.size()) {
    throw DimensionError("partial loss groups", local_partials.size(), group_of_local.size());
  }
  if (values.size() != per_class.size()) {
    throw DataError("cannot mix tasks with and without partial losses");
  }
  std::map<int, double> m;
  for (std::size_t k = 0; k < local_partials.size(); ++k) m[group_of_local[k]] += local_partials[k];
  values.push_back(value);
  per_class.push_back(std::move(m));
}

void TaskLosses::add_task(double value) {
  if (!per_class.empty()) throw DataError("cannot mix tasks with and without partial losses");
  values.push_back(value);
}

MultiTaskWeights MultiTaskWeights::ones(std::size_t n, WeightMode mode) {
  return {std::vector<double>(n, 1.0), mode};
}

void MultiTaskWeights::validate() const {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0) || !std::isfinite(values[i])) {
      throw ConfigError("multi-task weight " + std::to_string(i) +
                        " must be positive and finite, got " + std::to_string(values[i]));
    }
  }
}

double multitask_objective(std::span<const double> weights, std::span<const double> losses) {
  if (weights.size() != losses.size()) {
    throw DimensionError("multi-task weights", losses.size(), weights.size());
  }
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w2 = weights[i] * weights[i];
    total += losses[i] / w2 + std::log(w2);
  }
  if (!std::isfinite(total)) throw NonFiniteError("multi-task objective", -1);
  return total;
}

namespace {

void check_group(int k, std::size_t n) {
  if (k < 0 || static_cast<std::size_t>(k) >= n) {
    throw DataError("class group " + std::to_string(k) + " has no weight (have " +
                    std::to_string(n) + ")");
  }
}

} // namespace

double coarse_multitask_objective(std::span<const double> weights, const TaskLosses& losses) {
  if (!losses.has_partials()) throw DataError("coarse multi-task loss needs partial losses");
  std::map<int, double> summed;
  for (const auto& m : losses.per_class) {
    for (const auto& [k, v] : m) {
      check_group(k, weights.size());
      summed[k] += v;
    }
  }
  double total = 0.0;
  for (const auto& [k, v] : summed) {
    const double w2 = weights[static_cast<std::size_t>(k)] * weights[static_cast<std::size_t>(k)];
    total += v / w2 + std::log(w2);
  }
  if (!std::isfinite(total)) throw NonFiniteError("coarse multi-task objective", -1);
  return total;
}

double multitask_loss(const MultiTaskWeights& weights, const TaskLosses& losses) {
  if (weights.mode != WeightMode::per_task) throw ConfigError("expected per-task weights");
  weights.validate();
  return multitask_objective(weights.values, losses.values);
}

std::vector<double> multitask_weight_grad(const MultiTaskWeights& weights,
                                          const TaskLosses& losses) {
  if (weights.mode != WeightMode::per_task) throw ConfigError("expected per-task weights");
  weights.validate();
  if (weights.size() != losses.values.size()) {
    throw DimensionError("multi-task weights", losses.values.size(), weights.size());
  }
  std::vector<double> g(weights.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double w = weights.values[i];
    g[i] = -2.0 * losses.values[i] / (w * w * w) + 2.0 / w;
  }
  return g;
}

double coarse_multitask_loss(const MultiTaskWeights& weights, const TaskLosses& losses) {
  if (weights.mode != WeightMode::coarse) throw ConfigError("expected coarse weights");
  weights.validate();
  return coarse_multitask_objective(weights.values, losses);
}

} // namespace mtm
