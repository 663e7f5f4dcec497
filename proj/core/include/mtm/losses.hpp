#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mtm/episodes.hpp"
#include "mtm/error.hpp"
#include "mtm/tensor.hpp"

namespace mtm {

/// Distance used inside the prototype softmax.
enum class DistanceKind { squared_euclidean, euclidean };

std::string to_string(DistanceKind d);
DistanceKind distance_from_string(const std::string& name);

namespace detail {

template <class T>
T log_sum_exp(std::span<const T> z) {
  using std::exp;
  using std::log;
  T m = z[0];
  for (const T& x : z) {
    if (x > m) m = x;
  }
  T s = T(0.0);
  for (const T& x : z) s += exp(x - m);
  return m + log(s);
}

inline double scale_of(const std::vector<double>& scale, int label) {
  return scale.empty() ? 1.0 : scale[static_cast<std::size_t>(label)];
}

inline void check_labels(std::span<const int> labels, std::size_t num_classes) {
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw DataError("label " + std::to_string(y) + " out of range [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
}

template <class T>
BasicMatrix<T> prototypes(const BasicMatrix<T>& support, std::span<const int> labels,
                          std::size_t n_way, std::vector<std::size_t>* counts_out = nullptr) {
  if (labels.size() != support.rows()) {
    throw DimensionError("support labels", support.rows(), labels.size());
  }
  check_labels(labels, n_way);
  BasicMatrix<T> protos(n_way, support.cols());
  std::vector<std::size_t> counts(n_way, 0);
  for (std::size_t r = 0; r < support.rows(); ++r) {
    const auto k = static_cast<std::size_t>(labels[r]);
    ++counts[k];
    for (std::size_t j = 0; j < support.cols(); ++j) protos(k, j) += support(r, j);
  }
  for (std::size_t k = 0; k < n_way; ++k) {
    if (counts[k] == 0) {
      throw DataError("class " + std::to_string(k) + " has no support examples");
    }
    const T inv = T(1.0 / static_cast<double>(counts[k]));
    for (std::size_t j = 0; j < support.cols(); ++j) protos(k, j) *= inv;
  }
  if (counts_out != nullptr) *counts_out = std::move(counts);
  return protos;
}

} // namespace detail

/// Mean cross-entropy of `logits` against integer labels, optionally with a
/// per-class multiplier on each row's term.
struct CrossEntropyHead {
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::vector<double> class_scale; // empty means all ones

  template <class T>
  T evaluate(const BasicMatrix<T>& logits, std::type_identity_t<BasicMatrix<T>>* grad) const {
    if (logits.cols() != num_classes) {
      throw DimensionError("cross-entropy logits columns", num_classes, logits.cols());
    }
    if (labels.size() != logits.rows()) {
      throw DimensionError("cross-entropy labels", logits.rows(), labels.size());
    }
    detail::check_labels(labels, num_classes);
    using std::exp;
    const double inv_n = 1.0 / static_cast<double>(logits.rows());
    T total = T(0.0);
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      const auto row = logits.row(r);
      const T lse = detail::log_sum_exp<T>(row);
      const auto y = static_cast<std::size_t>(labels[r]);
      const double w = detail::scale_of(class_scale, labels[r]) * inv_n;
      total += T(w) * (lse - row[y]);
      if (grad != nullptr) {
        for (std::size_t c = 0; c < num_classes; ++c) {
          T p = exp(row[c] - lse);
          if (c == y) p -= T(1.0);
          (*grad)(r, c) = T(w) * p;
        }
      }
    }
    return total;
  }
};

/// Prototypical-network loss. Network outputs hold the support rows
/// first, then the query rows. The task loss averages over the classes that
/// have query rows and, within a class, over its query rows.
struct ProtoNetHead {
  std::size_t n_way = 0;
  std::vector<int> support_labels;
  std::vector<int> query_labels;
  DistanceKind distance = DistanceKind::squared_euclidean;
  std::vector<double> class_scale; // empty means all ones

  std::vector<double> query_weights() const;

  template <class T>
  T evaluate(const BasicMatrix<T>& outputs, std::type_identity_t<BasicMatrix<T>>* grad) const {
    using std::sqrt;
    using std::exp;
    const std::size_t ns = support_labels.size();
    const std::size_t nq = query_labels.size();
    if (outputs.rows() != ns + nq) {
      throw DimensionError("protonet output rows", ns + nq, outputs.rows());
    }
    detail::check_labels(query_labels, n_way);
    const std::size_t dim = outputs.cols();
    BasicMatrix<T> support(ns, dim);
    for (std::size_t r = 0; r < ns; ++r) {
      for (std::size_t j = 0; j < dim; ++j) support(r, j) = outputs(r, j);
    }
    if (grad != nullptr) {
      for (T& g : grad->data()) g = T(0.0);
    }
    std::vector<std::size_t> counts;
    const BasicMatrix<T> protos = detail::prototypes(support, support_labels, n_way, &counts);
    const std::vector<double> weights = query_weights();

    BasicMatrix<T> proto_grad(n_way, dim);
    std::vector<T> logits(n_way);
    std::vector<T> dist(n_way);
    T total = T(0.0);
    for (std::size_t q = 0; q < nq; ++q) {
      const std::size_t row = ns + q;
      for (std::size_t k = 0; k < n_way; ++k) {
        T sq = T(0.0);
        for (std::size_t j = 0; j < dim; ++j) {
          const T diff = outputs(row, j) - protos(k, j);
          sq += diff * diff;
        }
        dist[k] = distance == DistanceKind::squared_euclidean ? sq : sqrt(sq);
        logits[k] = -dist[k];
      }
      const T lse = detail::log_sum_exp<T>(logits);
      const auto y = static_cast<std::size_t>(query_labels[q]);
      total += T(weights[q]) * (lse - logits[y]);
      if (grad == nullptr) continue;
      for (std::size_t k = 0; k < n_way; ++k) {
        T g = exp(logits[k] - lse);
        if (k == y) g -= T(1.0);
        g *= T(weights[q]);
        // dz/dq = -dd/dq, dz/dc = +dd/dq
        T factor;
        if (distance == DistanceKind::squared_euclidean) {
          factor = T(2.0);
        } else {
          factor = value_of(dist[k]) > 0.0 ? T(1.0) / dist[k] : T(0.0);
        }
        for (std::size_t j = 0; j < dim; ++j) {
          const T dd = factor * (outputs(row, j) - protos(k, j));
          (*grad)(row, j) -= g * dd;
          proto_grad(k, j) += g * dd;
        }
      }
    }
    if (grad != nullptr) {
      for (std::size_t r = 0; r < ns; ++r) {
        const auto k = static_cast<std::size_t>(support_labels[r]);
        const T inv = T(1.0 / static_cast<double>(counts[k]));
        for (std::size_t j = 0; j < dim; ++j) (*grad)(r, j) = proto_grad(k, j) * inv;
      }
    }
    return total;
  }
};

/// Constant zero loss; useful for checking the plumbing.
struct ZeroHead {
  template <class T>
  T evaluate(const BasicMatrix<T>& outputs, std::type_identity_t<BasicMatrix<T>>* grad) const {
    if (grad != nullptr) {
      for (T& g : grad->data()) g = T(0.0);
    }
    (void)outputs;
    return T(0.0);
  }
};

/// Mean of -log softmax(logits)[label].
double cross_entropy(const Matrix& logits, std::span<const int> labels);

/// Per-class parts of the cross-entropy: (1/N) * sum over rows of class k.
std::vector<double> cross_entropy_partials(const Matrix& logits, std::span<const int> labels,
                                           std::size_t num_classes);

struct ProtoLoss {
  double total = 0.0;
  std::vector<double> per_class; // sums to total
  double accuracy = 0.0;         // nearest-prototype accuracy on the query rows
};

ProtoLoss protonet_loss(const Matrix& emb_support, const Matrix& emb_query,
                        std::span<const int> support_labels, std::span<const int> query_labels,
                        std::size_t n_way,
                        DistanceKind distance = DistanceKind::squared_euclidean);

ProtoLoss protonet_loss(const Matrix& emb_support, const Matrix& emb_query, const Task& task,
                        DistanceKind distance = DistanceKind::squared_euclidean);

/// Per-task query losses of one episode, optionally split into partial
/// losses keyed by class group (coarse id, or fine class id).
struct TaskLosses {
  std::vector<double> values;
  std::vector<std::map<int, double>> per_class;

  bool has_partials() const noexcept { return !per_class.empty(); }
  std::set<int> groups_present() const;

  /// Adds one task. `group_of_local[k]` names the group of local class k;
  /// partials of classes in the same group are summed.
  void add_task(double value, std::span<const double> local_partials,
                std::span<const int> group_of_local);
  void add_task(double value);
};

enum class WeightMode { per_task, coarse };

/// Strictly positive weights of the uncertainty-weighted objective.
struct MultiTaskWeights {
  std::vector<double> values;
  WeightMode mode = WeightMode::per_task;

  static MultiTaskWeights ones(std::size_t n, WeightMode mode = WeightMode::per_task);
  void validate() const;
  std::size_t size() const noexcept { return values.size(); }
};

/// sum_i L_i / w_i^2 + log w_i^2 without the positivity check. Depends on w
/// only through w^2, so perturbed points with negative entries are fine;
/// a zero entry yields NonFiniteError.
double multitask_objective(std::span<const double> weights, std::span<const double> losses);

/// Coarse form: only groups present in `losses` contribute, each with
/// (1 / w_k^2) * sum_i L_{i,k} + log w_k^2.
double coarse_multitask_objective(std::span<const double> weights, const TaskLosses& losses);

double multitask_loss(const MultiTaskWeights& weights, const TaskLosses& losses);
std::vector<double> multitask_weight_grad(const MultiTaskWeights& weights,
                                          const TaskLosses& losses);
double coarse_multitask_loss(const MultiTaskWeights& weights, const TaskLosses& losses);

} // namespace mtm
