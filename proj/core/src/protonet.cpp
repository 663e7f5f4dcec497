#include "mtm/protonet.hpp"

#include <algorithm>

namespace mtm {

Matrix compute_prototypes(const Matrix& emb_support, std::span<const int> labels,
                          std::size_t n_way) {
  return detail::prototypes(emb_support, labels, n_way);
}

Matrix compute_prototypes(const Matrix& emb_support, const Task& task) {
  return compute_prototypes(emb_support, task.support_labels, task.n_way());
}

Matrix stack_support_query(const Task& task) {
  if (task.support.cols() != task.query.cols()) {
    throw DimensionError("query feature width", task.support.cols(), task.query.cols());
  }
  const std::size_t d = task.support.cols();
  Matrix batch(task.support.rows() + task.query.rows(), d);
  auto dst = batch.data();
  std::copy(task.support.data().begin(), task.support.data().end(), dst.begin());
  std::copy(task.query.data().begin(), task.query.data().end(),
            dst.begin() + static_cast<std::ptrdiff_t>(task.support.data().size()));
  return batch;
}

ProtoTaskResult protonet_task_loss(const Backbone& net, const Task& task, DistanceKind distance) {
  const Matrix emb_support = net.forward(task.support);
  const Matrix emb_query = net.forward(task.query);
  const ProtoLoss l = protonet_loss(emb_support, emb_query, task, distance);
  return {l.total, l.per_class, l.accuracy};
}

Gradient protonet_task_grad(const Backbone& net, const Task& task, DistanceKind distance,
                            std::span<const double> class_scale) {
  ProtoNetHead head;
  head.n_way = task.n_way();
  head.support_labels = task.support_labels;
  head.query_labels = task.query_labels;
  head.distance = distance;
  head.class_scale.assign(class_scale.begin(), class_scale.end());
  return backprop_grads(net, head, stack_support_query(task));
}

TaskLosses protonet_train_step(Backbone& net, const Episode& episode,
                               const MultiTaskWeights* weights, OptimizerState& optimizer,
                               DistanceKind distance) {
  if (episode.tasks.empty()) throw DataError("episode has no tasks");
  if (weights != nullptr) {
    weights->validate();
    if (weights->size() != episode.tasks.size()) {
      throw DimensionError("multi-task weights", episode.tasks.size(), weights->size());
    }
  }
  TaskLosses losses;
  std::vector<double> total(net.params().size(), 0.0);
  for (std::size_t i = 0; i < episode.tasks.size(); ++i) {
    const Task& task = episode.tasks[i];
    const double s = weights == nullptr ? 1.0 : 1.0 / (weights->values[i] * weights->values[i]);
    const std::vector<double> scale(task.n_way(), s);
    const Gradient g = protonet_task_grad(net, task, distance, scale);
    const ProtoTaskResult r = protonet_task_loss(net, task, distance);
    losses.add_task(r.loss, r.class_partials, task.class_ids);
    const auto gv = g.grad.values();
    for (std::size_t j = 0; j < total.size(); ++j) total[j] += gv[j];
  }
  optimizer_step(optimizer, net.params().values(), total);
  return losses;
}

} // namespace mtm
