#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mtm/episodes.hpp"
#include "mtm/losses.hpp"
#include "mtm/mlp.hpp"
#include "mtm/optim.hpp"

namespace mtm {

/// Row k is the mean of the support embeddings with local label k.
Matrix compute_prototypes(const Matrix& emb_support, std::span<const int> labels,
                          std::size_t n_way);
Matrix compute_prototypes(const Matrix& emb_support, const Task& task);

struct ProtoTaskResult {
  double loss = 0.0;
  std::vector<double> class_partials; // per local class
  double accuracy = 0.0;
};

/// Embeds support and query with the backbone and scores the query rows.
ProtoTaskResult protonet_task_loss(const Backbone& net, const Task& task,
                                   DistanceKind distance = DistanceKind::squared_euclidean);

/// Gradient of sum_k scale[k] * L_k for one task; empty scale means all ones.
Gradient protonet_task_grad(const Backbone& net, const Task& task, DistanceKind distance,
                            std::span<const double> class_scale = {});

/// Stacks support rows above query rows, the layout ProtoNetHead expects.
Matrix stack_support_query(const Task& task);

/// One optimizer step on the episode objective: sum_i L_i / w_i^2 (the log
/// terms do not depend on theta), or the plain sum of task losses when
/// `weights` is null. Returns the per-task losses at the pre-step theta.
TaskLosses protonet_train_step(Backbone& net, const Episode& episode,
                               const MultiTaskWeights* weights, OptimizerState& optimizer,
                               DistanceKind distance = DistanceKind::squared_euclidean);

} // namespace mtm
