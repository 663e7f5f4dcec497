#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mtm/config.hpp"
#include "mtm/episodes.hpp"
#include "mtm/losses.hpp"
#include "mtm/mlp.hpp"
#include "mtm/optim.hpp"
#include "mtm/weight_optimizers.hpp"

namespace mtm {

/// Everything one training episode reads and writes.
struct TrainState {
  Backbone model;
  OptimizerState optimizer;
  std::optional<WeightOptimizer> weights; // absent until MTM starts, and for mtm=none
};

/// What happened inside one episode.
struct EpisodeReport {
  TaskLosses losses;                 // per-task losses at the pre-step parameters
  double mean_task_loss = 0.0;
  std::vector<double> weights_used;  // weights that scaled the parameter step
  std::optional<SpsaStep> spsa;
  std::vector<int> active_groups;    // coarse groups present (spsa_coarse only)
};

/// Per-local-class loss multipliers for every task: 1/w_i^2 per task, or
/// 1/w_k^2 by coarse group. Null weights give all ones.
std::vector<std::vector<double>> class_scales(const Episode& episode,
                                              const WeightOptimizer* weights);

/// One pass of the training episode: task losses and partials, weight
/// update, then the parameter step on the reweighted objective. When
/// `mtm_active` is false the weights are neither read nor updated. On any
/// error `state` is left as it was.
EpisodeReport train_episode(TrainState& state, const Episode& episode, const RunConfig& cfg,
                            bool mtm_active);

/// Keeps the model with the highest validation accuracy; ties keep the
/// earlier epoch.
class ModelSelector {
public:
  bool offer(std::size_t epoch, double val_acc, const Backbone& model);
  bool has_best() const noexcept { return best_.has_value(); }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best_val_acc() const noexcept { return best_val_; }
  const Backbone& best() const;

private:
  std::optional<Backbone> best_;
  std::size_t best_epoch_ = 0;
  double best_val_ = 0.0;
};

struct EvalOptions {
  Algorithm algorithm = Algorithm::protonet;
  MamlConfig maml;
  DistanceKind distance = DistanceKind::squared_euclidean;
};

struct EvalResult {
  double mean_acc = 0.0;
  double ci95 = 0.0; // 1.96 * sample std / sqrt(n), zero for n = 1
  std::vector<double> accuracies;
};

/// Mean and 95% half-width of per-episode accuracies.
EvalResult summarize_accuracies(std::vector<double> accuracies);

/// `episodes` single-task episodes from `split`, episode i drawn from
/// stream (seed, evaluation) derived with i.
EvalResult evaluate(const Backbone& model, const Dataset& dataset, Split split,
                    const EpisodeSpec& spec, std::size_t episodes, std::uint64_t seed,
                    const EvalOptions& options);

struct EpochRecord {
  std::size_t epoch = 0; // 1-based
  double train_loss = 0.0;
  double val_acc = 0.0;
  bool mtm_active = false;
};

struct TrajectoryRow {
  std::size_t epoch = 0;
  std::vector<double> weights;
};

struct RunRecord {
  std::string config_hash;
  std::vector<EpochRecord> epochs;
  std::string weight_kind;                 // mtm kind name
  std::vector<std::string> weight_columns; // w_1..w_M, or c_0..c_{K-1}
  std::vector<TrajectoryRow> trajectory;   // one row per MTM epoch
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
  double test_mean_acc = 0.0;
  double test_ci95 = 0.0;
};

struct TrainHooks {
  std::function<void(std::size_t epoch, std::size_t episode, const EpisodeReport&)> on_episode;
  /// May replace the measured validation accuracy of an epoch.
  std::function<std::optional<double>(std::size_t epoch, double measured)> val_override;
};

/// The configured dataset: loaded from `cfg.dataset`, or generated.
Dataset resolve_dataset(const RunConfig& cfg);

/// Model architecture implied by the config and the feature width.
MlpShape model_shape(const RunConfig& cfg, std::size_t feature_dim);

/// Pretraining epochs, then MTM epochs; validation after each epoch, best
/// model selection, test evaluation of the best model. When `out_dir` is
/// non-empty the run artifacts are written there.
RunRecord train_run(const RunConfig& cfg, const Dataset& dataset,
                    const std::filesystem::path& out_dir = {}, const TrainHooks& hooks = {});

RunRecord train_run(const RunConfig& cfg, const std::filesystem::path& out_dir = {});

std::string metrics_csv(const RunRecord& record);
std::string weights_csv(const RunRecord& record);
std::string run_record_json(const RunRecord& record);
RunRecord run_record_from_json(const std::string& text);

/// Rewrites `weights.csv` in `run_dir` from its `run_record.json`.
std::filesystem::path export_weight_trajectory(const std::filesystem::path& run_dir);

} // namespace mtm
