#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mtm/episodes.hpp"
#include "mtm/losses.hpp"
#include "mtm/maml.hpp"
#include "mtm/mlp.hpp"
#include "mtm/optim.hpp"
#include "mtm/weight_optimizers.hpp"

namespace mtm {

enum class Algorithm { maml, protonet };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& name);

enum class MtmKind { none, spsa, spsa_track, backprop, inner_first_order, spsa_coarse };

std::string to_string(MtmKind k);
MtmKind mtm_kind_from_string(const std::string& name);
WeightOptKind weight_opt_kind(MtmKind k);

struct BackboneConfig {
  std::vector<std::size_t> hidden{32, 32};
  /// Embedding width for protonet; ignored by maml, whose head is n_way wide.
  std::size_t embedding_dim = 16;
  Activation activation = Activation::relu;
};

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd_nesterov;
  OptimizerHyperparams hyper;
  /// Learning rate is multiplied by `decay_factor` once, at the start of
  /// epoch floor(decay_at * epochs). decay_factor 1 disables it.
  double decay_at = 2.0 / 3.0;
  double decay_factor = 0.1;

  /// SGD-Nesterov 0.01, momentum 0.9, weight decay 5e-4, step decay for
  /// protonet; Adam 1e-3 with no decay for maml.
  static OptimizerConfig defaults_for(Algorithm a);
};

struct RunConfig {
  Algorithm algorithm = Algorithm::protonet;
  MtmKind mtm = MtmKind::none;
  EpisodeSpec episode;
  std::size_t epochs = 30;          // total, including pretraining
  std::size_t episodes_per_epoch = 100;
  std::size_t pretrain_epochs = 10; // baseline epochs before MTM starts
  std::size_t eval_episodes = 1000;
  std::size_t val_episodes = 200;
  std::uint64_t seed = 0;
  BackboneConfig backbone;
  OptimizerConfig optimizer = OptimizerConfig::defaults_for(Algorithm::protonet);
  MamlConfig maml;
  GainSchedule gains;
  /// Learning rate of the gradient weight optimizers; 0 means the model's.
  double weight_lr = 0.0;
  bool normalize = true;
  DistanceKind distance = DistanceKind::squared_euclidean;
  /// Manifest path; when empty the synthetic dataset below is generated.
  std::string dataset;
  SyntheticParams synthetic;

  /// Epochs after pretraining; with mtm=none the weights stay at one.
  std::size_t mtm_epochs() const noexcept { return epochs - pretrain_epochs; }

  /// Field-level checks that do not need the dataset.
  void validate() const;
};

/// Parses a config. Omitted fields keep their defaults (optimizer defaults
/// follow the algorithm); unknown keys raise ConfigError.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical JSON of every field.
std::string config_to_json(const RunConfig& cfg);

/// 16 hex digits of FNV-1a over config_to_json.
std::string config_hash(const RunConfig& cfg);

} // namespace mtm
