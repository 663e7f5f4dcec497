#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mtm/rng.hpp"
#include "mtm/tensor.hpp"

namespace mtm {

enum class Split { train = 0, val = 1, test = 2 };

std::string to_string(Split s);
Split split_from_string(const std::string& name);

/// One feature vector with its fine class and optional coarse class.
struct LabeledExample {
  std::vector<double> features;
  int class_id = 0;
  std::optional<int> coarse_id;
};

/// All examples of one fine class, one example per row.
struct ClassRecord {
  int class_id = 0;
  std::optional<int> coarse_id;
  Matrix examples;

  LabeledExample example(std::size_t i) const;
};

class Dataset {
public:
  std::string name;
  std::size_t feature_dim = 0;
  std::vector<ClassRecord> classes;
  std::array<std::vector<int>, 3> splits; // indexed by Split
  std::optional<std::size_t> coarse_groups; // K, when declared explicitly

  /// Throws DataError when any invariant is broken: duplicate class ids,
  /// overlapping or dangling splits, rows of the wrong width, non-finite
  /// features, coarse ids outside [0, K).
  void validate() const;

  const ClassRecord& find(int class_id) const;
  const std::vector<int>& split(Split s) const { return splits[static_cast<int>(s)]; }
  std::size_t num_examples() const;

  /// K: the declared group count, else max coarse id + 1, zero when unset.
  std::size_t num_coarse() const;
  bool has_coarse_ids() const;

  /// FNV-1a over dims, ids and the bit patterns of every feature value.
  std::uint64_t content_hash() const;
};

struct EpisodeSpec {
  std::size_t n_way = 5;             // N_C
  std::size_t n_shot = 1;            // N_S
  std::size_t n_query = 15;          // N_Q
  std::size_t tasks_per_episode = 4; // M

  void validate() const;
  friend bool operator==(const EpisodeSpec&, const EpisodeSpec&) = default;
};

/// Position of an example inside the dataset.
struct ExampleRef {
  int class_id = 0;
  std::size_t index = 0;
  friend auto operator<=>(const ExampleRef&, const ExampleRef&) = default;
};

/// One N_C-way classification problem. Rows of `support` and `query` are
/// grouped by local label 0..N_C-1 in ascending order.
struct Task {
  std::vector<int> class_ids;                // local label -> dataset class id
  std::vector<std::optional<int>> coarse_of; // local label -> coarse id
  Matrix support;
  std::vector<int> support_labels;
  std::vector<ExampleRef> support_refs;
  Matrix query;
  std::vector<int> query_labels;
  std::vector<ExampleRef> query_refs;

  std::size_t n_way() const noexcept { return class_ids.size(); }
  std::set<int> coarse_ids_present() const;
};

struct Episode {
  std::size_t index = 0;
  std::vector<Task> tasks;
};

/// Draws N_C classes uniformly without replacement from `split`, then
/// N_S + N_Q distinct examples of each class.
Task sample_task(const Dataset& dataset, Split split, const EpisodeSpec& spec, RngStream& rng);

/// M independently sampled tasks. Tasks of one episode may share classes.
Episode sample_episode(const Dataset& dataset, Split split, const EpisodeSpec& spec,
                       RngStream& rng, std::size_t episode_index = 0);

/// Reads a JSON manifest and the per-class CSV files it references.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes `manifest.json` plus one `class_<id>.csv` per class into `dir`.
std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

enum class SyntheticKind { gaussian_blobs };

struct SyntheticParams {
  SyntheticKind kind = SyntheticKind::gaussian_blobs;
  std::size_t num_classes = 34;
  std::size_t dim = 16;
  std::size_t per_class = 300;
  double cluster_radius = 2.0;
  double noise_sigma = 0.7;
  /// Class means vary only in the first signal_dim coordinates; the rest
  /// carry noise alone. 0 means all of `dim`.
  std::size_t signal_dim = 4;
  std::size_t coarse_groups = 4;
  std::uint64_t seed = 0;
  /// Class counts for train/val/test; all zero means a 20:6:8 proportion.
  std::array<std::size_t, 3> split_sizes{0, 0, 0};
};

/// Class means on the sphere of radius r within the signal coordinates,
/// isotropic Gaussian noise, coarse ids from the nearest of K anchor classes.
Dataset gen_synthetic(const SyntheticParams& params);

} // namespace mtm
