#pragma once

#include <filesystem>
#include <string>

#include "mtm/mlp.hpp"

namespace mtm {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  Backbone backbone;
  std::string config_hash;
};

std::string checkpoint_to_json(const Backbone& backbone, const std::string& config_hash);
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Backbone& backbone,
                     const std::string& config_hash);

/// Throws DataError on a missing file, wrong format version or a value
/// count that does not match the layer dims.
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace mtm
