#include "mtm/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mtm {

using nlohmann::json;

std::string checkpoint_to_json(const Backbone& backbone, const std::string& config_hash) {
  const MlpShape& shape = backbone.shape();
  json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["layer_dims"] = shape.layer_dims();
  j["activation"] = to_string(shape.activation());
  if (shape.activate_output()) j["output_activation"] = true;
  const auto values = backbone.params().values();
  j["values"] = std::vector<double>(values.begin(), values.end());
  j["config_hash"] = config_hash;
  // max_digits10 round-trips every double exactly
  return j.dump(1);
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw DataError("unsupported checkpoint format_version " + std::to_string(version));
    }
    const auto dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    if (dims.size() < 2) throw DataError("checkpoint layer_dims needs at least two entries");
    const Activation act = activation_from_string(j.at("activation").get<std::string>());
    const bool activate_output = j.value("output_activation", false);
    auto values = j.at("values").get<std::vector<double>>();
    MlpShape shape(dims, act, activate_output);
    if (values.size() != shape.parameter_count()) {
      throw DataError("checkpoint holds " + std::to_string(values.size()) +
                      " values, layer_dims need " + std::to_string(shape.parameter_count()));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw DataError("checkpoint contains a non-finite value");
    }
    ParamVector params(shape.layers(), std::move(values));
    return {Backbone(std::move(shape), std::move(params)), j.at("config_hash").get<std::string>()};
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Backbone& backbone,
                     const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(backbone, config_hash) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

} // namespace mtm
