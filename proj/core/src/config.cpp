#include "mtm/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

namespace mtm {

using nlohmann::json;

std::string to_string(Algorithm a) { return a == Algorithm::maml ? "maml" : "protonet"; }

Algorithm algorithm_from_string(const std::string& name) {
  if (name == "maml") return Algorithm::maml;
  if (name == "protonet") return Algorithm::protonet;
  throw ConfigError("unknown algorithm '" + name + "' (expected maml or protonet)");
}

std::string to_string(MtmKind k) {
  switch (k) {
  case MtmKind::none: return "none";
  case MtmKind::spsa: return "spsa";
  case MtmKind::spsa_track: return "spsa_track";
  case MtmKind::backprop: return "backprop";
  case MtmKind::inner_first_order: return "inner_first_order";
  case MtmKind::spsa_coarse: return "spsa_coarse";
  }
  return "?";
}

MtmKind mtm_kind_from_string(const std::string& name) {
  for (auto k : {MtmKind::none, MtmKind::spsa, MtmKind::spsa_track, MtmKind::backprop,
                 MtmKind::inner_first_order, MtmKind::spsa_coarse}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown mtm kind '" + name + "'");
}

WeightOptKind weight_opt_kind(MtmKind k) {
  switch (k) {
  case MtmKind::spsa: return WeightOptKind::spsa;
  case MtmKind::spsa_track: return WeightOptKind::spsa_track;
  case MtmKind::backprop: return WeightOptKind::backprop;
  case MtmKind::inner_first_order: return WeightOptKind::inner_first_order;
  case MtmKind::spsa_coarse: return WeightOptKind::spsa_coarse;
  case MtmKind::none: break;
  }
  throw ConfigError("mtm=none has no weight optimizer");
}

OptimizerConfig OptimizerConfig::defaults_for(Algorithm a) {
  OptimizerConfig c;
  if (a == Algorithm::protonet) {
    c.kind = OptimizerKind::sgd_nesterov;
    c.hyper.learning_rate = 0.01;
    c.hyper.momentum = 0.9;
    c.hyper.weight_decay = 5e-4;
    c.decay_factor = 0.1;
  } else {
    c.kind = OptimizerKind::adam;
    c.hyper.learning_rate = 1e-3;
    c.hyper.weight_decay = 0.0;
    c.decay_factor = 1.0;
  }
  return c;
}

void RunConfig::validate() const {
  episode.validate();
  maml.validate();
  gains.validate();
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (episodes_per_epoch == 0) throw ConfigError("episodes_per_epoch must be at least 1");
  if (pretrain_epochs > epochs) throw ConfigError("pretrain_epochs exceeds epochs");
  if (mtm != MtmKind::none && pretrain_epochs == epochs) {
    throw ConfigError("mtm is set but pretrain_epochs leaves no MTM epochs");
  }
  if (eval_episodes == 0) throw ConfigError("eval_episodes must be at least 1");
  if (val_episodes == 0) throw ConfigError("val_episodes must be at least 1");
  if (!(optimizer.hyper.learning_rate > 0.0)) throw ConfigError("optimizer lr must be positive");
  if (optimizer.hyper.momentum < 0.0 || optimizer.hyper.momentum >= 1.0) {
    throw ConfigError("optimizer momentum must lie in [0, 1)");
  }
  if (optimizer.hyper.weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
  if (!(optimizer.decay_at > 0.0) || optimizer.decay_at > 1.0) {
    throw ConfigError("optimizer decay_at must lie in (0, 1]");
  }
  if (!(optimizer.decay_factor > 0.0) || optimizer.decay_factor > 1.0) {
    throw ConfigError("optimizer decay_factor must lie in (0, 1]");
  }
  if (weight_lr < 0.0) throw ConfigError("weight_lr must be nonnegative");
  for (std::size_t h : backbone.hidden) {
    if (h == 0) throw ConfigError("hidden layer widths must be positive");
  }
  if (backbone.embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "sgd_nesterov") return OptimizerKind::sgd_nesterov;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer kind '" + name + "'");
}

void parse_into(const json& j, RunConfig& c) {
  check_keys(j,
             {"algorithm", "mtm", "episode", "epochs", "episodes_per_epoch", "pretrain_epochs",
              "eval_episodes", "val_episodes", "seed", "backbone", "optimizer", "maml", "gains",
              "weight_lr", "normalize", "distance", "dataset", "synthetic"},
             "");
  if (j.contains("algorithm")) {
    c.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
  }
  c.optimizer = OptimizerConfig::defaults_for(c.algorithm);
  if (j.contains("mtm")) c.mtm = mtm_kind_from_string(j.at("mtm").get<std::string>());

  if (j.contains("episode")) {
    const json& e = j.at("episode");
    check_keys(e, {"n_way", "n_shot", "n_query", "tasks_per_episode"}, "episode.");
    read(e, "n_way", c.episode.n_way);
    read(e, "n_shot", c.episode.n_shot);
    read(e, "n_query", c.episode.n_query);
    read(e, "tasks_per_episode", c.episode.tasks_per_episode);
  }
  read(j, "epochs", c.epochs);
  read(j, "episodes_per_epoch", c.episodes_per_epoch);
  read(j, "pretrain_epochs", c.pretrain_epochs);
  read(j, "eval_episodes", c.eval_episodes);
  read(j, "val_episodes", c.val_episodes);
  read(j, "seed", c.seed);

  if (j.contains("backbone")) {
    const json& b = j.at("backbone");
    check_keys(b, {"hidden", "embedding_dim", "activation"}, "backbone.");
    read(b, "hidden", c.backbone.hidden);
    read(b, "embedding_dim", c.backbone.embedding_dim);
    if (b.contains("activation")) {
      c.backbone.activation = activation_from_string(b.at("activation").get<std::string>());
    }
  }
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    check_keys(o,
               {"kind", "lr", "momentum", "weight_decay", "beta1", "beta2", "eps", "decay_at",
                "decay_factor"},
               "optimizer.");
    if (o.contains("kind")) c.optimizer.kind = optimizer_kind_from_string(o.at("kind").get<std::string>());
    read(o, "lr", c.optimizer.hyper.learning_rate);
    read(o, "momentum", c.optimizer.hyper.momentum);
    read(o, "weight_decay", c.optimizer.hyper.weight_decay);
    read(o, "beta1", c.optimizer.hyper.beta1);
    read(o, "beta2", c.optimizer.hyper.beta2);
    read(o, "eps", c.optimizer.hyper.epsilon);
    read(o, "decay_at", c.optimizer.decay_at);
    read(o, "decay_factor", c.optimizer.decay_factor);
  }
  if (j.contains("maml")) {
    const json& m = j.at("maml");
    check_keys(m, {"adapt_lr", "inner_steps_train", "inner_steps_eval", "second_order"},
               "maml.");
    read(m, "adapt_lr", c.maml.adapt_lr);
    read(m, "inner_steps_train", c.maml.inner_steps_train);
    read(m, "inner_steps_eval", c.maml.inner_steps_eval);
    read(m, "second_order", c.maml.second_order);
  }
  c.maml.meta_lr = c.optimizer.hyper.learning_rate;
  if (j.contains("gains")) {
    const json& g = j.at("gains");
    check_keys(g, {"a0", "a_exp", "b0", "b_exp"}, "gains.");
    read(g, "a0", c.gains.a0);
    read(g, "a_exp", c.gains.a_exp);
    read(g, "b0", c.gains.b0);
    read(g, "b_exp", c.gains.b_exp);
  }
  read(j, "weight_lr", c.weight_lr);
  read(j, "normalize", c.normalize);
  if (j.contains("distance")) c.distance = distance_from_string(j.at("distance").get<std::string>());
  read(j, "dataset", c.dataset);
  if (j.contains("synthetic")) {
    const json& s = j.at("synthetic");
    check_keys(s,
               {"kind", "num_classes", "dim", "per_class", "cluster_radius", "noise_sigma",
                "signal_dim", "coarse_groups", "seed", "split_sizes"},
               "synthetic.");
    if (s.contains("kind") && s.at("kind").get<std::string>() != "gaussian_blobs") {
      throw ConfigError("unknown synthetic kind '" + s.at("kind").get<std::string>() + "'");
    }
    read(s, "num_classes", c.synthetic.num_classes);
    read(s, "dim", c.synthetic.dim);
    read(s, "per_class", c.synthetic.per_class);
    read(s, "cluster_radius", c.synthetic.cluster_radius);
    read(s, "noise_sigma", c.synthetic.noise_sigma);
    read(s, "signal_dim", c.synthetic.signal_dim);
    read(s, "coarse_groups", c.synthetic.coarse_groups);
    read(s, "seed", c.synthetic.seed);
    read(s, "split_sizes", c.synthetic.split_sizes);
  }
}

} // namespace

RunConfig parse_config(const std::string& json_text) {
  RunConfig c;
  try {
    parse_into(json::parse(json_text), c);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const RunConfig& c) {
  json j;
  j["algorithm"] = to_string(c.algorithm);
  j["mtm"] = to_string(c.mtm);
  j["episode"] = {{"n_way", c.episode.n_way},
                  {"n_shot", c.episode.n_shot},
                  {"n_query", c.episode.n_query},
                  {"tasks_per_episode", c.episode.tasks_per_episode}};
  j["epochs"] = c.epochs;
  j["episodes_per_epoch"] = c.episodes_per_epoch;
  j["pretrain_epochs"] = c.pretrain_epochs;
  j["eval_episodes"] = c.eval_episodes;
  j["val_episodes"] = c.val_episodes;
  j["seed"] = c.seed;
  j["backbone"] = {{"hidden", c.backbone.hidden},
                   {"embedding_dim", c.backbone.embedding_dim},
                   {"activation", to_string(c.backbone.activation)}};
  j["optimizer"] = {{"kind", to_string(c.optimizer.kind)},
                    {"lr", c.optimizer.hyper.learning_rate},
                    {"momentum", c.optimizer.hyper.momentum},
                    {"weight_decay", c.optimizer.hyper.weight_decay},
                    {"beta1", c.optimizer.hyper.beta1},
                    {"beta2", c.optimizer.hyper.beta2},
                    {"eps", c.optimizer.hyper.epsilon},
                    {"decay_at", c.optimizer.decay_at},
                    {"decay_factor", c.optimizer.decay_factor}};
  j["maml"] = {{"adapt_lr", c.maml.adapt_lr},
               {"inner_steps_train", c.maml.inner_steps_train},
               {"inner_steps_eval", c.maml.inner_steps_eval},
               {"second_order", c.maml.second_order}};
  j["gains"] = {{"a0", c.gains.a0},
                {"a_exp", c.gains.a_exp},
                {"b0", c.gains.b0},
                {"b_exp", c.gains.b_exp}};
  j["weight_lr"] = c.weight_lr;
  j["normalize"] = c.normalize;
  j["distance"] = to_string(c.distance);
  j["dataset"] = c.dataset;
  j["synthetic"] = {{"kind", "gaussian_blobs"},
                    {"num_classes", c.synthetic.num_classes},
                    {"dim", c.synthetic.dim},
                    {"per_class", c.synthetic.per_class},
                    {"cluster_radius", c.synthetic.cluster_radius},
                    {"noise_sigma", c.synthetic.noise_sigma},
                    {"signal_dim", c.synthetic.signal_dim},
                    {"coarse_groups", c.synthetic.coarse_groups},
                    {"seed", c.synthetic.seed},
                    {"split_sizes", c.synthetic.split_sizes}};
  return j.dump(2);
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : config_to_json(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

} // namespace mtm
