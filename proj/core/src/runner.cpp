#include "mtm/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "mtm/checkpoint.hpp"
#include "mtm/maml.hpp"
#include "mtm/protonet.hpp"

namespace mtm {

using nlohmann::json;

namespace {

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<int> coarse_groups_of(const Task& task) {
  std::vector<int> out;
  out.reserve(task.n_way());
  for (std::size_t k = 0; k < task.n_way(); ++k) {
    if (!task.coarse_of[k]) {
      throw DataError("class " + std::to_string(task.class_ids[k]) + " has no coarse id");
    }
    out.push_back(*task.coarse_of[k]);
  }
  return out;
}

bool coarse_mode(const TrainState& state, bool mtm_active) {
  return mtm_active && state.weights && state.weights->kind() == WeightOptKind::spsa_coarse;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double task_accuracy(const Backbone& model, const Task& task, const EvalOptions& options) {
  if (options.algorithm == Algorithm::maml) return maml_task_accuracy(model, task, options.maml);
  return protonet_task_loss(model, task, options.distance).accuracy;
}

EvalOptions eval_options(const RunConfig& cfg) {
  return {cfg.algorithm, cfg.maml, cfg.distance};
}

double validate_epoch(const Backbone& model, const Dataset& dataset, const RunConfig& cfg) {
  EpisodeSpec spec = cfg.episode;
  spec.tasks_per_episode = 1;
  const RngStream base(cfg.seed, StreamId::validation);
  const EvalOptions options = eval_options(cfg);
  double sum = 0.0;
  for (std::size_t i = 0; i < cfg.val_episodes; ++i) {
    RngStream rng = base.derive(i);
    sum += task_accuracy(model, sample_task(dataset, Split::val, spec, rng), options);
  }
  return sum / static_cast<double>(cfg.val_episodes);
}

WeightOptimizer make_weight_optimizer(const RunConfig& cfg, const Dataset& dataset) {
  const WeightOptKind kind = weight_opt_kind(cfg.mtm);
  const std::size_t n = kind == WeightOptKind::spsa_coarse ? dataset.num_coarse()
                                                           : cfg.episode.tasks_per_episode;
  if (is_spsa_kind(kind)) {
    return WeightOptimizer::perturbation(kind, n, cfg.gains,
                                         RngStream(cfg.seed, StreamId::perturbation),
                                         cfg.normalize);
  }
  OptimizerHyperparams hyper = cfg.optimizer.hyper;
  hyper.weight_decay = 0.0;
  if (cfg.weight_lr > 0.0) hyper.learning_rate = cfg.weight_lr;
  const OptimizerKind opt =
      kind == WeightOptKind::inner_first_order ? OptimizerKind::adam : cfg.optimizer.kind;
  return WeightOptimizer::gradient(kind, n, OptimizerState(opt, hyper, n));
}

std::vector<std::string> weight_columns(const RunConfig& cfg, const Dataset& dataset) {
  std::vector<std::string> cols;
  if (cfg.mtm == MtmKind::spsa_coarse) {
    for (std::size_t k = 0; k < dataset.num_coarse(); ++k) cols.push_back("c_" + std::to_string(k));
  } else {
    for (std::size_t i = 1; i <= cfg.episode.tasks_per_episode; ++i) {
      cols.push_back("w_" + std::to_string(i));
    }
  }
  return cols;
}

} // namespace

std::vector<std::vector<double>> class_scales(const Episode& episode,
                                              const WeightOptimizer* weights) {
  std::vector<std::vector<double>> scales;
  scales.reserve(episode.tasks.size());
  for (std::size_t i = 0; i < episode.tasks.size(); ++i) {
    const Task& task = episode.tasks[i];
    std::vector<double> s(task.n_way(), 1.0);
    if (weights != nullptr) {
      const auto& w = weights->weights();
      if (weights->kind() == WeightOptKind::spsa_coarse) {
        const auto groups = coarse_groups_of(task);
        for (std::size_t k = 0; k < s.size(); ++k) {
          const double wk = w.at(static_cast<std::size_t>(groups[k]));
          s[k] = 1.0 / (wk * wk);
        }
      } else {
        const double wi = w.at(i);
        std::fill(s.begin(), s.end(), 1.0 / (wi * wi));
      }
    }
    scales.push_back(std::move(s));
  }
  return scales;
}

EpisodeReport train_episode(TrainState& state, const Episode& episode, const RunConfig& cfg,
                            bool mtm_active) {
  if (episode.tasks.size() != cfg.episode.tasks_per_episode) {
    throw DimensionError("tasks in episode", cfg.episode.tasks_per_episode, episode.tasks.size());
  }
  if (mtm_active && !state.weights) throw ConfigError("MTM episode without a weight optimizer");

  TrainState next = state;
  EpisodeReport report;
  const bool coarse = coarse_mode(next, mtm_active);

  // Per-task losses and their class partials at the current parameters.
  std::vector<PreparedTask> prepared;
  if (cfg.algorithm == Algorithm::maml) {
    prepared = maml_prepare(next.model, episode, cfg.maml);
    for (std::size_t i = 0; i < episode.tasks.size(); ++i) {
      const Task& task = episode.tasks[i];
      report.losses.add_task(prepared[i].query_loss, prepared[i].class_partials,
                             coarse ? coarse_groups_of(task) : task.class_ids);
    }
  } else {
    for (const Task& task : episode.tasks) {
      const ProtoTaskResult r = protonet_task_loss(next.model, task, cfg.distance);
      if (!std::isfinite(r.loss)) throw NonFiniteError("protonet task loss", -1);
      report.losses.add_task(r.loss, r.class_partials,
                             coarse ? coarse_groups_of(task) : task.class_ids);
    }
  }
  for (double v : report.losses.values) report.mean_task_loss += v;
  report.mean_task_loss /= static_cast<double>(report.losses.values.size());

  // Weight update precedes the parameter step.
  if (mtm_active) {
    WeightOptimizer& w = *next.weights;
    const std::span<const double> values = report.losses.values;
    switch (w.kind()) {
    case WeightOptKind::spsa:
      report.spsa = w.spsa_update(
          [values](std::span<const double> om) { return multitask_objective(om, values); });
      break;
    case WeightOptKind::spsa_track:
      report.spsa = w.spsa_track_update(
          [values](std::span<const double> om) { return multitask_objective(om, values); });
      break;
    case WeightOptKind::spsa_coarse: {
      const auto present = report.losses.groups_present();
      report.active_groups.assign(present.begin(), present.end());
      for (int g : report.active_groups) {
        if (g < 0 || static_cast<std::size_t>(g) >= w.weights().size()) {
          throw DataError("coarse id " + std::to_string(g) + " outside the weight vector");
        }
      }
      const TaskLosses& losses = report.losses;
      report.spsa = w.spsa_update(
          [&losses](std::span<const double> om) { return coarse_multitask_objective(om, losses); },
          report.active_groups);
      break;
    }
    case WeightOptKind::backprop: w.backprop_step(report.losses); break;
    case WeightOptKind::inner_first_order: w.inner_first_order_step(report.losses); break;
    }
    report.weights_used = w.weights();
  }

  const auto scales = class_scales(episode, mtm_active ? &*next.weights : nullptr);
  std::vector<double> grad;
  if (cfg.algorithm == Algorithm::maml) {
    grad = maml_weighted_grad(next.model, episode, prepared, cfg.maml, scales);
  } else {
    grad.assign(next.model.params().size(), 0.0);
    for (std::size_t i = 0; i < episode.tasks.size(); ++i) {
      const Gradient g = protonet_task_grad(next.model, episode.tasks[i], cfg.distance, scales[i]);
      const auto gv = g.grad.values();
      for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += gv[j];
    }
  }
  if (!all_finite(std::span<const double>(grad))) throw NonFiniteError("parameter gradient", -1);
  optimizer_step(next.optimizer, next.model.params().values(), grad);
  if (!all_finite(std::as_const(next.model).params().values())) {
    throw NonFiniteError("parameters after step", -1);
  }

  state = std::move(next);
  return report;
}

bool ModelSelector::offer(std::size_t epoch, double val_acc, const Backbone& model) {
  if (best_ && !(val_acc > best_val_)) return false;
  best_ = model;
  best_epoch_ = epoch;
  best_val_ = val_acc;
  return true;
}

const Backbone& ModelSelector::best() const {
  if (!best_) throw ConfigError("no model has been offered yet");
  return *best_;
}

EvalResult summarize_accuracies(std::vector<double> accuracies) {
  EvalResult r;
  const std::size_t n = accuracies.size();
  if (n == 0) throw ConfigError("cannot summarize zero episodes");
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  r.mean_acc = sum / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double a : accuracies) ss += (a - r.mean_acc) * (a - r.mean_acc);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    r.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(n));
  }
  r.accuracies = std::move(accuracies);
  return r;
}

EvalResult evaluate(const Backbone& model, const Dataset& dataset, Split split,
                    const EpisodeSpec& spec, std::size_t episodes, std::uint64_t seed,
                    const EvalOptions& options) {
  spec.validate();
  if (episodes == 0) throw ConfigError("evaluation needs at least one episode");
  if (options.algorithm == Algorithm::maml && model.shape().output_dim() != spec.n_way) {
    throw DimensionError("maml output dimension vs n_way", spec.n_way, model.shape().output_dim());
  }
  if (model.shape().input_dim() != dataset.feature_dim) {
    throw DimensionError("model input vs dataset features", dataset.feature_dim,
                         model.shape().input_dim());
  }
  if (dataset.split(split).size() < spec.n_way) {
    throw DataError(to_string(split) + " split has " + std::to_string(dataset.split(split).size()) +
                    " classes, fewer than n_way = " + std::to_string(spec.n_way));
  }
  EpisodeSpec single = spec;
  single.tasks_per_episode = 1;
  const RngStream base(seed, StreamId::evaluation);
  std::vector<double> acc(episodes);
  for (std::size_t i = 0; i < episodes; ++i) {
    RngStream rng = base.derive(i);
    acc[i] = task_accuracy(model, sample_task(dataset, split, single, rng), options);
  }
  return summarize_accuracies(std::move(acc));
}

Dataset resolve_dataset(const RunConfig& cfg) {
  Dataset ds = cfg.dataset.empty() ? gen_synthetic(cfg.synthetic) : load_dataset(cfg.dataset);
  ds.validate();
  return ds;
}

MlpShape model_shape(const RunConfig& cfg, std::size_t feature_dim) {
  std::vector<std::size_t> dims{feature_dim};
  dims.insert(dims.end(), cfg.backbone.hidden.begin(), cfg.backbone.hidden.end());
  dims.push_back(cfg.algorithm == Algorithm::maml ? cfg.episode.n_way : cfg.backbone.embedding_dim);
  return MlpShape(std::move(dims), cfg.backbone.activation);
}

RunRecord train_run(const RunConfig& cfg, const Dataset& dataset,
                    const std::filesystem::path& out_dir, const TrainHooks& hooks) {
  cfg.validate();
  dataset.validate();
  if (cfg.mtm == MtmKind::spsa_coarse && !dataset.has_coarse_ids()) {
    throw ConfigError("mtm=spsa_coarse needs a dataset with coarse ids");
  }
  for (Split s : {Split::train, Split::val, Split::test}) {
    if (dataset.split(s).size() < cfg.episode.n_way) {
      throw DataError(to_string(s) + " split has fewer classes than n_way");
    }
  }
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  RunRecord record;
  record.config_hash = config_hash(cfg);
  record.weight_kind = to_string(cfg.mtm);
  record.weight_columns = weight_columns(cfg, dataset);

  const MlpShape shape = model_shape(cfg, dataset.feature_dim);
  RngStream init_rng(cfg.seed, StreamId::init);
  TrainState state;
  state.model = Backbone::initialized(shape, init_rng);
  state.optimizer = OptimizerState(cfg.optimizer.kind, cfg.optimizer.hyper, shape.parameter_count());

  const auto decay_epoch = static_cast<std::size_t>(
      std::floor(cfg.optimizer.decay_at * static_cast<double>(cfg.epochs)));
  RngStream train_rng(cfg.seed, StreamId::train_sampling);
  ModelSelector selector;
  std::size_t episode_index = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.optimizer.decay_factor < 1.0 && epoch == decay_epoch && epoch > 0) {
      state.optimizer.set_learning_rate(state.optimizer.hyper().learning_rate *
                                        cfg.optimizer.decay_factor);
    }
    const bool in_mtm_phase = epoch >= cfg.pretrain_epochs;
    const bool mtm_active = in_mtm_phase && cfg.mtm != MtmKind::none;
    if (mtm_active && !state.weights) state.weights = make_weight_optimizer(cfg, dataset);

    std::set<int> touched;
    double loss_sum = 0.0;
    for (std::size_t e = 0; e < cfg.episodes_per_epoch; ++e, ++episode_index) {
      const Episode episode =
          sample_episode(dataset, Split::train, cfg.episode, train_rng, episode_index);
      const EpisodeReport report = train_episode(state, episode, cfg, mtm_active);
      touched.insert(report.active_groups.begin(), report.active_groups.end());
      loss_sum += report.mean_task_loss;
      if (hooks.on_episode) hooks.on_episode(epoch + 1, e, report);
    }

    if (mtm_active && state.weights->normalize() && is_spsa_kind(state.weights->kind())) {
      if (state.weights->kind() == WeightOptKind::spsa_coarse) {
        const std::vector<int> active(touched.begin(), touched.end());
        if (!active.empty()) state.weights->renormalize(active);
      } else {
        state.weights->renormalize();
      }
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(cfg.episodes_per_epoch);
    rec.val_acc = validate_epoch(state.model, dataset, cfg);
    if (hooks.val_override) {
      if (auto v = hooks.val_override(rec.epoch, rec.val_acc)) rec.val_acc = *v;
    }
    rec.mtm_active = mtm_active;
    record.epochs.push_back(rec);
    selector.offer(rec.epoch, rec.val_acc, state.model);

    if (in_mtm_phase) {
      TrajectoryRow row;
      row.epoch = rec.epoch;
      row.weights = state.weights ? state.weights->weights()
                                  : std::vector<double>(record.weight_columns.size(), 1.0);
      record.trajectory.push_back(std::move(row));
    }
  }

  record.best_epoch = selector.best_epoch();
  record.best_val_acc = selector.best_val_acc();
  const EvalResult test = evaluate(selector.best(), dataset, Split::test, cfg.episode,
                                   cfg.eval_episodes, cfg.seed, eval_options(cfg));
  record.test_mean_acc = test.mean_acc;
  record.test_ci95 = test.ci95;

  if (!out_dir.empty()) {
    write_text(out_dir / "metrics.csv", metrics_csv(record));
    write_text(out_dir / "weights.csv", weights_csv(record));
    save_checkpoint(out_dir / "best.ckpt.json", selector.best(), record.config_hash);
    json result;
    result["mean_acc"] = record.test_mean_acc;
    result["ci95"] = record.test_ci95;
    result["config_hash"] = record.config_hash;
    write_text(out_dir / "result.json", result.dump(2) + "\n");
    write_text(out_dir / "run_record.json", run_record_json(record));
    write_text(out_dir / "config.json", config_to_json(cfg) + "\n");
  }
  return record;
}

RunRecord train_run(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  return train_run(cfg, resolve_dataset(cfg), out_dir);
}

std::string metrics_csv(const RunRecord& record) {
  std::string out = "epoch,train_loss,val_acc\n";
  for (const EpochRecord& e : record.epochs) {
    out += std::to_string(e.epoch) + "," + fmt(e.train_loss) + "," + fmt(e.val_acc) + "\n";
  }
  return out;
}

std::string weights_csv(const RunRecord& record) {
  std::string out = "epoch,kind";
  for (const auto& c : record.weight_columns) out += "," + c;
  out += "\n";
  for (const TrajectoryRow& row : record.trajectory) {
    out += std::to_string(row.epoch) + "," + record.weight_kind;
    for (double w : row.weights) out += "," + fmt(w);
    out += "\n";
  }
  return out;
}

std::string run_record_json(const RunRecord& r) {
  json j;
  j["config_hash"] = r.config_hash;
  j["epochs"] = json::array();
  for (const EpochRecord& e : r.epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"val_acc", e.val_acc},
                           {"mtm_active", e.mtm_active}});
  }
  j["weight_kind"] = r.weight_kind;
  j["weight_columns"] = r.weight_columns;
  j["trajectory"] = json::array();
  for (const TrajectoryRow& row : r.trajectory) {
    j["trajectory"].push_back({{"epoch", row.epoch}, {"weights", row.weights}});
  }
  j["best_epoch"] = r.best_epoch;
  j["best_val_acc"] = r.best_val_acc;
  j["test"] = {{"mean_acc", r.test_mean_acc}, {"ci95", r.test_ci95}};
  return j.dump(2) + "\n";
}

RunRecord run_record_from_json(const std::string& text) {
  RunRecord r;
  try {
    const json j = json::parse(text);
    r.config_hash = j.at("config_hash").get<std::string>();
    for (const json& e : j.at("epochs")) {
      r.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                          e.at("val_acc").get<double>(), e.at("mtm_active").get<bool>()});
    }
    r.weight_kind = j.at("weight_kind").get<std::string>();
    r.weight_columns = j.at("weight_columns").get<std::vector<std::string>>();
    if (!j.contains("trajectory")) throw DataError("run record has no weight trajectory");
    for (const json& row : j.at("trajectory")) {
      r.trajectory.push_back(
          {row.at("epoch").get<std::size_t>(), row.at("weights").get<std::vector<double>>()});
    }
    r.best_epoch = j.at("best_epoch").get<std::size_t>();
    r.best_val_acc = j.at("best_val_acc").get<double>();
    r.test_mean_acc = j.at("test").at("mean_acc").get<double>();
    r.test_ci95 = j.at("test").at("ci95").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed run record: ") + e.what());
  }
  return r;
}

std::filesystem::path export_weight_trajectory(const std::filesystem::path& run_dir) {
  const auto src = run_dir / "run_record.json";
  if (!std::filesystem::exists(src)) {
    throw DataError("missing trajectory: " + src.string() + " not found");
  }
  const RunRecord record = run_record_from_json(read_text(src));
  if (record.trajectory.empty()) throw DataError("missing trajectory: run has no MTM epochs");
  const auto dst = run_dir / "weights.csv";
  write_text(dst, weights_csv(record));
  return dst;
}

} // namespace mtm
