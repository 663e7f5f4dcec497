#include <doctest.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "mtm/checkpoint.hpp"
#include "mtm/protonet.hpp"
#include "mtm/runner.hpp"

using namespace mtm;
namespace fs = std::filesystem;

namespace {

RunConfig smoke_config(Algorithm algo, MtmKind mtm) {
  RunConfig cfg;
  cfg.algorithm = algo;
  cfg.optimizer = OptimizerConfig::defaults_for(algo);
  cfg.mtm = mtm;
  cfg.episode = {2, 1, 5, 2};
  cfg.epochs = 6;
  cfg.pretrain_epochs = 3;
  cfg.episodes_per_epoch = 20;
  cfg.eval_episodes = 50;
  cfg.val_episodes = 20;
  cfg.seed = 7;
  cfg.backbone.hidden = {16};
  cfg.backbone.embedding_dim = 8;
  cfg.maml.inner_steps_train = 2;
  cfg.maml.inner_steps_eval = 3;
  cfg.maml.adapt_lr = 0.1;
  cfg.maml.meta_lr = cfg.optimizer.hyper.learning_rate;
  cfg.synthetic.dim = 8;
  cfg.synthetic.num_classes = 24;
  cfg.synthetic.per_class = 20;
  cfg.synthetic.coarse_groups = 4;
  cfg.synthetic.seed = 3;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<double>> weight_rows(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::getline(ss, cell, ',');
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

TrainState fresh_state(const RunConfig& cfg, const Dataset& ds) {
  RngStream rng(cfg.seed, StreamId::init);
  const MlpShape shape = model_shape(cfg, ds.feature_dim);
  TrainState s;
  s.model = Backbone::initialized(shape, rng);
  s.optimizer = OptimizerState(cfg.optimizer.kind, cfg.optimizer.hyper, shape.parameter_count());
  return s;
}

Episode draw(const RunConfig& cfg, const Dataset& ds, std::uint64_t stream = 1) {
  RngStream rng(cfg.seed + stream, StreamId::train_sampling);
  return sample_episode(ds, Split::train, cfg.episode, rng);
}

} // namespace

TEST_CASE("smoke runs finish quickly and write every artifact") {
  for (auto [algo, mtm] : {std::pair{Algorithm::protonet, MtmKind::spsa_track},
                           std::pair{Algorithm::maml, MtmKind::spsa}}) {
    const RunConfig cfg = smoke_config(algo, mtm);
    const fs::path dir = testutil::scratch_dir("smoke_" + to_string(algo));
    const auto t0 = std::chrono::steady_clock::now();
    const RunRecord rec = train_run(cfg, dir);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    INFO(to_string(algo));
    CHECK(secs < 60.0);
    for (const char* f : {"metrics.csv", "weights.csv", "best.ckpt.json", "result.json",
                          "run_record.json", "config.json"}) {
      CHECK(fs::exists(dir / f));
    }
    CHECK(rec.epochs.size() == 6);
    CHECK(rec.trajectory.size() == 3);
    CHECK(weight_rows(dir / "weights.csv").size() == 3);
    CHECK(slurp(dir / "metrics.csv").rfind("epoch,train_loss,val_acc\n", 0) == 0);
    const std::string result = slurp(dir / "result.json");
    CHECK(result.find("\"mean_acc\"") != std::string::npos);
    CHECK(result.find("\"ci95\"") != std::string::npos);
    CHECK(result.find(rec.config_hash) != std::string::npos);
    CHECK(load_checkpoint(dir / "best.ckpt.json").config_hash == rec.config_hash);
    CHECK(rec.test_mean_acc > 0.0);
    CHECK(rec.test_mean_acc <= 1.0);
  }
}

TEST_CASE("validation selection follows the best epoch") {
  RunConfig cfg = smoke_config(Algorithm::protonet, MtmKind::none);
  cfg.epochs = 4;
  cfg.pretrain_epochs = 4;
  cfg.episodes_per_epoch = 5;
  const Dataset ds = resolve_dataset(cfg);
  TrainHooks hooks;
  hooks.val_override = [](std::size_t epoch, double) -> std::optional<double> {
    if (epoch == 2) return 1.0;
    return 0.1;
  };
  const RunRecord rec = train_run(cfg, ds, {}, hooks);
  CHECK(rec.best_epoch == 2);
  CHECK(rec.best_val_acc == 1.0);

  ModelSelector sel;
  const Backbone a(MlpShape({2, 2}, Activation::relu));
  CHECK(sel.offer(1, 0.5, a));
  CHECK_FALSE(sel.offer(2, 0.5, a));
  CHECK(sel.best_epoch() == 1);
}

TEST_CASE("coarse weights change only for present groups") {
  RunConfig cfg = smoke_config(Algorithm::protonet, MtmKind::spsa_coarse);
  cfg.synthetic.coarse_groups = 8;
  cfg.episodes_per_epoch = 1;
  cfg.epochs = 10;
  cfg.pretrain_epochs = 2;
  const Dataset ds = resolve_dataset(cfg);
  std::map<std::size_t, std::vector<int>> present;
  TrainHooks hooks;
  hooks.on_episode = [&](std::size_t epoch, std::size_t, const EpisodeReport& r) {
    present[epoch] = r.active_groups;
    if (r.spsa) {
      for (std::size_t k = 0; k < r.spsa->delta.size(); ++k) {
        const bool active =
            std::find(r.active_groups.begin(), r.active_groups.end(), int(k)) !=
            r.active_groups.end();
        CHECK((r.spsa->delta[k] != 0) == active);
      }
    }
  };
  const fs::path dir = testutil::scratch_dir("coarse");
  const RunRecord rec = train_run(cfg, ds, dir, hooks);
  CHECK(rec.weight_columns.size() == 8);
  CHECK(rec.weight_columns.front() == "c_0");
  const auto rows = weight_rows(dir / "weights.csv");
  REQUIRE(rows.size() == 8);
  std::vector<double> prev(8, 1.0);
  std::size_t unchanged = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& groups = present[rec.trajectory[r].epoch];
    for (std::size_t k = 0; k < 8; ++k) {
      const bool active = std::find(groups.begin(), groups.end(), int(k)) != groups.end();
      if (!active) {
        CHECK(rows[r][k] == prev[k]);
        ++unchanged;
      }
    }
    prev = rows[r];
  }
  CHECK(unchanged > 0);
}

TEST_CASE("a poisoned episode leaves the state untouched") {
  const RunConfig cfg = smoke_config(Algorithm::protonet, MtmKind::spsa);
  const Dataset ds = resolve_dataset(cfg);
  TrainState state = fresh_state(cfg, ds);
  state.weights = WeightOptimizer::perturbation(WeightOptKind::spsa, 2, cfg.gains,
                                                RngStream(1, StreamId::perturbation), true);
  (void)train_episode(state, draw(cfg, ds, 1), cfg, true);
  const TrainState before = state;

  Episode bad = draw(cfg, ds, 2);
  bad.tasks[1].query(0, 0) = std::nan("");
  CHECK_THROWS_AS(train_episode(state, bad, cfg, true), NonFiniteError);
  CHECK(state.model.params() == before.model.params());
  CHECK(state.optimizer == before.optimizer);
  CHECK(state.weights->weights() == before.weights->weights());
  CHECK(state.weights->updates() == before.weights->updates());

  Episode short_ep = draw(cfg, ds, 3);
  short_ep.tasks.pop_back();
  CHECK_THROWS_AS(train_episode(state, short_ep, cfg, true), DimensionError);
  CHECK(state.model.params() == before.model.params());
}

TEST_CASE("runs replay bitwise") {
  for (auto mtm : {MtmKind::spsa_track, MtmKind::backprop}) {
    const RunConfig cfg = smoke_config(Algorithm::protonet, mtm);
    const fs::path a = testutil::scratch_dir("replay_a"), b = testutil::scratch_dir("replay_b");
    const RunRecord ra = train_run(cfg, a);
    const RunRecord rb = train_run(cfg, b);
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
    CHECK(slurp(a / "weights.csv") == slurp(b / "weights.csv"));
    CHECK(ra.test_mean_acc == rb.test_mean_acc);
  }
  const RunConfig cfg = smoke_config(Algorithm::maml, MtmKind::none);
  const Dataset ds = resolve_dataset(cfg);
  TrainState s1 = fresh_state(cfg, ds), s2 = fresh_state(cfg, ds);
  for (std::uint64_t e = 0; e < 10; ++e) {
    const Episode ep = draw(cfg, ds, e);
    (void)train_episode(s1, ep, cfg, false);
    (void)train_episode(s2, ep, cfg, false);
  }
  CHECK(s1.model.params() == s2.model.params());
}

TEST_CASE("the parameter step uses the freshly updated weights") {
  const RunConfig cfg = smoke_config(Algorithm::protonet, MtmKind::spsa);
  const Dataset ds = resolve_dataset(cfg);
  TrainState state = fresh_state(cfg, ds);
  state.weights = WeightOptimizer::perturbation(WeightOptKind::spsa, 2, cfg.gains,
                                                RngStream(4, StreamId::perturbation), false);
  const TrainState before = state;
  const Episode ep = draw(cfg, ds);
  const EpisodeReport rep = train_episode(state, ep, cfg, true);
  REQUIRE(rep.spsa.has_value());
  CHECK(rep.weights_used == rep.spsa->updated);
  CHECK(rep.weights_used != std::vector<double>{1.0, 1.0});

  auto step_with = [&](const std::vector<double>& w) {
    Backbone m = before.model;
    OptimizerState o = before.optimizer;
    std::vector<double> grad(m.params().size(), 0.0);
    for (std::size_t i = 0; i < ep.tasks.size(); ++i) {
      const std::vector<double> scale(ep.tasks[i].n_way(), 1.0 / (w[i] * w[i]));
      const auto g = protonet_task_grad(m, ep.tasks[i], cfg.distance, scale).grad.values();
      for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += g[j];
    }
    optimizer_step(o, m.params().values(), grad);
    return m.params();
  };
  CHECK(state.model.params() == step_with(rep.weights_used));
  CHECK_FALSE(state.model.params() == step_with(before.weights->weights()));
}

TEST_CASE("without MTM the episode is the baseline step") {
  const RunConfig cfg = smoke_config(Algorithm::protonet, MtmKind::none);
  const Dataset ds = resolve_dataset(cfg);
  TrainState state = fresh_state(cfg, ds);
  Backbone ref = state.model;
  OptimizerState ref_opt = state.optimizer;
  const MultiTaskWeights ones = MultiTaskWeights::ones(2);
  for (std::uint64_t e = 0; e < 5; ++e) {
    const Episode ep = draw(cfg, ds, e);
    const EpisodeReport rep = train_episode(state, ep, cfg, false);
    const TaskLosses l = protonet_train_step(ref, ep, &ones, ref_opt, cfg.distance);
    CHECK(rep.losses.values == l.values);
    CHECK(rep.weights_used.empty());
    CHECK(state.model.params() == ref.params());
  }
  const Episode ep = draw(cfg, ds);
  for (const auto& s : class_scales(ep, nullptr)) {
    for (double x : s) CHECK(x == 1.0);
  }
}

TEST_CASE("evaluation protocol") {
  const RunConfig cfg = smoke_config(Algorithm::protonet, MtmKind::none);
  const Dataset ds = resolve_dataset(cfg);
  const Backbone net = fresh_state(cfg, ds).model;
  const EpisodeSpec spec{5, 1, 15, 1};
  const EvalOptions opts;

  const EvalResult one = evaluate(net, ds, Split::test, spec, 1, 3, opts);
  CHECK(one.ci95 == 0.0);
  CHECK(one.accuracies.size() == 1);

  const EvalResult a = evaluate(net, ds, Split::test, spec, 40, 3, opts);
  const EvalResult b = evaluate(net, ds, Split::test, spec, 40, 3, opts);
  CHECK(a.mean_acc == b.mean_acc);
  CHECK(a.ci95 == b.ci95);

  const EvalResult s = summarize_accuracies({0.2, 0.4, 0.6});
  CHECK(s.mean_acc == doctest::Approx(0.4));
  CHECK(s.ci95 == doctest::Approx(1.96 * 0.2 / std::sqrt(3.0)).epsilon(1e-12));

  CHECK_THROWS_AS(evaluate(net, ds, Split::test, {40, 1, 15, 1}, 5, 3, opts), DataError);
  EvalOptions maml_opts;
  maml_opts.algorithm = Algorithm::maml;
  CHECK_THROWS_AS(evaluate(net, ds, Split::test, spec, 5, 3, maml_opts), DimensionError);
  const Dataset tiny = load_dataset(testutil::data_dir() / "three_class" / "manifest.json");
  CHECK_THROWS(evaluate(net, tiny, Split::test, {1, 1, 1, 1}, 5, 3, opts));
}

TEST_CASE("weight trajectory export") {
  SUBCASE("normalized perturbation run") {
    const RunConfig cfg = smoke_config(Algorithm::protonet, MtmKind::spsa);
    const fs::path dir = testutil::scratch_dir("export_spsa");
    (void)train_run(cfg, dir);
    fs::remove(dir / "weights.csv");
    CHECK(export_weight_trajectory(dir) == dir / "weights.csv");
    const auto rows = weight_rows(dir / "weights.csv");
    CHECK(rows.size() == cfg.mtm_epochs());
    for (const auto& r : rows) {
      double s = 0.0;
      for (double w : r) s += w * w;
      CHECK(std::abs(std::sqrt(s) - std::sqrt(2.0)) < 1e-9);
    }
  }
  SUBCASE("baseline run has all-ones rows") {
    const RunConfig cfg = smoke_config(Algorithm::protonet, MtmKind::none);
    const fs::path dir = testutil::scratch_dir("export_none");
    (void)train_run(cfg, dir);
    const auto rows = weight_rows(export_weight_trajectory(dir));
    CHECK(rows.size() == cfg.mtm_epochs());
    for (const auto& r : rows) CHECK(r == std::vector<double>{1.0, 1.0});
  }
  SUBCASE("missing trajectory") {
    CHECK_THROWS_AS(export_weight_trajectory(testutil::scratch_dir("export_empty")), DataError);
    RunConfig cfg = smoke_config(Algorithm::protonet, MtmKind::none);
    cfg.epochs = 2;
    cfg.pretrain_epochs = 2;
    cfg.episodes_per_epoch = 2;
    const fs::path dir = testutil::scratch_dir("export_pretrain_only");
    (void)train_run(cfg, dir);
    CHECK_THROWS_AS(export_weight_trajectory(dir), DataError);
  }
}

TEST_CASE("config parsing") {
  CHECK_THROWS_AS(parse_config(R"({"algorithm": "protonet", "epoch": 3})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"optimizer": {"learning_rate": 0.1}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"mtm": "spsa", "epochs": 5, "pretrain_epochs": 5})"),
                  ConfigError);

  const RunConfig m = parse_config(R"({"algorithm": "maml", "mtm": "spsa"})");
  CHECK(m.optimizer.kind == OptimizerKind::adam);
  CHECK(m.maml.meta_lr == m.optimizer.hyper.learning_rate);

  const RunConfig cfg = smoke_config(Algorithm::maml, MtmKind::inner_first_order);
  const RunConfig back = parse_config(config_to_json(cfg));
  CHECK(config_to_json(back) == config_to_json(cfg));
  CHECK(config_hash(back) == config_hash(cfg));
  CHECK(config_hash(back).size() == 16);
  RunConfig other = cfg;
  other.seed += 1;
  CHECK(config_hash(other) != config_hash(cfg));
}

TEST_CASE("checkpoint round trip") {
  const Backbone net = testutil::seeded_net({3, 5, 2}, 9);
  const fs::path f = testutil::scratch_dir("ckpt") / "net.json";
  save_checkpoint(f, net, "abc");
  const Checkpoint c = load_checkpoint(f);
  CHECK(c.config_hash == "abc");
  CHECK(c.backbone.params() == net.params());
  CHECK(c.backbone.shape().layer_dims() == net.shape().layer_dims());

  CHECK_THROWS_AS(checkpoint_from_json("{"), DataError);
  CHECK_THROWS_AS(checkpoint_from_json(R"({"format_version": 99})"), DataError);
  std::string text = checkpoint_to_json(net, "abc");
  text.replace(text.find("\"values\""), 8, "\"valuez\"");
  CHECK_THROWS_AS(checkpoint_from_json(text), DataError);
  CHECK_THROWS_AS(load_checkpoint(f.parent_path() / "missing.json"), DataError);
}
