// Command line front end: train, eval, gen-data, export-weights.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mtm/checkpoint.hpp"
#include "mtm/config.hpp"
#include "mtm/episodes.hpp"
#include "mtm/runner.hpp"

namespace {

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  const mtm::RunConfig cfg = mtm::load_config(config_path);
  const mtm::RunRecord record = mtm::train_run(cfg, out_dir);
  std::printf("best epoch %zu  val_acc %.4f\n", record.best_epoch, record.best_val_acc);
  std::printf("test mean_acc %.4f +- %.4f  (config %s)\n", record.test_mean_acc,
              record.test_ci95, record.config_hash.c_str());
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string split = "test";
  std::size_t episodes = 1000;
  std::uint64_t seed = 0;
  std::string algorithm = "protonet";
  mtm::EpisodeSpec spec;
  double adapt_lr = 0.01;
  int inner_steps = 10;
  std::string distance = "squared_euclidean";
};

int cmd_eval(const EvalArgs& a) {
  const mtm::Checkpoint ckpt = mtm::load_checkpoint(a.checkpoint);
  mtm::Dataset ds = mtm::load_dataset(a.dataset);
  ds.validate();
  mtm::EvalOptions opt;
  opt.algorithm = mtm::algorithm_from_string(a.algorithm);
  opt.maml.adapt_lr = a.adapt_lr;
  opt.maml.inner_steps_eval = a.inner_steps;
  opt.distance = mtm::distance_from_string(a.distance);
  const auto r = mtm::evaluate(ckpt.backbone, ds, mtm::split_from_string(a.split), a.spec,
                               a.episodes, a.seed, opt);
  std::printf("{\"mean_acc\": %.17g, \"ci95\": %.17g, \"episodes\": %zu}\n", r.mean_acc, r.ci95,
              a.episodes);
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task modification for few-shot meta-learning"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  auto* train = app.add_subcommand("train", "Train a model and write run artifacts");
  train->add_option("--config", config_path, "Run config JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out_dir, "Output directory")->required();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on episodes from a split");
  eval->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", ev.dataset, "Dataset manifest")->required();
  eval->add_option("--split", ev.split)->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--episodes", ev.episodes)->check(CLI::PositiveNumber);
  eval->add_option("--seed", ev.seed);
  eval->add_option("--algorithm", ev.algorithm)->check(CLI::IsMember({"protonet", "maml"}));
  eval->add_option("--way", ev.spec.n_way);
  eval->add_option("--shot", ev.spec.n_shot);
  eval->add_option("--query", ev.spec.n_query);
  eval->add_option("--adapt-lr", ev.adapt_lr);
  eval->add_option("--inner-steps", ev.inner_steps);
  eval->add_option("--distance", ev.distance)
      ->check(CLI::IsMember({"squared_euclidean", "euclidean"}));

  mtm::SyntheticParams gp;
  gp.num_classes = 20;
  std::string kind = "gaussian-blobs", gen_out;
  std::vector<std::size_t> splits;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic few-shot dataset");
  gen->add_option("--kind", kind)->check(CLI::IsMember({"gaussian-blobs"}));
  gen->add_option("--classes", gp.num_classes);
  gen->add_option("--dim", gp.dim);
  gen->add_option("--per-class", gp.per_class);
  gen->add_option("--coarse-groups", gp.coarse_groups);
  gen->add_option("--radius", gp.cluster_radius);
  gen->add_option("--sigma", gp.noise_sigma);
  gen->add_option("--signal-dim", gp.signal_dim, "Coordinates that carry class signal; 0 for all");
  gen->add_option("--splits", splits, "Class counts for train val test")->expected(3);
  gen->add_option("--seed", gp.seed);
  gen->add_option("--out", gen_out)->required();

  std::string run_dir;
  auto* exp = app.add_subcommand("export-weights", "Rewrite weights.csv from a run directory");
  exp->add_option("dir", run_dir)->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config_path, out_dir);
    if (*eval) return cmd_eval(ev);
    if (*gen) {
      if (!splits.empty()) gp.split_sizes = {splits[0], splits[1], splits[2]};
      const auto manifest = mtm::write_dataset(mtm::gen_synthetic(gp), gen_out);
      std::printf("%s\n", manifest.string().c_str());
      return 0;
    }
    if (*exp) {
      std::printf("%s\n", mtm::export_weight_trajectory(run_dir).string().c_str());
      return 0;
    }
  } catch (const mtm::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
