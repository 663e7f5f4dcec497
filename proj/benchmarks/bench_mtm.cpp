#include <benchmark/benchmark.h>

#include "mtm/maml.hpp"
#include "mtm/protonet.hpp"
#include "mtm/runner.hpp"

using namespace mtm;

namespace {

const Dataset& desk_data() {
  static const Dataset ds = gen_synthetic({});
  return ds;
}

Backbone net_of(std::vector<std::size_t> dims) {
  RngStream rng(1, StreamId::init);
  return Backbone::initialized(MlpShape(std::move(dims), Activation::relu), rng);
}

Task one_task() {
  RngStream rng(2, StreamId::train_sampling);
  return sample_task(desk_data(), Split::train, {5, 1, 15, 1}, rng);
}

} // namespace

static void BM_LossAndGrad(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const Backbone net = net_of({16, width, width, 5});
  const Task task = one_task();
  const CrossEntropyHead head{task.query_labels, 5, {}};
  for (auto _ : state) {
    auto r = loss_and_grad<double>(net.shape(), net.params().values(), task.query, head);
    benchmark::DoNotOptimize(r);
  }
}
BENCHMARK(BM_LossAndGrad)->Arg(32)->Arg(64)->Arg(128);

static void BM_HessianVectorProduct(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const Backbone net = net_of({16, width, width, 5});
  const Task task = one_task();
  const NetObjective<CrossEntropyHead> obj(net.shape(), task.support,
                                           CrossEntropyHead{task.support_labels, 5, {}});
  std::vector<double> v(obj.dimension(), 0.01), out(obj.dimension());
  for (auto _ : state) {
    obj.hvp(net.params().values(), v, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_HessianVectorProduct)->Arg(32)->Arg(64);

static void BM_SpsaUpdate(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  auto opt = WeightOptimizer::perturbation(WeightOptKind::spsa_track, m, {},
                                           RngStream(3, StreamId::perturbation), true);
  const std::vector<double> losses(m, 1.5);
  const LossEval eval = [&](std::span<const double> w) { return multitask_objective(w, losses); };
  for (auto _ : state) benchmark::DoNotOptimize(opt.spsa_track_update(eval));
}
BENCHMARK(BM_SpsaUpdate)->Arg(4)->Arg(64);

static void BM_SampleEpisode(benchmark::State& state) {
  RngStream rng(4, StreamId::train_sampling);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_episode(desk_data(), Split::train, {5, 1, 15, 4}, rng));
  }
}
BENCHMARK(BM_SampleEpisode);

static void BM_TrainEpisode(benchmark::State& state) {
  const auto algo = static_cast<Algorithm>(state.range(0));
  RunConfig cfg;
  cfg.algorithm = algo;
  cfg.optimizer = OptimizerConfig::defaults_for(algo);
  TrainState ts;
  ts.model = net_of(model_shape(cfg, desk_data().feature_dim).layer_dims());
  ts.optimizer = OptimizerState(cfg.optimizer.kind, cfg.optimizer.hyper, ts.model.params().size());
  RngStream rng(5, StreamId::train_sampling);
  const Episode ep = sample_episode(desk_data(), Split::train, cfg.episode, rng);
  for (auto _ : state) benchmark::DoNotOptimize(train_episode(ts, ep, cfg, false));
  state.SetLabel(to_string(algo));
}
BENCHMARK(BM_TrainEpisode)
    ->Arg(static_cast<int>(Algorithm::maml))
    ->Arg(static_cast<int>(Algorithm::protonet));

BENCHMARK_MAIN();
