#include <benchmark/benchmark.h>

#include <spdlog/spdlog.h>

#include "netstrat/estimands.hpp"
#include "netstrat/sampler.hpp"
#include "netstrat/simulate.hpp"

namespace {

using namespace netstrat;

const SimulatedStudy& study() {
  static const SimulatedStudy sim = [] {
    spdlog::set_level(spdlog::level::err);
    return generate(SimConfig::defaults());
  }();
  return sim;
}

void BM_LogLikelihood(benchmark::State& state) {
  const auto& sim = study();
  for (auto _ : state) benchmark::DoNotOptimize(log_likelihood(sim.data, sim.truth.params));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(sim.data.n_students()));
}
BENCHMARK(BM_LogLikelihood);

void BM_Gradient(benchmark::State& state) {
  const auto& sim = study();
  const Posterior post(sim.data, {});
  const auto theta = unconstrain(sim.truth.params);
  std::vector<double> grad(post.dim());
  for (auto _ : state) benchmark::DoNotOptimize(post.log_density_gradient(theta, grad));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(sim.data.n_students()));
}
BENCHMARK(BM_Gradient);

void BM_NutsStandardNormal(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const GradientFn target = [](std::span<const double> x, std::span<double> g) {
    double lp = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      lp -= 0.5 * x[k] * x[k];
      g[k] = -x[k];
    }
    return lp;
  };
  SamplerConfig cfg;
  cfg.chains = 1;
  cfg.warmup = 200;
  cfg.samples = 200;
  for (auto _ : state) benchmark::DoNotOptimize(sample(target, dim, cfg));
}
BENCHMARK(BM_NutsStandardNormal)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_Augment(benchmark::State& state) {
  const auto& sim = study();
  Rng rng = make_rng(1, 0);
  for (auto _ : state) benchmark::DoNotOptimize(augment(sim.data, sim.truth.params, rng));
}
BENCHMARK(BM_Augment)->Unit(benchmark::kMicrosecond);

void BM_EstimandsPerDraw(benchmark::State& state) {
  const auto& sim = study();
  Draws draws;
  draws.names = sim.truth.params.layout.names(sim.data);
  draws.chains = 1;
  draws.samples = 1;
  draws.values = sim.truth.params.values;
  draws.log_posterior = {0.0};
  draws.accept_stat = {1.0};
  draws.n_leapfrog = {1};
  draws.divergent = {0};
  const EstimandRequest request;
  for (auto _ : state)
    benchmark::DoNotOptimize(compute_estimands(sim.data, draws, sim.truth.params.layout, request));
}
BENCHMARK(BM_EstimandsPerDraw)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
