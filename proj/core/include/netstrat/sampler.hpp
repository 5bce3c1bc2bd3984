#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace netstrat {

// Log density at a point.
using LogDensityFn = std::function<double(std::span<const double>)>;
// Log density at a point; writes its gradient into the second argument.
using GradientFn = std::function<double(std::span<const double>, std::span<double>)>;

enum class SamplerAlgorithm { Nuts, RandomWalk };

struct SamplerConfig {
  int chains = 4;
  int warmup = 1000;
  int samples = 1000;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 1;
  int threads = 1;
  SamplerAlgorithm algorithm = SamplerAlgorithm::Nuts;
  double init_radius = 2.0;  // initial values uniform on (-r, r), unconstrained scale

  void validate() const;
  nlohmann::json to_json() const;
  // Overrides fields present in {"sampler": {...}}.
  void apply_json(const nlohmann::json& config);
};

// One chain's retained states on the unconstrained scale.
struct ChainOutput {
  std::vector<double> states;  // samples x dim, row-major
  std::vector<double> log_density;
  std::vector<double> accept_stat;
  std::vector<int> n_leapfrog;
  std::vector<int> tree_depth;
  std::vector<int> divergent;
  std::size_t warmup_divergences = 0;
  double step_size = 0.0;  // frozen after warmup
  std::vector<double> inv_metric;
};

struct SampleResult {
  std::size_t dim = 0;
  std::vector<ChainOutput> chains;
};

// Multinomial no-U-turn HMC with a diagonal metric. Warmup adapts the step size
// by dual averaging toward `target_accept` and the metric over doubling
// windows; both are frozen for the retained draws.
//
// Chain c draws everything from the substream make_rng(seed, c), so results do
// not depend on `threads`. With SamplerAlgorithm::RandomWalk the gradient
// function is evaluated only for its value.
//
// Throws SamplerError when no finite initial point is found after 100 tries.
SampleResult sample(const GradientFn& log_density_gradient, std::size_t dim,
                    const SamplerConfig& config);

// Retained draws on the natural parameter scale, with sampler statistics.
struct Draws {
  std::vector<std::string> names;
  std::size_t chains = 0;
  std::size_t samples = 0;  // per chain
  std::vector<double> values;  // ((chain * samples) + s) * dim + k
  std::vector<double> log_posterior;
  std::vector<double> accept_stat;
  std::vector<int> n_leapfrog;
  std::vector<int> divergent;

  std::size_t dim() const noexcept { return names.size(); }
  std::size_t size() const noexcept { return chains * samples; }
  double at(std::size_t chain, std::size_t s, std::size_t k) const {
    return values[((chain * samples) + s) * dim() + k];
  }
  std::span<const double> row(std::size_t draw) const {
    return {values.data() + draw * dim(), dim()};
  }
};

// Identity transform of a sample result, parameters named x[0], x[1], ...
Draws to_draws(const SampleResult& result, std::vector<std::string> names = {});

// Columns: chain, iteration, log_posterior, accept_stat, n_leapfrog,
// divergent, then one column per named parameter.
void write_draws_csv(const Draws& draws, const std::filesystem::path& path);
Draws read_draws_csv(const std::filesystem::path& path);

struct ParameterDiagnostics {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double rhat = 0.0;      // rank-normalized split R-hat (max of bulk and tail)
  double ess_bulk = 0.0;  // rank-normalized effective sample size
  bool degenerate = false;  // zero variance; rhat and ess are NaN
};

struct Diagnostics {
  std::vector<ParameterDiagnostics> parameters;
  std::size_t divergences = 0;
  double max_rhat = 0.0;
  double min_ess = 0.0;

  nlohmann::json to_json() const;
};

// Requires at least 2 chains and 4 draws per chain.
Diagnostics diagnose(const Draws& draws);

// Building blocks, exposed for testing.
double split_rhat(std::span<const std::vector<double>> chains);
double effective_sample_size(std::span<const std::vector<double>> chains);

}  // namespace netstrat
