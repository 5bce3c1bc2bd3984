#include "netstrat/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "csv.hpp"
#include "netstrat/error.hpp"
#include "netstrat/rng.hpp"

namespace netstrat {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMaxDeltaH = 1000.0;  // energy error that marks a divergence

double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

void add_to(std::vector<double>& acc, const std::vector<double>& v) {
  for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += v[k];
}

std::vector<double> sum(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a);
  add_to(out, b);
  return out;
}

struct PhasePoint {
  std::vector<double> q, p, g;
  double log_density = -kInf;
};

// Nesterov dual averaging of log step size.
class StepSizeAdapter {
 public:
  explicit StepSizeAdapter(double delta) : delta_(delta) {}

  void restart(double step_size) {
    mu_ = std::log(10.0 * step_size);
    counter_ = 0.0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }

  double learn(double accept_stat) {
    counter_ += 1.0;
    accept_stat = std::min(1.0, accept_stat);
    const double eta = 1.0 / (counter_ + kT0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(counter_) / kGamma;
    const double x_eta = std::pow(counter_, -kKappa);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }

  double final_step_size() const { return std::exp(x_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kKappa = 0.75;
  static constexpr double kT0 = 10.0;
  double delta_;
  double mu_ = 0.0, counter_ = 0.0, s_bar_ = 0.0, x_bar_ = 0.0;
};

// Diagonal metric estimation over doubling windows between an initial fast
// buffer and a terminal fast buffer.
class MetricAdapter {
 public:
  MetricAdapter(int warmup, std::size_t dim) : warmup_(warmup), mean_(dim, 0.0), m2_(dim, 0.0) {
    if (warmup < 20) {
      active_ = false;
      return;
    }
    if (init_buffer_ + base_window_ + term_buffer_ > warmup) {
      init_buffer_ = static_cast<int>(0.15 * warmup);
      term_buffer_ = static_cast<int>(0.1 * warmup);
      base_window_ = warmup - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
  }

  // Returns true when a window closed and `inv_metric` was updated.
  bool learn(std::vector<double>& inv_metric, const std::vector<double>& q) {
    if (!active_) return false;
    if (in_window()) add_sample(q);
    if (end_of_window()) {
      compute_next_window();
      const double n = static_cast<double>(n_);
      for (std::size_t k = 0; k < inv_metric.size(); ++k) {
        const double var = m2_[k] / (n - 1.0);
        inv_metric[k] = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
      }
      n_ = 0;
      std::fill(mean_.begin(), mean_.end(), 0.0);
      std::fill(m2_.begin(), m2_.end(), 0.0);
      ++counter_;
      return true;
    }
    ++counter_;
    return false;
  }

 private:
  bool in_window() const {
    return counter_ >= init_buffer_ && counter_ < warmup_ - term_buffer_ && counter_ != warmup_;
  }
  bool end_of_window() const { return counter_ == next_window_ && counter_ != warmup_; }

  void compute_next_window() {
    if (next_window_ == warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != warmup_ - term_buffer_ - 1) {
      const int boundary = next_window_ + 2 * window_size_;
      if (boundary >= warmup_ - term_buffer_) next_window_ = warmup_ - term_buffer_ - 1;
    }
  }

  void add_sample(const std::vector<double>& q) {
    ++n_;
    const double n = static_cast<double>(n_);
    for (std::size_t k = 0; k < q.size(); ++k) {
      const double d = q[k] - mean_[k];
      mean_[k] += d / n;
      m2_[k] += d * (q[k] - mean_[k]);
    }
  }

  int warmup_;
  bool active_ = true;
  int init_buffer_ = 75, term_buffer_ = 50, base_window_ = 25;
  int window_size_ = 0, next_window_ = 0, counter_ = 0;
  std::size_t n_ = 0;
  std::vector<double> mean_, m2_;
};

class NutsChain {
 public:
  NutsChain(const GradientFn& f, std::size_t dim, const SamplerConfig& config, Rng& rng)
      : f_(f), dim_(dim), config_(config), rng_(rng), inv_metric_(dim, 1.0) {}

  void initialize(PhasePoint start) { z_ = std::move(start); }

  // Stan-style step size heuristic: double or halve until the one-step
  // acceptance crosses 0.8.
  void init_step_size() {
    const PhasePoint start = z_;
    sample_momentum();
    double h0 = hamiltonian(z_);
    leapfrog(z_, step_size_);
    double delta_h = h0 - energy_or_inf(z_);
    const int direction = delta_h > std::log(0.8) ? 1 : -1;
    for (int iter = 0; iter < 100; ++iter) {
      z_ = start;
      sample_momentum();
      h0 = hamiltonian(z_);
      leapfrog(z_, step_size_);
      delta_h = h0 - energy_or_inf(z_);
      if (direction == 1 && !(delta_h > std::log(0.8))) break;
      if (direction == -1 && !(delta_h < std::log(0.8))) break;
      step_size_ = direction == 1 ? 2.0 * step_size_ : 0.5 * step_size_;
      if (step_size_ > 1e7) throw SamplerError("step size diverged during initialization");
      if (step_size_ == 0.0) throw SamplerError("step size collapsed to zero during initialization");
    }
    z_ = start;
  }

  struct Transition {
    double accept_stat = 0.0;
    int n_leapfrog = 0;
    int depth = 0;
    bool divergent = false;
  };

  Transition transition() {
    sample_momentum();
    divergent_ = false;
    PhasePoint z_fwd = z_, z_bck = z_, z_sample = z_, z_propose = z_;

    std::vector<double> p_sharp_fwd_fwd = sharp(z_.p);
    std::vector<double> p_sharp_fwd_bck = p_sharp_fwd_fwd;
    std::vector<double> p_sharp_bck_fwd = p_sharp_fwd_fwd;
    std::vector<double> p_sharp_bck_bck = p_sharp_fwd_fwd;
    std::vector<double> p_fwd_fwd = z_.p, p_fwd_bck = z_.p, p_bck_fwd = z_.p, p_bck_bck = z_.p;
    std::vector<double> rho = z_.p;

    double log_sum_weight = 0.0;
    const double h0 = hamiltonian(z_);
    int n_leapfrog = 0;
    double sum_metro_prob = 0.0;
    int depth = 0;

    while (depth < config_.max_tree_depth) {
      std::vector<double> rho_fwd(dim_, 0.0), rho_bck(dim_, 0.0);
      bool valid_subtree = false;
      double log_sum_weight_subtree = -kInf;

      if (uniform01(rng_) > 0.5) {
        z_ = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid_subtree = build_tree(depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd,
                                   p_fwd_bck, p_fwd_fwd, h0, 1.0, n_leapfrog,
                                   log_sum_weight_subtree, sum_metro_prob);
        z_fwd = z_;
      } else {
        z_ = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid_subtree = build_tree(depth, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck,
                                   p_bck_fwd, p_bck_bck, h0, -1.0, n_leapfrog,
                                   log_sum_weight_subtree, sum_metro_prob);
        z_bck = z_;
      }
      if (!valid_subtree) break;
      ++depth;

      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (uniform01(rng_) < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

      rho = sum(rho_bck, rho_fwd);
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, sum(rho_bck, p_fwd_bck));
      persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, sum(rho_fwd, p_bck_fwd));
      if (!persist) break;
    }

    z_ = std::move(z_sample);
    Transition t;
    t.n_leapfrog = n_leapfrog;
    t.depth = depth;
    t.divergent = divergent_;
    t.accept_stat = n_leapfrog > 0 ? sum_metro_prob / n_leapfrog : 0.0;
    return t;
  }

  PhasePoint& state() { return z_; }
  std::vector<double>& inv_metric() { return inv_metric_; }
  double& step_size() { return step_size_; }

 private:
  bool build_tree(int depth, PhasePoint& z_propose, std::vector<double>& p_sharp_beg,
                  std::vector<double>& p_sharp_end, std::vector<double>& rho,
                  std::vector<double>& p_beg, std::vector<double>& p_end, double h0, double sign,
                  int& n_leapfrog, double& log_sum_weight, double& sum_metro_prob) {
    if (depth == 0) {
      leapfrog(z_, sign * step_size_);
      ++n_leapfrog;
      const double h = energy_or_inf(z_);
      if (h - h0 > kMaxDeltaH) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_prob += h0 - h > 0.0 ? 1.0 : std::exp(h0 - h);
      z_propose = z_;
      p_sharp_beg = sharp(z_.p);
      p_sharp_end = p_sharp_beg;
      add_to(rho, z_.p);
      p_beg = z_.p;
      p_end = p_beg;
      return !divergent_;
    }

    double log_sum_weight_init = -kInf;
    std::vector<double> p_init_end(dim_), p_sharp_init_end(dim_), rho_init(dim_, 0.0);
    if (!build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg,
                    p_init_end, h0, sign, n_leapfrog, log_sum_weight_init, sum_metro_prob))
      return false;

    PhasePoint z_propose_final = z_;
    double log_sum_weight_final = -kInf;
    std::vector<double> p_final_beg(dim_), p_sharp_final_beg(dim_), rho_final(dim_, 0.0);
    if (!build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final,
                    p_final_beg, p_end, h0, sign, n_leapfrog, log_sum_weight_final, sum_metro_prob))
      return false;

    const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = std::move(z_propose_final);
    } else if (uniform01(rng_) < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = std::move(z_propose_final);
    }

    const std::vector<double> rho_subtree = sum(rho_init, rho_final);
    add_to(rho, rho_subtree);
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, sum(rho_init, p_final_beg));
    persist = persist && criterion(p_sharp_init_end, p_sharp_end, sum(rho_final, p_init_end));
    return persist;
  }

  static bool criterion(const std::vector<double>& p_sharp_minus,
                        const std::vector<double>& p_sharp_plus, const std::vector<double>& rho) {
    return dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0;
  }

  std::vector<double> sharp(const std::vector<double>& p) const {
    std::vector<double> out(dim_);
    for (std::size_t k = 0; k < dim_; ++k) out[k] = inv_metric_[k] * p[k];
    return out;
  }

  void sample_momentum() {
    for (std::size_t k = 0; k < dim_; ++k) z_.p[k] = standard_normal(rng_) / std::sqrt(inv_metric_[k]);
  }

  double hamiltonian(const PhasePoint& z) const {
    double kinetic = 0.0;
    for (std::size_t k = 0; k < dim_; ++k) kinetic += inv_metric_[k] * z.p[k] * z.p[k];
    return -z.log_density + 0.5 * kinetic;
  }

  double energy_or_inf(const PhasePoint& z) const {
    const double h = hamiltonian(z);
    return std::isnan(h) ? kInf : h;
  }

  void leapfrog(PhasePoint& z, double eps) {
    for (std::size_t k = 0; k < dim_; ++k) z.p[k] += 0.5 * eps * z.g[k];
    for (std::size_t k = 0; k < dim_; ++k) z.q[k] += eps * inv_metric_[k] * z.p[k];
    z.log_density = f_(z.q, z.g);
    for (std::size_t k = 0; k < dim_; ++k) z.p[k] += 0.5 * eps * z.g[k];
  }

  const GradientFn& f_;
  std::size_t dim_;
  const SamplerConfig& config_;
  Rng& rng_;
  PhasePoint z_;
  std::vector<double> inv_metric_;
  double step_size_ = 1.0;
  bool divergent_ = false;
};

PhasePoint initial_point(const GradientFn& f, std::size_t dim, const SamplerConfig& config,
                         Rng& rng) {
  PhasePoint z;
  z.q.resize(dim);
  z.p.assign(dim, 0.0);
  z.g.assign(dim, 0.0);
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (auto& v : z.q) v = config.init_radius * (2.0 * uniform01(rng) - 1.0);
    z.log_density = f(z.q, z.g);
    if (std::isfinite(z.log_density) &&
        std::all_of(z.g.begin(), z.g.end(), [](double v) { return std::isfinite(v); }))
      return z;
  }
  throw SamplerError("no finite initial point after 100 attempts");
}

void record(ChainOutput& out, const PhasePoint& z, double accept, int n_leapfrog, int depth,
            bool divergent) {
  out.states.insert(out.states.end(), z.q.begin(), z.q.end());
  out.log_density.push_back(z.log_density);
  out.accept_stat.push_back(accept);
  out.n_leapfrog.push_back(n_leapfrog);
  out.tree_depth.push_back(depth);
  out.divergent.push_back(divergent ? 1 : 0);
}

ChainOutput run_nuts(const GradientFn& f, std::size_t dim, const SamplerConfig& config,
                     std::size_t chain) {
  Rng rng = make_rng(config.seed, chain);
  NutsChain nuts(f, dim, config, rng);
  nuts.initialize(initial_point(f, dim, config, rng));
  nuts.init_step_size();

  ChainOutput out;
  StepSizeAdapter step_adapter(config.target_accept);
  step_adapter.restart(nuts.step_size());
  MetricAdapter metric_adapter(config.warmup, dim);
  for (int it = 0; it < config.warmup; ++it) {
    const auto t = nuts.transition();
    out.warmup_divergences += t.divergent ? 1 : 0;
    nuts.step_size() = step_adapter.learn(t.accept_stat);
    if (metric_adapter.learn(nuts.inv_metric(), nuts.state().q)) {
      nuts.init_step_size();
      step_adapter.restart(nuts.step_size());
    }
  }
  if (config.warmup > 0) nuts.step_size() = step_adapter.final_step_size();

  out.states.reserve(static_cast<std::size_t>(config.samples) * dim);
  for (int it = 0; it < config.samples; ++it) {
    const auto t = nuts.transition();
    record(out, nuts.state(), t.accept_stat, t.n_leapfrog, t.depth, t.divergent);
  }
  out.step_size = nuts.step_size();
  out.inv_metric = nuts.inv_metric();
  return out;
}

// Gaussian random-walk Metropolis; the proposal scale is tuned during warmup
// toward an acceptance rate of 0.234.
ChainOutput run_random_walk(const GradientFn& f, std::size_t dim, const SamplerConfig& config,
                            std::size_t chain) {
  Rng rng = make_rng(config.seed, chain);
  PhasePoint z = initial_point(f, dim, config, rng);
  std::vector<double> proposal(dim), scratch(dim);
  double log_scale = std::log(2.38 / std::sqrt(static_cast<double>(dim)));
  ChainOutput out;
  const int total = config.warmup + config.samples;
  for (int it = 0; it < total; ++it) {
    const double scale = std::exp(log_scale);
    for (std::size_t k = 0; k < dim; ++k) proposal[k] = z.q[k] + scale * standard_normal(rng);
    const double lp = f(proposal, scratch);
    const double accept = std::isfinite(lp) ? std::min(1.0, std::exp(lp - z.log_density)) : 0.0;
    if (uniform01(rng) < accept) {
      z.q = proposal;
      z.log_density = lp;
    }
    if (it < config.warmup) {
      log_scale += (accept - 0.234) / std::sqrt(static_cast<double>(it) + 1.0);
    } else {
      record(out, z, accept, 1, 0, false);
    }
  }
  out.step_size = std::exp(log_scale);
  out.inv_metric.assign(dim, 1.0);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

void SamplerConfig::validate() const {
  if (chains < 1) throw ValidationError("chains must be positive");
  if (warmup < 0) throw ValidationError("warmup must be nonnegative");
  if (samples < 1) throw ValidationError("samples must be positive");
  if (!(target_accept > 0.0 && target_accept < 1.0))
    throw ValidationError("target_accept must lie strictly inside (0, 1)");
  if (max_tree_depth < 1) throw ValidationError("max_tree_depth must be positive");
  if (threads < 1) throw ValidationError("threads must be positive");
  if (!(init_radius > 0.0)) throw ValidationError("init_radius must be positive");
}

nlohmann::json SamplerConfig::to_json() const {
  return {{"chains", chains},
          {"warmup", warmup},
          {"samples", samples},
          {"target_accept", target_accept},
          {"max_tree_depth", max_tree_depth},
          {"seed", seed},
          {"algorithm", algorithm == SamplerAlgorithm::Nuts ? "nuts" : "random_walk"},
          {"init_radius", init_radius}};
}

void SamplerConfig::apply_json(const nlohmann::json& config) {
  if (!config.is_object() || !config.contains("sampler")) return;
  const auto& s = config.at("sampler");
  chains = s.value("chains", chains);
  warmup = s.value("warmup", warmup);
  samples = s.value("samples", samples);
  target_accept = s.value("target_accept", target_accept);
  max_tree_depth = s.value("max_tree_depth", max_tree_depth);
  seed = s.value("seed", seed);
  init_radius = s.value("init_radius", init_radius);
  if (s.contains("algorithm")) {
    const auto name = s.at("algorithm").get<std::string>();
    if (name == "nuts")
      algorithm = SamplerAlgorithm::Nuts;
    else if (name == "random_walk")
      algorithm = SamplerAlgorithm::RandomWalk;
    else
      throw ValidationError("unknown sampler algorithm '" + name + "'");
  }
}

SampleResult sample(const GradientFn& f, std::size_t dim, const SamplerConfig& config) {
  config.validate();
  if (dim == 0) throw ValidationError("cannot sample a zero-dimensional target");
  SampleResult result;
  result.dim = dim;
  result.chains.resize(static_cast<std::size_t>(config.chains));

  auto run = [&](std::size_t c) {
    return config.algorithm == SamplerAlgorithm::Nuts ? run_nuts(f, dim, config, c)
                                                      : run_random_walk(f, dim, config, c);
  };

  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(config.threads), result.chains.size());
  if (workers <= 1) {
    for (std::size_t c = 0; c < result.chains.size(); ++c) result.chains[c] = run(c);
    return result;
  }

  std::mutex mutex;
  std::size_t next = 0;
  std::exception_ptr failure;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        std::size_t c;
        {
          std::lock_guard lock(mutex);
          if (next >= result.chains.size() || failure) return;
          c = next++;
        }
        try {
          result.chains[c] = run(c);
        } catch (...) {
          std::lock_guard lock(mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return result;
}

Draws to_draws(const SampleResult& result, std::vector<std::string> names) {
  Draws d;
  if (names.empty())
    for (std::size_t k = 0; k < result.dim; ++k) names.push_back("x[" + std::to_string(k) + "]");
  d.names = std::move(names);
  d.chains = result.chains.size();
  d.samples = result.chains.empty() ? 0 : result.chains.front().log_density.size();
  for (const auto& c : result.chains) {
    d.values.insert(d.values.end(), c.states.begin(), c.states.end());
    d.log_posterior.insert(d.log_posterior.end(), c.log_density.begin(), c.log_density.end());
    d.accept_stat.insert(d.accept_stat.end(), c.accept_stat.begin(), c.accept_stat.end());
    d.n_leapfrog.insert(d.n_leapfrog.end(), c.n_leapfrog.begin(), c.n_leapfrog.end());
    d.divergent.insert(d.divergent.end(), c.divergent.begin(), c.divergent.end());
  }
  return d;
}

void write_draws_csv(const Draws& draws, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "chain,iteration,log_posterior,accept_stat,n_leapfrog,divergent";
  for (const auto& n : draws.names) out << ',' << n;
  out << '\n';
  for (std::size_t c = 0; c < draws.chains; ++c) {
    for (std::size_t s = 0; s < draws.samples; ++s) {
      const std::size_t r = c * draws.samples + s;
      out << c << ',' << s << ',' << csv::format_double(draws.log_posterior[r]) << ','
          << csv::format_double(draws.accept_stat[r]) << ',' << draws.n_leapfrog[r] << ','
          << draws.divergent[r];
      for (double v : draws.row(r)) out << ',' << csv::format_double(v);
      out << '\n';
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Draws read_draws_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  constexpr std::size_t kFixed = 6;
  const std::vector<std::string> fixed = {"chain",      "iteration", "log_posterior",
                                          "accept_stat", "n_leapfrog", "divergent"};
  if (table.header.size() < kFixed ||
      !std::equal(fixed.begin(), fixed.end(), table.header.begin()))
    throw ParseError(table.file, 1, "draws header must start with " "chain,iteration,log_posterior,accept_stat,n_leapfrog,divergent");
  Draws d;
  d.names.assign(table.header.begin() + kFixed, table.header.end());
  std::size_t expected_chain = 0, expected_iter = 0;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto line = table.line_numbers[r];
    const auto chain = static_cast<std::size_t>(csv::parse_int(row[0], table.file, line));
    const auto iter = static_cast<std::size_t>(csv::parse_int(row[1], table.file, line));
    if (chain == expected_chain + 1 && iter == 0 && r > 0) {
      if (d.samples == 0) d.samples = expected_iter;
      if (expected_iter != d.samples) throw ParseError(table.file, line, "chains have unequal length");
      expected_chain = chain;
      expected_iter = 0;
    }
    if (chain != expected_chain || iter != expected_iter)
      throw ParseError(table.file, line, "draws must be ordered by chain then iteration");
    ++expected_iter;
    d.log_posterior.push_back(csv::parse_double(row[2], table.file, line));
    d.accept_stat.push_back(csv::parse_double(row[3], table.file, line));
    d.n_leapfrog.push_back(static_cast<int>(csv::parse_int(row[4], table.file, line)));
    d.divergent.push_back(static_cast<int>(csv::parse_int(row[5], table.file, line)));
    for (std::size_t k = kFixed; k < row.size(); ++k)
      d.values.push_back(csv::parse_double(row[k], table.file, line));
  }
  if (table.rows.empty()) throw ParseError(table.file, 0, "no draws");
  if (d.samples == 0) d.samples = expected_iter;
  if (expected_iter != d.samples) throw ParseError(table.file, 0, "chains have unequal length");
  d.chains = expected_chain + 1;
  return d;
}

}  // namespace netstrat
