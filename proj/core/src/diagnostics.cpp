#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "netstrat/error.hpp"
#include "netstrat/sampler.hpp"

namespace netstrat {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Chains = std::vector<std::vector<double>>;

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

void check_shape(std::span<const std::vector<double>> chains) {
  if (chains.size() < 2) throw ValidationError("diagnostics need at least 2 chains");
  const std::size_t n = chains.front().size();
  if (n < 4) throw ValidationError("diagnostics need at least 4 draws per chain");
  for (const auto& c : chains)
    if (c.size() != n) throw ValidationError("chains have unequal length");
}

bool is_constant(std::span<const std::vector<double>> chains) {
  const double first = chains.front().front();
  for (const auto& c : chains)
    for (double v : c)
      if (v != first) return false;
  return true;
}

Chains split(std::span<const std::vector<double>> chains) {
  Chains out;
  const std::size_t half = chains.front().size() / 2;
  const std::size_t n = chains.front().size();
  for (const auto& c : chains) {
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.begin() + static_cast<std::ptrdiff_t>(n - half), c.end());
  }
  return out;
}

// Normal scores of pooled fractional ranks, ties given their average rank.
Chains rank_normalize(const Chains& chains) {
  std::vector<std::pair<double, std::size_t>> pooled;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (std::size_t i = 0; i < chains[c].size(); ++i)
      pooled.emplace_back(chains[c][i], c * chains.front().size() + i);
  std::sort(pooled.begin(), pooled.end());
  const double total = static_cast<double>(pooled.size());
  std::vector<double> ranks(pooled.size());
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j + 1 < pooled.size() && pooled[j + 1].first == pooled[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[pooled[k].second] = avg;
    i = j + 1;
  }
  const boost::math::normal_distribution<double> normal;
  Chains out = chains;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (std::size_t i = 0; i < chains[c].size(); ++i) {
      const double r = ranks[c * chains.front().size() + i];
      out[c][i] = boost::math::quantile(normal, (r - 0.375) / (total + 0.25));
    }
  return out;
}

Chains fold(std::span<const std::vector<double>> chains) {
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  const auto mid = pooled.begin() + static_cast<std::ptrdiff_t>(pooled.size() / 2);
  std::nth_element(pooled.begin(), mid, pooled.end());
  double median = *mid;
  if (pooled.size() % 2 == 0) {
    const double lower = *std::max_element(pooled.begin(), mid);
    median = 0.5 * (median + lower);
  }
  Chains out(chains.begin(), chains.end());
  for (auto& c : out)
    for (double& v : c) v = std::abs(v - median);
  return out;
}

double rhat_basic(const Chains& chains) {
  const double n = static_cast<double>(chains.front().size());
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    means.push_back(mean_of(c));
    vars.push_back(variance_of(c));
  }
  const double between = n * variance_of(means);
  const double within = mean_of(vars);
  const double var_plus = (n - 1.0) / n * within + between / n;
  return std::sqrt(var_plus / within);
}

// Autocovariance of one chain at lags 0..n-1, divided by n.
std::vector<double> autocovariance(const std::vector<double>& x) {
  const std::size_t n = x.size();
  const double m = mean_of(x);
  std::vector<double> acov(n, 0.0);
  for (std::size_t lag = 0; lag < n; ++lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - m) * (x[i + lag] - m);
    acov[lag] = s / static_cast<double>(n);
  }
  return acov;
}

// Geyer initial monotone sequence estimator across chains.
double ess_basic(const Chains& chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  std::vector<std::vector<double>> acov;
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    acov.push_back(autocovariance(c));
    means.push_back(mean_of(c));
    vars.push_back(acov.back()[0] * static_cast<double>(n) / static_cast<double>(n - 1));
  }
  const double dn = static_cast<double>(n);
  double var_plus = mean_of(vars) * (dn - 1.0) / dn;
  if (m > 1) var_plus += variance_of(means);
  if (!(var_plus > 0.0)) return kNaN;

  auto rho_at = [&](std::size_t t) {
    double acov_t = 0.0;
    for (std::size_t c = 0; c < m; ++c) acov_t += acov[c][t];
    acov_t /= static_cast<double>(m);
    return 1.0 - (mean_of(vars) - acov_t) / var_plus;
  };

  std::vector<double> rho(n, 0.0);
  rho[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = rho_at(1);
  rho[1] = rho_odd;
  std::size_t t = 1;
  while (t + 5 < n && rho_even + rho_odd > 0.0) {
    rho_even = rho_at(t + 1);
    rho_odd = rho_at(t + 2);
    if (rho_even + rho_odd >= 0.0) {
      rho[t + 1] = rho_even;
      rho[t + 2] = rho_odd;
    }
    t += 2;
  }
  const std::size_t max_t = t;
  if (rho_even > 0.0) rho[max_t] = rho_even;
  for (std::size_t u = 1; u + 3 <= max_t; u += 2) {
    if (rho[u + 1] + rho[u + 2] > rho[u - 1] + rho[u]) {
      rho[u + 1] = (rho[u - 1] + rho[u]) / 2.0;
      rho[u + 2] = rho[u + 1];
    }
  }
  double tau = -1.0;
  for (std::size_t u = 0; u < max_t; ++u) tau += 2.0 * rho[u];
  tau += rho[max_t];
  const double total = static_cast<double>(m) * dn;
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

}  // namespace

double split_rhat(std::span<const std::vector<double>> chains) {
  check_shape(chains);
  if (is_constant(chains)) return kNaN;
  const double bulk = rhat_basic(rank_normalize(split(chains)));
  const Chains folded = fold(chains);
  const double tail = is_constant(folded) ? kNaN : rhat_basic(rank_normalize(split(folded)));
  return std::isnan(tail) ? bulk : std::max(bulk, tail);
}

double effective_sample_size(std::span<const std::vector<double>> chains) {
  check_shape(chains);
  if (is_constant(chains)) return kNaN;
  return ess_basic(rank_normalize(split(chains)));
}

Diagnostics diagnose(const Draws& draws) {
  if (draws.chains < 2) throw ValidationError("diagnostics need at least 2 chains");
  if (draws.samples < 4) throw ValidationError("diagnostics need at least 4 draws per chain");
  Diagnostics d;
  d.divergences = static_cast<std::size_t>(
      std::count_if(draws.divergent.begin(), draws.divergent.end(), [](int v) { return v != 0; }));
  d.max_rhat = 0.0;
  d.min_ess = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < draws.dim(); ++k) {
    Chains chains(draws.chains, std::vector<double>(draws.samples));
    for (std::size_t c = 0; c < draws.chains; ++c)
      for (std::size_t s = 0; s < draws.samples; ++s) chains[c][s] = draws.at(c, s, k);
    ParameterDiagnostics p;
    p.name = draws.names[k];
    std::vector<double> pooled;
    for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
    p.mean = mean_of(pooled);
    p.sd = std::sqrt(variance_of(pooled));
    p.degenerate = is_constant(chains);
    if (p.degenerate) {
      p.rhat = kNaN;
      p.ess_bulk = kNaN;
    } else {
      p.rhat = split_rhat(chains);
      p.ess_bulk = effective_sample_size(chains);
      d.max_rhat = std::max(d.max_rhat, p.rhat);
      d.min_ess = std::min(d.min_ess, p.ess_bulk);
    }
    d.parameters.push_back(std::move(p));
  }
  if (std::isinf(d.min_ess)) d.min_ess = kNaN;
  return d;
}

nlohmann::json Diagnostics::to_json() const {
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : parameters)
    params.push_back({{"name", p.name},
                      {"mean", num(p.mean)},
                      {"sd", num(p.sd)},
                      {"rhat", num(p.rhat)},
                      {"ess_bulk", num(p.ess_bulk)},
                      {"degenerate", p.degenerate}});
  return {{"divergences", divergences},
          {"max_rhat", num(max_rhat)},
          {"min_ess", num(min_ess)},
          {"parameters", params}};
}

}  // namespace netstrat
