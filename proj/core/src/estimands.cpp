#include "netstrat/estimands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include <boost/math/distributions/poisson.hpp>

#include "csv.hpp"
#include "netstrat/error.hpp"
#include "netstrat/study_data.hpp"

namespace netstrat {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kStrataStream = 0x5354;
constexpr std::uint64_t kOutcomeStream = 0x4f55;

std::string format_s(double s) { return csv::format_double(s); }

void check_arm(int z) {
  if (z < 1 || z > 3) throw ValidationError("encouragement must be 1, 2 or 3");
}

double term_mediator(const OutcomeTerm& t, const AugmentedDraw& aug, std::size_t i) {
  return t.mediator_arm > 0 ? aug.s(i, t.mediator_arm) : t.s;
}

nlohmann::json summary_json(const EstimandSummary& s) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  return {{"mean", num(s.mean)}, {"sd", num(s.sd)},   {"q2.5", num(s.q025)},
          {"q5", num(s.q05)},    {"q95", num(s.q95)}, {"q97.5", num(s.q975)},
          {"n_draws", s.n},      {"n_missing", s.missing}};
}

std::optional<EstimandSummary> try_summarize(std::span<const double> values) {
  if (std::all_of(values.begin(), values.end(), [](double v) { return std::isnan(v); }))
    return std::nullopt;
  return summarize(values);
}

}  // namespace

// ---------------------------------------------------------------------------
// Augmentation

std::vector<Stratum> impute_strata(const StudyData& data, const Parameters& params, Rng& rng) {
  std::vector<Stratum> out(data.n_students());
  for (std::size_t i = 0; i < data.n_students(); ++i) {
    const auto lw = stratum_log_weights(data, i, params);
    const double hi = *std::max_element(lw.begin(), lw.end());
    if (!std::isfinite(hi))
      throw ValidationError("all stratum weights vanish for student " + data.students()[i].id);
    std::array<double, kNumStrata> w{};
    double total = 0.0;
    for (std::size_t g = 0; g < kNumStrata; ++g) {
      w[g] = std::exp(lw[g] - hi);
      total += w[g];
    }
    double u = uniform01(rng) * total;
    std::size_t pick = kNumStrata;
    for (std::size_t g = 0; g < kNumStrata; ++g) {
      if (w[g] == 0.0) continue;
      pick = g;
      if (u < w[g]) break;
      u -= w[g];
    }
    out[i] = kAllStrata[pick];
  }
  return out;
}

std::vector<double> potential_mediator(const StudyData& data, std::span<const Stratum> strata,
                                       int z) {
  check_arm(z);
  if (strata.size() != data.n_students())
    throw ValidationError("stratum vector does not match the study");
  std::vector<int> m(strata.size());
  for (std::size_t i = 0; i < strata.size(); ++i) m[i] = potential_treatment(strata[i], z);
  std::vector<double> s(strata.size());
  for (std::size_t i = 0; i < strata.size(); ++i) s[i] = share_of(data.neighbors(i), m);
  return s;
}

AugmentedDraw augment(const StudyData& data, const Parameters& params, Rng& rng) {
  AugmentedDraw aug;
  aug.strata = impute_strata(data, params, rng);
  for (int z = 1; z <= 3; ++z) {
    auto& m = aug.treatment[static_cast<std::size_t>(z - 1)];
    m.resize(aug.strata.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = potential_treatment(aug.strata[i], z);
    aug.mediator[static_cast<std::size_t>(z - 1)] = potential_mediator(data, aug.strata, z);
  }
  return aug;
}

OutcomeUniforms outcome_uniforms(std::uint64_t seed, std::size_t draw, std::size_t student) {
  const std::uint64_t h0 = mix64(substream_seed(seed ^ kOutcomeStream, draw, student));
  const std::uint64_t h1 = mix64(h0);
  return {open_uniform_from_bits(h0), open_uniform_from_bits(h1)};
}

int zip_quantile(double phi, double mu, OutcomeUniforms u) {
  if (u.u0 < phi) return 0;
  if (mu > 50.0) {
    using namespace boost::math::policies;
    using Policy = policy<discrete_quantile<integer_round_up>>;
    const boost::math::poisson_distribution<double, Policy> pois(mu);
    return static_cast<int>(boost::math::quantile(pois, u.u1));
  }
  double p = std::exp(-mu);
  double cdf = p;
  int k = 0;
  while (u.u1 > cdf) {
    ++k;
    p *= mu / k;
    cdf += p;
    if (p == 0.0 && k > mu) break;
  }
  return k;
}

OutcomeUniforms condition_uniforms(const StudyData& data, const Parameters& params, std::size_t student,
                                   Stratum g, OutcomeUniforms raw) {
  const int z = data.arm(student);
  const int y = data.students()[student].y;
  const double phi = params.phi(g, z);
  const double mu = poisson_mean(g, z, data.observed_share(student), data.outcome_x(student),
                                 params.b(data.class_of(student)), params);
  if (y == 0) {
    const double p0 = std::exp(-mu);
    const double mass = phi + (1.0 - phi) * p0;
    const double structural = mass > 0.0 ? phi / mass : 1.0;
    if (raw.u0 < structural) return {phi * raw.u0 / structural, raw.u1};
    return {phi + (1.0 - phi) * (raw.u0 - structural) / (1.0 - structural), p0 * raw.u1};
  }
  const boost::math::poisson_distribution<double> pois(mu);
  const double lo = boost::math::cdf(pois, y - 1);
  const double hi = boost::math::cdf(pois, y);
  return {phi + (1.0 - phi) * raw.u0, lo + (hi - lo) * raw.u1};
}

int impute_outcome(const StudyData& data, const Parameters& params, std::size_t student, Stratum g,
                   int z, double s, OutcomeUniforms u) {
  check_arm(z);
  if (!(s >= 0.0 && s <= 1.0)) throw ValidationError("mediator value must lie in [0, 1]");
  const auto& layout = params.layout;
  const int realized = data.arm(student);
  if (layout.alpha(g, z) == layout.alpha(g, realized) &&
      layout.beta_s(g, z) == layout.beta_s(g, realized) && s == data.observed_share(student))
    return data.students()[student].y;
  const double mu = poisson_mean(g, z, s, data.outcome_x(student),
                                 params.b(data.class_of(student)), params);
  return zip_quantile(params.phi(g, z), mu, u);
}

// ---------------------------------------------------------------------------
// Effects

OutcomeTerm EffectSpec::plus() const {
  switch (kind) {
    case EffectKind::PCE: return {z, z, 0.0};
    case EffectKind::NDE: return {z, mediator_arm, 0.0};
    case EffectKind::NIE: return {mediator_arm, z, 0.0};
    case EffectKind::CDE: return {z, 0, s_a};
    case EffectKind::CSE: return {z, 0, s_a};
  }
  return {};
}

OutcomeTerm EffectSpec::minus() const {
  switch (kind) {
    case EffectKind::PCE: return {z_prime, z_prime, 0.0};
    case EffectKind::NDE: return {z_prime, mediator_arm, 0.0};
    case EffectKind::NIE: return {mediator_arm, z_prime, 0.0};
    case EffectKind::CDE: return {z_prime, 0, s_a};
    case EffectKind::CSE: return {z, 0, s_b};
  }
  return {};
}

std::string EffectSpec::name() const {
  switch (kind) {
    case EffectKind::PCE: return "PCE";
    case EffectKind::NDE: return "NDE";
    case EffectKind::NIE: return "NIE";
    case EffectKind::CDE: return "CDE";
    case EffectKind::CSE: return "CSE";
  }
  return "";
}

std::string EffectSpec::label() const {
  const auto zs = std::to_string(z);
  const auto zps = std::to_string(z_prime);
  const auto ws = std::to_string(mediator_arm);
  switch (kind) {
    case EffectKind::PCE: return "PCE(" + zs + " vs " + zps + ")";
    case EffectKind::NDE: return "NDE(" + zs + " vs " + zps + ", S(" + ws + "))";
    case EffectKind::NIE: return "NIE(" + ws + ", S(" + zs + ") vs S(" + zps + "))";
    case EffectKind::CDE: return "CDE(" + zs + " vs " + zps + ", " + format_s(s_a) + ")";
    case EffectKind::CSE: return "CSE(" + zs + ", " + format_s(s_a) + " vs " + format_s(s_b) + ")";
  }
  return "";
}

std::optional<double> effect_value(const StudyData& data, const Parameters& params,
                                   const AugmentedDraw& aug, std::span<const OutcomeUniforms> u,
                                   const EffectSpec& effect, Stratum g) {
  const OutcomeTerm plus = effect.plus();
  const OutcomeTerm minus = effect.minus();
  long long total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < data.n_students(); ++i) {
    if (aug.strata[i] != g) continue;
    ++count;
    total += impute_outcome(data, params, i, g, plus.z, term_mediator(plus, aug, i), u[i]);
    total -= impute_outcome(data, params, i, g, minus.z, term_mediator(minus, aug, i), u[i]);
  }
  if (count == 0) return std::nullopt;
  return static_cast<double>(total) / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Requests

void EstimandRequest::validate() const {
  if (contrasts.empty()) throw ValidationError("estimand request has no contrasts");
  for (const auto& [z, zp] : contrasts) {
    check_arm(z);
    check_arm(zp);
    if (z == zp) throw ValidationError("a contrast needs two different encouragements");
  }
  if (s_grid.empty()) throw ValidationError("mediator grid is empty");
  for (double s : s_grid)
    if (!(s >= 0.0 && s <= 1.0)) throw ValidationError("mediator grid values must lie in [0, 1]");
  if (!(cse_reference >= 0.0 && cse_reference <= 1.0))
    throw ValidationError("CSE reference must lie in [0, 1]");
  if (threads < 1) throw ValidationError("threads must be positive");
}

void EstimandRequest::apply_json(const nlohmann::json& config) {
  if (!config.is_object() || !config.contains("estimands")) return;
  const auto& e = config.at("estimands");
  if (e.contains("contrasts")) {
    contrasts.clear();
    for (const auto& c : e.at("contrasts")) {
      if (!c.is_array() || c.size() != 2) throw ValidationError("contrast must be a pair [z, z']");
      contrasts.emplace_back(c[0].get<int>(), c[1].get<int>());
    }
  }
  if (e.contains("s_grid")) s_grid = e.at("s_grid").get<std::vector<double>>();
  cse_reference = e.value("cse_reference", cse_reference);
  seed = e.value("seed", seed);
}

nlohmann::json EstimandRequest::to_json() const {
  nlohmann::json c = nlohmann::json::array();
  for (const auto& [z, zp] : contrasts) c.push_back({z, zp});
  return {{"contrasts", c}, {"s_grid", s_grid}, {"cse_reference", cse_reference}, {"seed", seed}};
}

std::vector<EffectSpec> EstimandRequest::effects() const {
  std::vector<EffectSpec> out;
  for (const auto& [z, zp] : contrasts) {
    out.push_back(EffectSpec::pce(z, zp));
    out.push_back(EffectSpec::nde(z, zp, z));
    out.push_back(EffectSpec::nde(z, zp, zp));
    out.push_back(EffectSpec::nie(z, z, zp));
    out.push_back(EffectSpec::nie(zp, z, zp));
    for (double s : s_grid) out.push_back(EffectSpec::cde(z, zp, s));
  }
  for (int z = 1; z <= 3; ++z)
    for (double s : s_grid)
      if (s != cse_reference) out.push_back(EffectSpec::cse(z, s, cse_reference));
  return out;
}

std::vector<std::pair<int, int>> parse_contrasts(const std::string& text) {
  std::vector<std::pair<int, int>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (item.size() != 3 || item[1] != 'v' || item[0] < '1' || item[0] > '3' || item[2] < '1' ||
        item[2] > '3')
      throw ValidationError("contrast '" + item + "' is not of the form 2v1");
    out.emplace_back(item[0] - '0', item[2] - '0');
  }
  if (out.empty()) throw ValidationError("no contrasts given");
  return out;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    out.push_back(csv::parse_double(item, "--s-grid", 0));
  }
  if (out.empty()) throw ValidationError("mediator grid is empty");
  return out;
}

// ---------------------------------------------------------------------------
// Summaries

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw ValidationError("quantile of an empty sequence");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

EstimandSummary summarize(std::span<const double> values) {
  std::vector<double> v;
  v.reserve(values.size());
  for (double x : values)
    if (!std::isnan(x)) v.push_back(x);
  if (v.empty()) throw ValidationError("no non-missing values to summarize");
  EstimandSummary s;
  s.n = v.size();
  s.missing = values.size() - v.size();
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  s.pr_positive = static_cast<double>(std::count_if(v.begin(), v.end(), [](double x) { return x > 0.0; })) /
                  static_cast<double>(s.n);
  std::sort(v.begin(), v.end());
  s.q025 = quantile_sorted(v, 0.025);
  s.q05 = quantile_sorted(v, 0.05);
  s.q95 = quantile_sorted(v, 0.95);
  s.q975 = quantile_sorted(v, 0.975);
  return s;
}

// ---------------------------------------------------------------------------
// Pipeline

std::optional<std::size_t> EstimandDraws::find(const EffectSpec& e) const {
  for (std::size_t k = 0; k < effects.size(); ++k) {
    const auto& f = effects[k];
    if (f.kind == e.kind && f.z == e.z && f.z_prime == e.z_prime &&
        f.mediator_arm == e.mediator_arm && f.s_a == e.s_a && f.s_b == e.s_b)
      return k;
  }
  return std::nullopt;
}

namespace {

void process_draw(const StudyData& data, const Draws& draws, const ParameterLayout& layout,
                  const EstimandRequest& request, const std::vector<OutcomeTerm>& terms,
                  const std::vector<std::pair<std::size_t, std::size_t>>& effect_terms,
                  std::size_t d, EstimandDraws& out) {
  const Parameters params = [&] {
    Parameters p(layout);
    const auto row = draws.row(d);
    std::copy(row.begin(), row.end(), p.values.begin());
    return p;
  }();
  Rng rng = make_rng(request.seed ^ kStrataStream, d);
  const AugmentedDraw aug = augment(data, params, rng);
  const std::size_t n = data.n_students();

  // Integer outcome table, one row per student.
  std::vector<int> y(n * terms.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto u = condition_uniforms(data, params, i, aug.strata[i], outcome_uniforms(request.seed, d, i));
    for (std::size_t t = 0; t < terms.size(); ++t)
      y[i * terms.size() + t] = impute_outcome(data, params, i, aug.strata[i], terms[t].z,
                                               term_mediator(terms[t], aug, i), u);
  }

  std::array<std::size_t, kNumStrata> count{};
  for (Stratum g : aug.strata) ++count[index(g)];

  for (std::size_t e = 0; e < effect_terms.size(); ++e) {
    std::array<long long, kNumStrata> total{};
    const auto [tp, tm] = effect_terms[e];
    for (std::size_t i = 0; i < n; ++i)
      total[index(aug.strata[i])] += y[i * terms.size() + tp] - y[i * terms.size() + tm];
    for (std::size_t g = 0; g < kNumStrata; ++g)
      out.values[e][g][d] = count[g] > 0 ? static_cast<double>(total[g]) / static_cast<double>(count[g])
                                         : kNaN;
  }

  const std::size_t k_cov = data.covariate_spec().size();
  auto& shares = out.shares[d];
  auto& means = out.covariate_means[d];
  for (std::size_t g = 0; g < kNumStrata; ++g) {
    shares[g] = static_cast<double>(count[g]) / static_cast<double>(n);
    means[g].assign(k_cov, count[g] > 0 ? 0.0 : kNaN);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t g = index(aug.strata[i]);
    const auto& x = data.students()[i].covariates;
    for (std::size_t k = 0; k < k_cov; ++k) means[g][k] += x[k] / static_cast<double>(count[g]);
  }

  auto& hom = out.homophily[d];
  std::array<std::size_t, kNumStrata> rows{};
  for (auto& r : hom) r.fill(0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& nb = data.neighbors(i);
    if (nb.empty()) continue;
    const std::size_t g = index(aug.strata[i]);
    ++rows[g];
    for (std::size_t f : nb) hom[g][index(aug.strata[f])] += 1.0 / static_cast<double>(nb.size());
  }
  for (std::size_t g = 0; g < kNumStrata; ++g)
    for (double& v : hom[g]) v = rows[g] > 0 ? v / static_cast<double>(rows[g]) : kNaN;
}

}  // namespace

EstimandDraws compute_estimands(const StudyData& data, const Draws& draws,
                                const ParameterLayout& layout, const EstimandRequest& request) {
  request.validate();
  if (draws.dim() != layout.size()) throw ValidationError("draws do not match parameter layout");
  if (draws.size() == 0) throw ValidationError("no posterior draws");

  EstimandDraws out;
  out.effects = request.effects();
  out.n_draws = draws.size();
  out.covariate_names = data.covariate_spec().names;

  std::vector<OutcomeTerm> terms;
  auto term_index = [&terms](const OutcomeTerm& t) {
    const auto it = std::find(terms.begin(), terms.end(), t);
    if (it != terms.end()) return static_cast<std::size_t>(it - terms.begin());
    terms.push_back(t);
    return terms.size() - 1;
  };
  std::vector<std::pair<std::size_t, std::size_t>> effect_terms;
  for (const auto& e : out.effects) {
    const std::size_t p = term_index(e.plus());
    effect_terms.emplace_back(p, term_index(e.minus()));
  }

  out.values.resize(out.effects.size());
  for (auto& per_stratum : out.values)
    for (auto& v : per_stratum) v.assign(out.n_draws, kNaN);
  out.shares.resize(out.n_draws);
  out.covariate_means.resize(out.n_draws);
  out.homophily.resize(out.n_draws);

  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(request.threads), out.n_draws);
  auto run = [&](std::size_t first) {
    for (std::size_t d = first; d < out.n_draws; d += workers)
      process_draw(data, draws, layout, request, terms, effect_terms, d, out);
  };
  if (workers <= 1) {
    run(0);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        run(w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

nlohmann::json stratum_profiles(const EstimandDraws& est) {
  nlohmann::json strata = nlohmann::json::array();
  for (Stratum g : kAllStrata) {
    const std::size_t gi = index(g);
    std::vector<double> share(est.n_draws);
    for (std::size_t d = 0; d < est.n_draws; ++d) share[d] = est.shares[d][gi];
    nlohmann::json covs = nlohmann::json::object();
    for (std::size_t k = 0; k < est.covariate_names.size(); ++k) {
      std::vector<double> v(est.n_draws);
      for (std::size_t d = 0; d < est.n_draws; ++d) v[d] = est.covariate_means[d][gi][k];
      const auto s = try_summarize(v);
      covs[est.covariate_names[k]] = s ? summary_json(*s) : nlohmann::json(nullptr);
    }
    strata.push_back({{"stratum", std::string(code(g))},
                      {"label", std::string(label(g))},
                      {"share", summary_json(summarize(share))},
                      {"covariate_means", covs}});
  }
  return {{"n_draws", est.n_draws}, {"strata", strata}};
}

void write_estimands_csv(const EstimandDraws& est, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "stratum,estimand,label,z,z_prime,mediator_arm,s_a,s_b,mean,sd,q2.5,q5,q95,q97.5,"
         "pr_positive,n_draws,n_missing\n";
  auto f = csv::format_double;
  for (Stratum g : kAllStrata) {
    for (std::size_t e = 0; e < est.effects.size(); ++e) {
      const auto& spec = est.effects[e];
      const auto& v = est.values[e][index(g)];
      out << code(g) << ',' << spec.name() << ",\"" << spec.label() << "\"," << spec.z << ',';
      if (spec.kind != EffectKind::CSE) out << spec.z_prime;
      out << ',';
      if (spec.kind == EffectKind::NDE || spec.kind == EffectKind::NIE) out << spec.mediator_arm;
      out << ',';
      if (spec.kind == EffectKind::CDE || spec.kind == EffectKind::CSE) out << f(spec.s_a);
      out << ',';
      if (spec.kind == EffectKind::CSE) out << f(spec.s_b);
      const auto s = try_summarize(v);
      if (s) {
        out << ',' << f(s->mean) << ',' << f(s->sd) << ',' << f(s->q025) << ',' << f(s->q05) << ','
            << f(s->q95) << ',' << f(s->q975) << ',' << f(s->pr_positive) << ',' << s->n << ','
            << s->missing << '\n';
      } else {
        out << ",,,,,,,,0," << v.size() << '\n';
      }
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_strata_shares_csv(const EstimandDraws& est, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "stratum,label,mean,sd,q2.5,q5,q95,q97.5\n";
  auto f = csv::format_double;
  for (Stratum g : kAllStrata) {
    std::vector<double> v(est.n_draws);
    for (std::size_t d = 0; d < est.n_draws; ++d) v[d] = est.shares[d][index(g)];
    const auto s = summarize(v);
    out << code(g) << ',' << label(g) << ',' << f(s.mean) << ',' << f(s.sd) << ',' << f(s.q025)
        << ',' << f(s.q05) << ',' << f(s.q95) << ',' << f(s.q975) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_homophily_csv(const EstimandDraws& est, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "stratum,friend_stratum,mean,sd,q2.5,q97.5,n_draws\n";
  auto f = csv::format_double;
  for (Stratum g : kAllStrata) {
    for (Stratum h : kAllStrata) {
      std::vector<double> v(est.n_draws);
      for (std::size_t d = 0; d < est.n_draws; ++d) v[d] = est.homophily[d][index(g)][index(h)];
      out << code(g) << ',' << code(h) << ',';
      if (const auto s = try_summarize(v)) {
        out << f(s->mean) << ',' << f(s->sd) << ',' << f(s->q025) << ',' << f(s->q975) << ','
            << s->n << '\n';
      } else {
        out << ",,,,0\n";
      }
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace netstrat
