#include "netstrat/simulate.hpp"

#include <cmath>
#include <limits>

#include "netstrat/error.hpp"
#include "netstrat/rng.hpp"

namespace netstrat {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum Stream : std::uint64_t { kCovariates = 1, kIntercepts, kArms, kStrata, kEdges, kOutcomes };

std::string padded(char prefix, std::size_t value, int width) {
  std::string digits = std::to_string(value);
  if (static_cast<int>(digits.size()) < width)
    digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  return prefix + digits;
}

std::array<std::vector<double>, 3> mediators(const StudyData& data,
                                             const std::vector<Stratum>& strata) {
  std::array<std::vector<double>, 3> out;
  for (int z = 1; z <= 3; ++z) out[static_cast<std::size_t>(z - 1)] = potential_mediator(data, strata, z);
  return out;
}

Parameters assemble(const SimConfig& c, const ParameterLayout& layout, Rng& rng) {
  Parameters p(layout);
  for (std::size_t g = 1; g < kNumStrata; ++g) {
    p[layout.gamma(kAllStrata[g])] = c.truth.gamma[g - 1];
    for (std::size_t k = 0; k < layout.strata_dim(); ++k)
      p[layout.delta(kAllStrata[g], k)] = c.truth.delta[k][g - 1];
  }
  p[layout.sigma_a()] = c.truth.sigma_a;
  p[layout.sigma_b()] = c.truth.sigma_b;
  for (std::size_t j = 0; j < layout.n_classes(); ++j) {
    p[layout.a(j)] = c.truth.sigma_a * standard_normal(rng);
    p[layout.b(j)] = c.truth.sigma_b * standard_normal(rng);
  }
  const std::size_t alpha0 = layout.alpha(Stratum::AlwaysTaker, 1);
  const std::size_t phi0 = layout.phi(Stratum::AlwaysTaker, 1);
  for (std::size_t s = 0; s < 9; ++s) {
    p[alpha0 + s] = c.truth.alpha[s];
    p[phi0 + s] = c.truth.phi[s];
  }
  for (std::size_t k = 0; k < c.truth.beta_s.size(); ++k) p[layout.beta_s_begin() + k] = c.truth.beta_s[k];
  for (std::size_t k = 0; k < layout.outcome_dim(); ++k) p[layout.beta_x(k)] = c.truth.beta_x[k];
  return p;
}

nlohmann::json num(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

SimConfig SimConfig::defaults() {
  SimConfig c;
  c.covariates = {
      {"female", CovariateKind::Binary, 0.5, 0.0, 1.0, true, true},
      {"gpa", CovariateKind::Continuous, 0.5, 7.0, 1.0, true, true},
      {"age", CovariateKind::Continuous, 0.5, 17.0, 0.8, false, true},
  };
  c.truth.gamma = {-0.13, 1.32, 1.93};
  c.truth.delta = {{0.2, 0.3, -0.2}, {0.1, -0.2, -0.4}};
  c.truth.sigma_a = 0.3;
  // Slots: (111,1) (011,1) (001,1) (000,1) (111,2) (011,2) (001,2) (000,2) (001,3)
  c.truth.alpha = {0.8, 0.3, 0.2, -0.2, 0.9, 0.8, 0.6, 0.2, 0.4};
  c.truth.beta_s = {0.8, 0.8, 0.8};
  c.truth.beta_x = {0.2, 0.15, -0.1};
  c.truth.sigma_b = 0.3;
  c.truth.phi.fill(0.3);
  return c;
}

SimConfig SimConfig::null_spillover() {
  SimConfig c = defaults();
  std::fill(c.truth.beta_s.begin(), c.truth.beta_s.end(), 0.0);
  return c;
}

CovariateSpec SimConfig::covariate_spec() const {
  CovariateSpec spec;
  for (const auto& cov : covariates) {
    spec.names.push_back(cov.name);
    spec.kinds.push_back(cov.kind);
    spec.in_strata.push_back(cov.in_strata);
    spec.in_outcome.push_back(cov.in_outcome);
  }
  return spec;
}

void SimConfig::validate() const {
  if (n_classes <= 0 || n_classes % 3 != 0)
    throw ValidationError("n_classes must be a positive multiple of 3");
  if (class_size < 1) throw ValidationError("class_size must be positive");
  if (!(edge_probability >= 0.0 && edge_probability <= 1.0))
    throw ValidationError("edge_probability must lie in [0, 1]");
  if (!(homophily >= 0.0)) throw ValidationError("homophily must be nonnegative");
  const auto spec = covariate_spec();
  for (const auto& cov : covariates) {
    if (cov.kind == CovariateKind::Binary && !(cov.p >= 0.0 && cov.p <= 1.0))
      throw ValidationError("binary covariate '" + cov.name + "' needs p in [0, 1]");
    if (cov.kind == CovariateKind::Continuous && !(cov.sd > 0.0))
      throw ValidationError("continuous covariate '" + cov.name + "' needs sd > 0");
  }
  if (truth.delta.size() != spec.strata_count())
    throw ValidationError("truth.delta needs one row per strata covariate");
  if (truth.beta_x.size() != spec.outcome_count())
    throw ValidationError("truth.beta_x needs one entry per outcome covariate");
  if (truth.beta_s.size() != (options.free_beta_s_arm3 ? 4u : 3u))
    throw ValidationError("truth.beta_s has the wrong number of slots");
  if (!(truth.sigma_a > 0.0 && truth.sigma_b > 0.0))
    throw ValidationError("true random-intercept scales must be positive");
  for (double f : truth.phi)
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("true phi must lie in [0, 1]");
}

nlohmann::json SimConfig::to_json() const {
  nlohmann::json covs = nlohmann::json::array();
  for (const auto& c : covariates)
    covs.push_back({{"name", c.name},
                    {"kind", c.kind == CovariateKind::Binary ? "binary" : "continuous"},
                    {"p", c.p},
                    {"mean", c.mean},
                    {"sd", c.sd},
                    {"in_strata", c.in_strata},
                    {"in_outcome", c.in_outcome}});
  return {{"n_classes", n_classes},
          {"class_size", class_size},
          {"edge_probability", edge_probability},
          {"homophily", homophily},
          {"covariates", covs},
          {"free_beta_s_arm3", options.free_beta_s_arm3},
          {"truth",
           {{"gamma", truth.gamma},
            {"delta", truth.delta},
            {"sigma_a", truth.sigma_a},
            {"alpha", truth.alpha},
            {"beta_s", truth.beta_s},
            {"beta_x", truth.beta_x},
            {"sigma_b", truth.sigma_b},
            {"phi", truth.phi}}},
          {"seed", seed}};
}

SimConfig SimConfig::from_json(const nlohmann::json& j) {
  SimConfig c = defaults();
  c.n_classes = j.value("n_classes", c.n_classes);
  c.class_size = j.value("class_size", c.class_size);
  c.edge_probability = j.value("edge_probability", c.edge_probability);
  c.homophily = j.value("homophily", c.homophily);
  c.options.free_beta_s_arm3 = j.value("free_beta_s_arm3", c.options.free_beta_s_arm3);
  c.seed = j.value("seed", c.seed);
  if (j.contains("covariates")) {
    c.covariates.clear();
    for (const auto& e : j.at("covariates")) {
      SimCovariate cov;
      cov.name = e.at("name").get<std::string>();
      const auto kind = e.value("kind", std::string("continuous"));
      if (kind != "binary" && kind != "continuous")
        throw ValidationError("covariate kind must be binary or continuous");
      cov.kind = kind == "binary" ? CovariateKind::Binary : CovariateKind::Continuous;
      cov.p = e.value("p", cov.p);
      cov.mean = e.value("mean", cov.mean);
      cov.sd = e.value("sd", cov.sd);
      cov.in_strata = e.value("in_strata", cov.in_strata);
      cov.in_outcome = e.value("in_outcome", cov.in_outcome);
      c.covariates.push_back(cov);
    }
  }
  if (j.contains("truth")) {
    const auto& t = j.at("truth");
    if (t.contains("gamma")) c.truth.gamma = t.at("gamma").get<std::array<double, 3>>();
    if (t.contains("delta")) c.truth.delta = t.at("delta").get<std::vector<std::array<double, 3>>>();
    c.truth.sigma_a = t.value("sigma_a", c.truth.sigma_a);
    if (t.contains("alpha")) c.truth.alpha = t.at("alpha").get<std::array<double, 9>>();
    if (t.contains("beta_s")) c.truth.beta_s = t.at("beta_s").get<std::vector<double>>();
    if (t.contains("beta_x")) c.truth.beta_x = t.at("beta_x").get<std::vector<double>>();
    c.truth.sigma_b = t.value("sigma_b", c.truth.sigma_b);
    if (t.contains("phi")) c.truth.phi = t.at("phi").get<std::array<double, 9>>();
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Generation

int GroundTruth::outcome(std::size_t student, int z, double s, const StudyData& data) const {
  const Stratum g = strata[student];
  const double mu =
      poisson_mean(g, z, s, data.outcome_x(student), params.b(data.class_of(student)), params);
  return zip_quantile(params.phi(g, z), mu, uniforms[student]);
}

std::array<double, kNumStrata> GroundTruth::shares() const {
  std::array<double, kNumStrata> out{};
  for (Stratum g : strata) out[index(g)] += 1.0;
  for (double& v : out) v /= static_cast<double>(strata.size());
  return out;
}

SimulatedStudy generate(const SimConfig& config) {
  config.validate();
  const auto n_classes = static_cast<std::size_t>(config.n_classes);
  const auto class_size = static_cast<std::size_t>(config.class_size);
  const std::size_t n = n_classes * class_size;
  const CovariateSpec spec = config.covariate_spec();

  // Arms in equal thirds, shuffled across classes.
  std::vector<int> arms(n_classes);
  for (std::size_t j = 0; j < n_classes; ++j) arms[j] = static_cast<int>(j * 3 / n_classes) + 1;
  Rng arm_rng = make_rng(config.seed, kArms);
  for (std::size_t j = n_classes; j > 1; --j) {
    const auto k = static_cast<std::size_t>(uniform01(arm_rng) * static_cast<double>(j));
    std::swap(arms[j - 1], arms[k]);
  }

  std::vector<ClassRoom> classes(n_classes);
  std::vector<Student> students(n);
  Rng cov_rng = make_rng(config.seed, kCovariates);
  for (std::size_t j = 0; j < n_classes; ++j) {
    classes[j].id = padded('c', j + 1, 3);
    classes[j].z = arms[j];
    for (std::size_t k = 0; k < class_size; ++k) {
      auto& s = students[j * class_size + k];
      s.id = padded('s', j * class_size + k + 1, 5);
      s.class_id = classes[j].id;
      for (const auto& cov : config.covariates)
        s.covariates.push_back(cov.kind == CovariateKind::Binary
                                   ? (uniform01(cov_rng) < cov.p ? 1.0 : 0.0)
                                   : cov.mean + cov.sd * standard_normal(cov_rng));
    }
  }

  std::size_t homophily_column = config.covariates.size();
  for (std::size_t k = 0; k < config.covariates.size(); ++k)
    if (config.covariates[k].kind == CovariateKind::Continuous) {
      homophily_column = k;
      break;
    }
  FriendshipNetwork network;
  Rng edge_rng = make_rng(config.seed, kEdges);
  for (std::size_t j = 0; j < n_classes; ++j)
    for (std::size_t a = 0; a < class_size; ++a)
      for (std::size_t b = a + 1; b < class_size; ++b) {
        const auto& sa = students[j * class_size + a];
        const auto& sb = students[j * class_size + b];
        double p = config.edge_probability;
        if (config.homophily > 0.0 && homophily_column < config.covariates.size())
          p *= std::exp(-config.homophily *
                        std::abs(sa.covariates[homophily_column] - sb.covariates[homophily_column]));
        if (uniform01(edge_rng) < p) network.add_edge(sa.id, sb.id);
      }

  // Standardized covariates and neighbor lists come from a provisional study
  // without uptake or outcomes.
  const StudyData shell = StudyData::build(classes, students, network, spec);
  const ParameterLayout layout(shell.strata_dim(), shell.outcome_dim(), n_classes, config.options);
  Rng icpt_rng = make_rng(config.seed, kIntercepts);
  GroundTruth truth;
  truth.params = assemble(config, layout, icpt_rng);

  Rng strata_rng = make_rng(config.seed, kStrata);
  truth.strata.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto pi = strata_probs(shell.strata_x(i), truth.params.a(shell.class_of(i)), truth.params);
    double u = uniform01(strata_rng);
    std::size_t g = 0;
    while (g + 1 < kNumStrata && u >= pi[g]) u -= pi[g++];
    truth.strata[i] = kAllStrata[g];
    students[i].m = potential_treatment(truth.strata[i], arms[shell.class_of(i)]);
  }

  truth.mediator = mediators(shell, truth.strata);
  truth.uniforms.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    truth.uniforms[i] = outcome_uniforms(substream_seed(config.seed, kOutcomes), 0, i);
    const int z = arms[shell.class_of(i)];
    students[i].y = truth.outcome(i, z, truth.mediator[static_cast<std::size_t>(z - 1)][i], shell);
  }
  StudyData data = StudyData::build(std::move(classes), std::move(students), std::move(network), spec);
  return {std::move(data), std::move(truth)};
}

// ---------------------------------------------------------------------------
// Oracles

std::optional<double> OracleEstimates::value(const EffectSpec& e, Stratum g) const {
  for (std::size_t k = 0; k < effects.size(); ++k) {
    const auto& f = effects[k];
    if (f.kind == e.kind && f.z == e.z && f.z_prime == e.z_prime &&
        f.mediator_arm == e.mediator_arm && f.s_a == e.s_a && f.s_b == e.s_b) {
      const double v = values[k][index(g)];
      if (std::isnan(v)) return std::nullopt;
      return v;
    }
  }
  return std::nullopt;
}

OracleEstimates oracle_estimands(const GroundTruth& truth, const StudyData& data,
                                 const EstimandRequest& request) {
  request.validate();
  OracleEstimates out;
  out.effects = request.effects();
  for (Stratum g : truth.strata) ++out.counts[index(g)];
  auto y = [&](std::size_t i, const OutcomeTerm& t) {
    const double s = t.mediator_arm > 0 ? truth.mediator[static_cast<std::size_t>(t.mediator_arm - 1)][i] : t.s;
    return truth.outcome(i, t.z, s, data);
  };
  for (const auto& e : out.effects) {
    std::array<long long, kNumStrata> total{};
    const auto plus = e.plus();
    const auto minus = e.minus();
    for (std::size_t i = 0; i < data.n_students(); ++i)
      total[index(truth.strata[i])] += y(i, plus) - y(i, minus);
    std::array<double, kNumStrata> v{};
    for (std::size_t g = 0; g < kNumStrata; ++g)
      v[g] = out.counts[g] > 0 ? static_cast<double>(total[g]) / static_cast<double>(out.counts[g]) : kNaN;
    out.values.push_back(v);
  }
  return out;
}

double brute_force_likelihood(const StudyData& data, const Parameters& params) {
  const std::size_t n = data.n_students();
  if (n > 8) throw ValidationError("brute-force likelihood is limited to 8 students");
  const auto& l = params.layout;

  // Per-student joint probability of stratum and outcome, zero when the
  // stratum contradicts the observed uptake.
  std::vector<std::array<long double, kNumStrata>> term(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& st = data.students()[i];
    const std::size_t j = data.class_of(i);
    const int z = data.arm(i);
    const auto xg = data.strata_x(i);
    const auto xy = data.outcome_x(i);
    std::array<long double, kNumStrata> e{};
    long double denom = 0.0L;
    for (Stratum g : kAllStrata) {
      long double eta = 0.0L;
      if (g != Stratum::AlwaysTaker) {
        eta = params[l.gamma(g)] + params.a(j);
        for (std::size_t k = 0; k < xg.size(); ++k) eta += params[l.delta(g, k)] * xg[k];
      }
      e[index(g)] = std::exp(eta);
      denom += e[index(g)];
    }
    for (Stratum g : kAllStrata) {
      if (potential_treatment(g, z) != st.m) {
        term[i][index(g)] = 0.0L;
        continue;
      }
      long double lin = params.alpha(g, z) + params.beta_s(g, z) * data.observed_share(i) + params.b(j);
      for (std::size_t k = 0; k < xy.size(); ++k) lin += params[l.beta_x(k)] * xy[k];
      const long double mu = std::exp(lin);
      const long double phi = params.phi(g, z);
      long double pois = std::exp(-mu);
      for (int k = 1; k <= st.y; ++k) pois *= mu / k;
      const long double f = st.y == 0 ? phi + (1.0L - phi) * pois : (1.0L - phi) * pois;
      term[i][index(g)] = e[index(g)] / denom * f;
    }
  }

  std::size_t assignments = 1;
  for (std::size_t i = 0; i < n; ++i) assignments *= kNumStrata;
  long double total = 0.0L;
  for (std::size_t code = 0; code < assignments; ++code) {
    long double prod = 1.0L;
    std::size_t rest = code;
    for (std::size_t i = 0; i < n; ++i) {
      prod *= term[i][rest % kNumStrata];
      rest /= kNumStrata;
    }
    total += prod;
  }
  return static_cast<double>(std::log(total));
}

nlohmann::json truth_to_json(const SimConfig& config, const SimulatedStudy& sim,
                             const EstimandRequest& request) {
  const auto& data = sim.data;
  const auto& truth = sim.truth;
  nlohmann::json shares = nlohmann::json::object();
  const auto sh = truth.shares();
  for (Stratum g : kAllStrata) shares[std::string(code(g))] = sh[index(g)];

  nlohmann::json students = nlohmann::json::array();
  for (std::size_t i = 0; i < data.n_students(); ++i)
    students.push_back({{"id", data.students()[i].id},
                        {"stratum", std::string(code(truth.strata[i]))},
                        {"s", {truth.mediator[0][i], truth.mediator[1][i], truth.mediator[2][i]}},
                        {"u", {truth.uniforms[i].u0, truth.uniforms[i].u1}}});

  const auto oracle = oracle_estimands(truth, data, request);
  nlohmann::json effects = nlohmann::json::array();
  for (Stratum g : kAllStrata)
    for (std::size_t k = 0; k < oracle.effects.size(); ++k)
      effects.push_back({{"stratum", std::string(code(g))},
                         {"estimand", oracle.effects[k].name()},
                         {"label", oracle.effects[k].label()},
                         {"value", num(oracle.values[k][index(g)])}});

  return {{"format", "netstrat.truth"},
          {"version", 1},
          {"config", config.to_json()},
          {"parameters", parameters_to_json(truth.params, data)},
          {"shares", shares},
          {"estimand_request", request.to_json()},
          {"oracle", effects},
          {"students", students}};
}

}  // namespace netstrat
