#include "netstrat/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "netstrat/error.hpp"
#include "netstrat/study_data.hpp"

namespace netstrat {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double log_sum_exp2(double a, double b) {
  const double hi = std::max(a, b);
  if (hi == kNegInf) return kNegInf;
  return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
}

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double normal_log_pdf(double x, double sd) {
  const double t = x / sd;
  return -0.5 * t * t - std::log(sd) - kLogSqrt2Pi;
}

double dot(std::span<const double> a, const double* b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

// Parameter values resolved to the quantities the likelihood consumes.
struct Resolved {
  std::array<double, kNumStrata> gamma{};  // gamma[0] = 0 for the reference stratum
  const double* delta = nullptr;           // 3 x K_G, row for stratum g at (g - 1)
  std::vector<double> a;
  std::array<double, 9> alpha{};
  std::array<double, 4> beta_s{};
  const double* beta_x = nullptr;
  std::vector<double> b;
  std::array<double, 9> phi{}, log_phi{}, log1m_phi{};
};

struct Gradient {
  std::array<double, kNumStrata> gamma{};
  std::vector<double> delta, a, beta_x, b;
  std::array<double, 9> alpha{}, logit_phi{};
  std::array<double, 4> beta_s{};

  explicit Gradient(const ParameterLayout& layout)
      : delta(3 * layout.strata_dim(), 0.0),
        a(layout.n_classes(), 0.0),
        beta_x(layout.outcome_dim(), 0.0),
        b(layout.n_classes(), 0.0) {}
};

std::size_t beta_slot(const ParameterLayout& layout, Stratum g, int z) {
  return layout.beta_s(g, z) - layout.beta_s_begin();
}

double log_factorial(int y, const std::vector<double>& table) {
  return static_cast<std::size_t>(y) < table.size() ? table[static_cast<std::size_t>(y)]
                                                    : std::lgamma(static_cast<double>(y) + 1.0);
}

// Observed-data log likelihood; adds d/d(resolved quantities) to `grad` when
// non-null. The derivative for phi is taken with respect to logit(phi).
double accumulate(const StudyData& data, const ParameterLayout& layout, const Resolved& r,
                  const std::vector<double>& log_fact, Gradient* grad) {
  const std::size_t kg = layout.strata_dim();
  double total = 0.0;
  for (std::size_t i = 0; i < data.n_students(); ++i) {
    const auto& st = data.students()[i];
    const std::size_t j = data.class_of(i);
    const int z = data.arm(i);
    const int y = st.y;
    const double s = data.observed_share(i);
    const auto xg = data.strata_x(i);
    const auto xy = data.outcome_x(i);

    std::array<double, kNumStrata> eta{};
    double eta_max = 0.0;
    for (std::size_t h = 1; h < kNumStrata; ++h) {
      eta[h] = r.gamma[h] + dot(xg, r.delta + (h - 1) * kg) + r.a[j];
      eta_max = std::max(eta_max, eta[h]);
    }
    double denom = 0.0;
    for (double e : eta) denom += std::exp(e - eta_max);
    const double lse = eta_max + std::log(denom);

    const double xb = dot(xy, r.beta_x) + r.b[j];
    std::array<double, kNumStrata> ell;
    std::array<double, kNumStrata> d_logmu{};
    std::array<double, kNumStrata> d_logit_phi{};
    ell.fill(kNegInf);
    double ell_max = kNegInf;
    for (Stratum g : kAllStrata) {
      if (potential_treatment(g, z) != st.m) continue;
      const std::size_t gi = index(g);
      const std::size_t slot = ParameterLayout::arm_slot(g, z);
      const double log_mu = r.alpha[slot] + r.beta_s[beta_slot(layout, g, z)] * s + xb;
      const double mu = std::exp(log_mu);
      double lf;
      if (y > 0) {
        lf = r.log1m_phi[slot] + y * log_mu - mu - log_factorial(y, log_fact);
        d_logmu[gi] = y - mu;
        d_logit_phi[gi] = -r.phi[slot];
      } else {
        const double zero_part = r.log_phi[slot];
        const double pois_part = r.log1m_phi[slot] - mu;
        lf = log_sum_exp2(zero_part, pois_part);
        d_logmu[gi] = lf == kNegInf ? 0.0 : -mu * std::exp(pois_part - lf);
        d_logit_phi[gi] = (lf == kNegInf ? 0.0 : std::exp(zero_part - lf)) - r.phi[slot];
      }
      ell[gi] = eta[gi] - lse + lf;
      ell_max = std::max(ell_max, ell[gi]);
    }
    if (ell_max == kNegInf) {
      total = kNegInf;
      continue;
    }
    double acc = 0.0;
    for (double e : ell) acc += e == kNegInf ? 0.0 : std::exp(e - ell_max);
    const double contribution = ell_max + std::log(acc);
    total += contribution;
    if (grad == nullptr) continue;

    std::array<double, kNumStrata> resp{};
    for (std::size_t g = 0; g < kNumStrata; ++g)
      resp[g] = ell[g] == kNegInf ? 0.0 : std::exp(ell[g] - contribution);

    double sum_a = 0.0;
    for (std::size_t h = 1; h < kNumStrata; ++h) {
      const double d_eta = resp[h] - std::exp(eta[h] - lse);
      grad->gamma[h] += d_eta;
      double* row = grad->delta.data() + (h - 1) * kg;
      for (std::size_t k = 0; k < kg; ++k) row[k] += d_eta * xg[k];
      sum_a += d_eta;
    }
    grad->a[j] += sum_a;

    double sum_b = 0.0;
    for (Stratum g : kAllStrata) {
      const std::size_t gi = index(g);
      if (resp[gi] == 0.0) continue;
      const std::size_t slot = ParameterLayout::arm_slot(g, z);
      const double c = resp[gi] * d_logmu[gi];
      grad->alpha[slot] += c;
      grad->beta_s[beta_slot(layout, g, z)] += c * s;
      grad->logit_phi[slot] += resp[gi] * d_logit_phi[gi];
      sum_b += c;
    }
    for (std::size_t k = 0; k < xy.size(); ++k) grad->beta_x[k] += sum_b * xy[k];
    grad->b[j] += sum_b;
  }
  return total;
}

// Fill the parts of Resolved shared by both parameterizations.
void resolve_common(const ParameterLayout& layout, std::span<const double> v, Resolved& r) {
  r.gamma[0] = 0.0;
  for (Stratum g : {Stratum::PresentationComplier, Stratum::RewardComplier, Stratum::NeverTaker})
    r.gamma[index(g)] = v[layout.gamma(g)];
  r.delta = v.data() + layout.delta(Stratum::PresentationComplier, 0);
  for (std::size_t s = 0; s < 9; ++s) r.alpha[s] = v[layout.alpha(Stratum::AlwaysTaker, 1) + s];
  for (std::size_t s = 0; s < layout.beta_s_count(); ++s) r.beta_s[s] = v[layout.beta_s_begin() + s];
  r.beta_x = v.data() + layout.beta_x(0);
}

Resolved resolve_natural(const Parameters& p) {
  const auto& layout = p.layout;
  Resolved r;
  resolve_common(layout, p.values, r);
  r.a.resize(layout.n_classes());
  r.b.resize(layout.n_classes());
  for (std::size_t j = 0; j < layout.n_classes(); ++j) {
    r.a[j] = p.a(j);
    r.b[j] = p.b(j);
  }
  for (std::size_t s = 0; s < 9; ++s) {
    const double phi = p.values[layout.phi(Stratum::AlwaysTaker, 1) + s];
    r.phi[s] = phi;
    r.log_phi[s] = phi > 0.0 ? std::log(phi) : kNegInf;
    r.log1m_phi[s] = phi < 1.0 ? std::log1p(-phi) : kNegInf;
  }
  return r;
}

Resolved resolve_unconstrained(const ParameterLayout& layout, std::span<const double> theta) {
  Resolved r;
  resolve_common(layout, theta, r);
  const double sigma_a = std::exp(theta[layout.sigma_a()]);
  const double sigma_b = std::exp(theta[layout.sigma_b()]);
  r.a.resize(layout.n_classes());
  r.b.resize(layout.n_classes());
  for (std::size_t j = 0; j < layout.n_classes(); ++j) {
    r.a[j] = sigma_a * theta[layout.a(j)];
    r.b[j] = sigma_b * theta[layout.b(j)];
  }
  for (std::size_t s = 0; s < 9; ++s) {
    const double rho = theta[layout.phi(Stratum::AlwaysTaker, 1) + s];
    r.log_phi[s] = -softplus(-rho);
    r.log1m_phi[s] = -softplus(rho);
    r.phi[s] = std::exp(r.log_phi[s]);
  }
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration and layout

void PriorConfig::validate() const {
  for (double sd : {sd_strata_coef, sd_outcome_coef, sd_sigma})
    if (!(sd > 0.0) || !std::isfinite(sd))
      throw ValidationError("prior scales must be positive and finite");
}

ParameterLayout::ParameterLayout(std::size_t strata_dim, std::size_t outcome_dim,
                                 std::size_t n_classes, ModelOptions options)
    : strata_dim_(strata_dim), outcome_dim_(outcome_dim), n_classes_(n_classes), options_(options) {
  std::size_t at = 0;
  gamma_ = at;
  at += 3;
  delta_ = at;
  at += 3 * strata_dim;
  sigma_a_ = at++;
  a_ = at;
  at += n_classes;
  alpha_ = at;
  at += 9;
  beta_s_ = at;
  at += beta_s_count();
  beta_x_ = at;
  at += outcome_dim;
  sigma_b_ = at++;
  b_ = at;
  at += n_classes;
  phi_ = at;
}

ParameterLayout ParameterLayout::for_study(const StudyData& data, ModelOptions options) {
  return ParameterLayout(data.strata_dim(), data.outcome_dim(), data.n_classes(), options);
}

std::size_t ParameterLayout::beta_s(Stratum g, int z) const noexcept {
  if (z == 1) return beta_s_;
  if (z == 2) return beta_s_ + 1;
  if (g == Stratum::RewardComplier) return beta_s_ + 2;
  return options_.free_beta_s_arm3 ? beta_s_ + 3 : beta_s_ + 1;
}

std::vector<std::string> ParameterLayout::names(const StudyData& data) const {
  std::vector<std::string> out(size());
  const auto strata_names = data.covariate_spec().strata_names();
  const auto outcome_names = data.covariate_spec().outcome_names();
  for (Stratum g : {Stratum::PresentationComplier, Stratum::RewardComplier, Stratum::NeverTaker}) {
    const std::string c(code(g));
    out[gamma(g)] = "gamma." + c;
    for (std::size_t k = 0; k < strata_dim_; ++k) out[delta(g, k)] = "delta." + c + "." + strata_names[k];
  }
  out[sigma_a()] = "sigma_a";
  out[sigma_b()] = "sigma_b";
  for (std::size_t j = 0; j < n_classes_; ++j) {
    out[a(j)] = "a." + data.classes()[j].id;
    out[b(j)] = "b." + data.classes()[j].id;
  }
  for (int z = 1; z <= 3; ++z) {
    for (Stratum g : kAllStrata) {
      if (outcome_arm(g, z) != z) continue;
      const std::string suffix = std::string(code(g)) + "." + std::to_string(z);
      out[alpha(g, z)] = "alpha." + suffix;
      out[phi(g, z)] = "phi." + suffix;
    }
  }
  out[beta_s_] = "beta_s.1";
  out[beta_s_ + 1] = "beta_s.2";
  out[beta_s_ + 2] = "beta_s.001.3";
  if (options_.free_beta_s_arm3) out[beta_s_ + 3] = "beta_s.3";
  for (std::size_t k = 0; k < outcome_dim_; ++k) out[beta_x(k)] = "beta_x." + outcome_names[k];
  return out;
}

Parameters Parameters::neutral(const ParameterLayout& layout) {
  Parameters p(layout);
  p[layout.sigma_a()] = 1.0;
  p[layout.sigma_b()] = 1.0;
  return p;
}

// ---------------------------------------------------------------------------
// Serialization and transforms

nlohmann::json parameters_to_json(const Parameters& params, const StudyData& data) {
  return {{"format", "netstrat.parameters"},
          {"version", kParameterFormatVersion},
          {"options", {{"free_beta_s_arm3", params.layout.options().free_beta_s_arm3}}},
          {"names", params.layout.names(data)},
          {"values", params.values}};
}

Parameters parameters_from_json(const nlohmann::json& json, const StudyData& data) {
  if (json.value("format", std::string{}) != "netstrat.parameters")
    throw ValidationError("not a netstrat parameter file");
  if (json.value("version", 0) != kParameterFormatVersion)
    throw ValidationError("unsupported parameter format version");
  ModelOptions options;
  if (json.contains("options"))
    options.free_beta_s_arm3 = json.at("options").value("free_beta_s_arm3", false);
  const auto layout = ParameterLayout::for_study(data, options);
  const auto names = json.at("names").get<std::vector<std::string>>();
  if (names != layout.names(data))
    throw ValidationError("parameter names do not match the study layout");
  Parameters p(layout);
  p.values = json.at("values").get<std::vector<double>>();
  if (p.values.size() != layout.size()) throw ValidationError("parameter vector has wrong length");
  return p;
}

std::vector<double> unconstrain(const Parameters& params) {
  const auto& l = params.layout;
  std::vector<double> theta = params.values;
  const double sa = params.sigma_a();
  const double sb = params.sigma_b();
  theta[l.sigma_a()] = std::log(sa);
  theta[l.sigma_b()] = std::log(sb);
  for (std::size_t j = 0; j < l.n_classes(); ++j) {
    theta[l.a(j)] = params.a(j) / sa;
    theta[l.b(j)] = params.b(j) / sb;
  }
  for (std::size_t s = 0; s < 9; ++s) {
    const std::size_t k = l.phi(Stratum::AlwaysTaker, 1) + s;
    theta[k] = std::log(params.values[k]) - std::log1p(-params.values[k]);
  }
  return theta;
}

Parameters constrain(const ParameterLayout& layout, std::span<const double> theta) {
  Parameters p(layout);
  std::copy(theta.begin(), theta.end(), p.values.begin());
  const double sa = std::exp(theta[layout.sigma_a()]);
  const double sb = std::exp(theta[layout.sigma_b()]);
  p[layout.sigma_a()] = sa;
  p[layout.sigma_b()] = sb;
  for (std::size_t j = 0; j < layout.n_classes(); ++j) {
    p[layout.a(j)] = sa * theta[layout.a(j)];
    p[layout.b(j)] = sb * theta[layout.b(j)];
  }
  for (std::size_t s = 0; s < 9; ++s) {
    const std::size_t k = layout.phi(Stratum::AlwaysTaker, 1) + s;
    p[k] = std::exp(-softplus(-theta[k]));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Densities

std::array<double, kNumStrata> strata_probs(std::span<const double> x, double a_j,
                                            const Parameters& params) {
  const auto& l = params.layout;
  if (x.size() != l.strata_dim())
    throw ValidationError("strata covariate vector has wrong length");
  if (!std::isfinite(a_j) || !std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); }))
    throw ValidationError("non-finite input to strata_probs");
  std::array<double, kNumStrata> eta{};
  for (Stratum g : {Stratum::PresentationComplier, Stratum::RewardComplier, Stratum::NeverTaker}) {
    double e = params[l.gamma(g)] + a_j;
    for (std::size_t k = 0; k < x.size(); ++k) e += params[l.delta(g, k)] * x[k];
    if (!std::isfinite(e)) throw ValidationError("non-finite linear predictor in strata_probs");
    eta[index(g)] = e;
  }
  const double hi = *std::max_element(eta.begin(), eta.end());
  double denom = 0.0;
  for (double& e : eta) {
    e = std::exp(e - hi);
    denom += e;
  }
  for (double& e : eta) e /= denom;
  return eta;
}

double zip_log_pmf(int y, double phi, double mu) {
  if (!(mu > 0.0) || !std::isfinite(mu)) throw ValidationError("ZIP mean must be positive and finite");
  if (y < 0) return kNegInf;
  const double log1m_phi = phi < 1.0 ? std::log1p(-phi) : kNegInf;
  if (y == 0) {
    const double log_phi = phi > 0.0 ? std::log(phi) : kNegInf;
    return log_sum_exp2(log_phi, log1m_phi - mu);
  }
  return log1m_phi + y * std::log(mu) - mu - std::lgamma(static_cast<double>(y) + 1.0);
}

double poisson_mean(Stratum g, int z, double s, std::span<const double> x, double b_j,
                    const Parameters& params) {
  const auto& l = params.layout;
  double lin = params.alpha(g, z) + params.beta_s(g, z) * s + b_j;
  for (std::size_t k = 0; k < x.size(); ++k) lin += params[l.beta_x(k)] * x[k];
  if (!std::isfinite(lin)) throw ValidationError("non-finite Poisson linear predictor");
  return std::exp(lin);
}

std::array<double, kNumStrata> stratum_log_weights(const StudyData& data, std::size_t student,
                                                   const Parameters& params) {
  const auto& st = data.students()[student];
  const std::size_t j = data.class_of(student);
  const int z = data.arm(student);
  const auto pi = strata_probs(data.strata_x(student), params.a(j), params);
  std::array<double, kNumStrata> out;
  out.fill(kNegInf);
  for (Stratum g : compatible_strata(z, st.m)) {
    const double mu =
        poisson_mean(g, z, data.observed_share(student), data.outcome_x(student), params.b(j), params);
    out[index(g)] = std::log(pi[index(g)]) + zip_log_pmf(st.y, params.phi(g, z), mu);
  }
  return out;
}

double log_likelihood(const StudyData& data, const Parameters& params) {
  const Resolved r = resolve_natural(params);
  return accumulate(data, params.layout, r, {}, nullptr);
}

double log_prior(const Parameters& p, const PriorConfig& prior) {
  const auto& l = p.layout;
  const double sa = p.sigma_a();
  const double sb = p.sigma_b();
  if (!(sa > 0.0) || !(sb > 0.0)) return kNegInf;
  double lp = 0.0;
  for (Stratum g : {Stratum::PresentationComplier, Stratum::RewardComplier, Stratum::NeverTaker}) {
    lp += normal_log_pdf(p[l.gamma(g)], prior.sd_strata_coef);
    for (std::size_t k = 0; k < l.strata_dim(); ++k)
      lp += normal_log_pdf(p[l.delta(g, k)], prior.sd_strata_coef);
  }
  for (std::size_t s = 0; s < 9; ++s)
    lp += normal_log_pdf(p[l.alpha(Stratum::AlwaysTaker, 1) + s], prior.sd_outcome_coef);
  for (std::size_t s = 0; s < l.beta_s_count(); ++s)
    lp += normal_log_pdf(p[l.beta_s_begin() + s], prior.sd_outcome_coef);
  for (std::size_t k = 0; k < l.outcome_dim(); ++k)
    lp += normal_log_pdf(p[l.beta_x(k)], prior.sd_outcome_coef);
  lp += std::numbers::ln2 + normal_log_pdf(sa, prior.sd_sigma);
  lp += std::numbers::ln2 + normal_log_pdf(sb, prior.sd_sigma);
  for (std::size_t j = 0; j < l.n_classes(); ++j) {
    lp += normal_log_pdf(p.a(j), sa);
    lp += normal_log_pdf(p.b(j), sb);
  }
  for (std::size_t s = 0; s < 9; ++s) {
    const double phi = p[l.phi(Stratum::AlwaysTaker, 1) + s];
    if (!(phi >= 0.0 && phi <= 1.0)) return kNegInf;
  }
  return lp;
}

// ---------------------------------------------------------------------------
// Posterior on the unconstrained scale

Posterior::Posterior(const StudyData& data, PriorConfig prior, ModelOptions options)
    : data_(&data), prior_(prior), layout_(ParameterLayout::for_study(data, options)) {
  prior_.validate();
  int max_y = 0;
  for (const auto& s : data.students()) max_y = std::max(max_y, s.y);
  log_factorial_.resize(static_cast<std::size_t>(max_y) + 1);
  for (std::size_t y = 0; y < log_factorial_.size(); ++y)
    log_factorial_[y] = std::lgamma(static_cast<double>(y) + 1.0);
}

double Posterior::log_density(std::span<const double> theta) const {
  std::vector<double> scratch(dim());
  return log_density_gradient(theta, scratch);
}

double Posterior::log_density_gradient(std::span<const double> theta, std::span<double> grad) const {
  const auto& l = layout_;
  const Resolved r = resolve_unconstrained(l, theta);
  Gradient g(l);
  double lp = accumulate(*data_, l, r, log_factorial_, &g);

  const double v_strata = prior_.sd_strata_coef * prior_.sd_strata_coef;
  const double v_outcome = prior_.sd_outcome_coef * prior_.sd_outcome_coef;
  const double v_sigma = prior_.sd_sigma * prior_.sd_sigma;
  auto coefficient = [&](std::size_t k, double likelihood_grad, double sd, double var) {
    const double t = theta[k];
    lp += normal_log_pdf(t, sd);
    grad[k] = likelihood_grad - t / var;
  };

  for (Stratum s : {Stratum::PresentationComplier, Stratum::RewardComplier, Stratum::NeverTaker}) {
    const std::size_t h = index(s);
    coefficient(l.gamma(s), g.gamma[h], prior_.sd_strata_coef, v_strata);
    for (std::size_t k = 0; k < l.strata_dim(); ++k)
      coefficient(l.delta(s, k), g.delta[(h - 1) * l.strata_dim() + k], prior_.sd_strata_coef,
                  v_strata);
  }
  for (std::size_t s = 0; s < 9; ++s)
    coefficient(l.alpha(Stratum::AlwaysTaker, 1) + s, g.alpha[s], prior_.sd_outcome_coef, v_outcome);
  for (std::size_t s = 0; s < l.beta_s_count(); ++s)
    coefficient(l.beta_s_begin() + s, g.beta_s[s], prior_.sd_outcome_coef, v_outcome);
  for (std::size_t k = 0; k < l.outcome_dim(); ++k)
    coefficient(l.beta_x(k), g.beta_x[k], prior_.sd_outcome_coef, v_outcome);

  // Half-normal scale with log-Jacobian, and non-centered intercepts:
  // a_j = sigma * raw_j with raw_j ~ N(0, 1).
  auto hierarchy = [&](std::size_t tau_index, auto raw_index, const std::vector<double>& g_actual) {
    const double tau = theta[tau_index];
    const double sigma = std::exp(tau);
    lp += std::numbers::ln2 + normal_log_pdf(sigma, prior_.sd_sigma) + tau;
    double d_tau = -sigma * sigma / v_sigma + 1.0;
    for (std::size_t j = 0; j < l.n_classes(); ++j) {
      const double raw = theta[raw_index(j)];
      lp += -0.5 * raw * raw - kLogSqrt2Pi;
      grad[raw_index(j)] = sigma * g_actual[j] - raw;
      d_tau += g_actual[j] * sigma * raw;
    }
    grad[tau_index] = d_tau;
  };
  hierarchy(l.sigma_a(), [&](std::size_t j) { return l.a(j); }, g.a);
  hierarchy(l.sigma_b(), [&](std::size_t j) { return l.b(j); }, g.b);

  // Uniform prior on phi; log-Jacobian log(phi) + log(1 - phi).
  for (std::size_t s = 0; s < 9; ++s) {
    const std::size_t k = l.phi(Stratum::AlwaysTaker, 1) + s;
    lp += r.log_phi[s] + r.log1m_phi[s];
    grad[k] = g.logit_phi[s] + 1.0 - 2.0 * r.phi[s];
  }
  return lp;
}

std::vector<double> grad_log_posterior(const StudyData& data, const Parameters& params,
                                       const PriorConfig& prior) {
  Posterior post(data, prior, params.layout.options());
  const auto theta = unconstrain(params);
  std::vector<double> grad(post.dim());
  post.log_density_gradient(theta, grad);
  return grad;
}

}  // namespace netstrat
