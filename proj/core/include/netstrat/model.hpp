#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "netstrat/strata.hpp"

namespace netstrat {

class StudyData;

struct ModelOptions {
  // When set, strata 111, 011 and 000 get their own mediator slope under
  // encouragement 3 instead of reusing the encouragement-2 slope.
  bool free_beta_s_arm3 = false;

  bool operator==(const ModelOptions&) const = default;
};

struct PriorConfig {
  double sd_strata_coef = 2.5;   // normal prior on gamma, delta
  double sd_outcome_coef = 1.0;  // normal prior on alpha, beta_s, beta_x
  double sd_sigma = 0.5;         // half-normal prior on sigma_a, sigma_b

  // Throws ValidationError unless every scale is positive and finite.
  void validate() const;
};

// Position of every free parameter in the flat parameter vector.
//
// Order: gamma[3] | delta[3 x K_G] | sigma_a | a[J] | alpha[9] | beta_s[3|4] |
//        beta_x[K_Y] | sigma_b | b[J] | phi[9]
//
// Strata coefficients exist for 011, 001, 000 (111 is the reference). The
// nine alpha and phi slots are (g, 1) for all g, (g, 2) for all g and
// (001, 3); the encouragement-3 values of the other strata are tied to their
// encouragement-2 values. beta_s slots are z=1, z=2, (001, 3) and optionally
// a shared slot for the other strata at z=3.
class ParameterLayout {
 public:
  ParameterLayout() = default;
  ParameterLayout(std::size_t strata_dim, std::size_t outcome_dim, std::size_t n_classes,
                  ModelOptions options = {});
  static ParameterLayout for_study(const StudyData& data, ModelOptions options = {});

  std::size_t size() const noexcept { return phi_ + 9; }
  std::size_t strata_dim() const noexcept { return strata_dim_; }
  std::size_t outcome_dim() const noexcept { return outcome_dim_; }
  std::size_t n_classes() const noexcept { return n_classes_; }
  const ModelOptions& options() const noexcept { return options_; }
  // Free parameters excluding the class random intercepts.
  std::size_t n_fixed() const noexcept { return size() - 2 * n_classes_; }

  std::size_t gamma(Stratum g) const { return gamma_ + index(g) - 1; }
  std::size_t delta(Stratum g, std::size_t k) const {
    return delta_ + (index(g) - 1) * strata_dim_ + k;
  }
  std::size_t sigma_a() const noexcept { return sigma_a_; }
  std::size_t a(std::size_t j) const noexcept { return a_ + j; }
  std::size_t alpha(Stratum g, int z) const noexcept { return alpha_ + arm_slot(g, z); }
  std::size_t beta_s(Stratum g, int z) const noexcept;
  std::size_t beta_s_begin() const noexcept { return beta_s_; }
  std::size_t beta_s_count() const noexcept { return options_.free_beta_s_arm3 ? 4 : 3; }
  std::size_t beta_x(std::size_t k) const noexcept { return beta_x_ + k; }
  std::size_t sigma_b() const noexcept { return sigma_b_; }
  std::size_t b(std::size_t j) const noexcept { return b_ + j; }
  std::size_t phi(Stratum g, int z) const noexcept { return phi_ + arm_slot(g, z); }

  // Slot 0..8 shared by the alpha and phi blocks.
  static constexpr std::size_t arm_slot(Stratum g, int z) noexcept {
    const int zz = outcome_arm(g, z);
    return zz == 3 ? 8 : static_cast<std::size_t>(zz - 1) * 4 + index(g);
  }

  // Names such as "alpha.001.3" or "a.<class_id>".
  std::vector<std::string> names(const StudyData& data) const;

  bool operator==(const ParameterLayout&) const = default;

 private:
  std::size_t strata_dim_ = 0, outcome_dim_ = 0, n_classes_ = 0;
  ModelOptions options_{};
  std::size_t gamma_ = 0, delta_ = 0, sigma_a_ = 0, a_ = 0, alpha_ = 0, beta_s_ = 0,
              beta_x_ = 0, sigma_b_ = 0, b_ = 0, phi_ = 0;
};

// A point in parameter space on the natural scale: sigmas positive, phis in
// [0,1], random intercepts a_j and b_j as they enter the linear predictors.
struct Parameters {
  ParameterLayout layout;
  std::vector<double> values;

  Parameters() = default;
  explicit Parameters(ParameterLayout l) : layout(l), values(l.size(), 0.0) {}

  double& operator[](std::size_t k) { return values[k]; }
  double operator[](std::size_t k) const { return values[k]; }

  double alpha(Stratum g, int z) const { return values[layout.alpha(g, z)]; }
  double beta_s(Stratum g, int z) const { return values[layout.beta_s(g, z)]; }
  double phi(Stratum g, int z) const { return values[layout.phi(g, z)]; }
  double a(std::size_t j) const { return values[layout.a(j)]; }
  double b(std::size_t j) const { return values[layout.b(j)]; }
  double sigma_a() const { return values[layout.sigma_a()]; }
  double sigma_b() const { return values[layout.sigma_b()]; }

  // All coefficients and random intercepts 0, sigmas 1, phis 0.
  static Parameters neutral(const ParameterLayout& layout);
};

// Flat named-vector JSON of the free parameters. Reading checks that the names
// match the layout of `data` exactly.
inline constexpr int kParameterFormatVersion = 1;
nlohmann::json parameters_to_json(const Parameters& params, const StudyData& data);
Parameters parameters_from_json(const nlohmann::json& json, const StudyData& data);

// Unconstrained coordinates: log sigma, logit phi, and a_j / sigma_a, b_j / sigma_b.
std::vector<double> unconstrain(const Parameters& params);
Parameters constrain(const ParameterLayout& layout, std::span<const double> unconstrained);

// Stratum membership probabilities in kAllStrata order, 111 as reference:
// softmax of (0, gamma_g + delta_g' x + a_j).
std::array<double, kNumStrata> strata_probs(std::span<const double> x, double a_j,
                                            const Parameters& params);

// Zero-inflated Poisson log probability of count y.
double zip_log_pmf(int y, double phi, double mu);

// exp(alpha_{g,z} + beta_s_{g,z} s + beta_x' x + b_j) with tying applied.
double poisson_mean(Stratum g, int z, double s, std::span<const double> x, double b_j,
                    const Parameters& params);

// Log of pi_g(x) f_g(y) for each stratum compatible with the student's
// observed (Z, M); -inf elsewhere.
std::array<double, kNumStrata> stratum_log_weights(const StudyData& data, std::size_t student,
                                                   const Parameters& params);

// Observed-data log likelihood, strata marginalized per student.
double log_likelihood(const StudyData& data, const Parameters& params);

// Log prior density on the natural scale, including a_j ~ N(0, sigma_a) and
// b_j ~ N(0, sigma_b). Returns -inf for a non-positive sigma or phi outside [0,1].
double log_prior(const Parameters& params, const PriorConfig& prior);

// Log posterior on the unconstrained scale (Jacobian included) with its
// analytic gradient. Holds a reference to the study.
class Posterior {
 public:
  Posterior(const StudyData& data, PriorConfig prior = {}, ModelOptions options = {});

  std::size_t dim() const noexcept { return layout_.size(); }
  const ParameterLayout& layout() const noexcept { return layout_; }
  const StudyData& data() const noexcept { return *data_; }
  const PriorConfig& prior() const noexcept { return prior_; }

  double log_density(std::span<const double> theta) const;
  // Writes d/dtheta into `grad` (size dim()) and returns the log density.
  double log_density_gradient(std::span<const double> theta, std::span<double> grad) const;

 private:
  const StudyData* data_;
  PriorConfig prior_;
  ParameterLayout layout_;
  std::vector<double> log_factorial_;
};

// Gradient of the unconstrained log posterior at `params`.
std::vector<double> grad_log_posterior(const StudyData& data, const Parameters& params,
                                       const PriorConfig& prior);

}  // namespace netstrat
