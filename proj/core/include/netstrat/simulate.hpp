#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "netstrat/estimands.hpp"
#include "netstrat/model.hpp"
#include "netstrat/strata.hpp"
#include "netstrat/study_data.hpp"

namespace netstrat {

struct SimCovariate {
  std::string name;
  CovariateKind kind = CovariateKind::Continuous;
  double p = 0.5;     // binary: P(x = 1)
  double mean = 0.0;  // continuous: normal mean and sd
  double sd = 1.0;
  bool in_strata = true;
  bool in_outcome = true;
};

// Fixed effects of the generative model on the standardized covariate scale,
// in the slot conventions of ParameterLayout. Random intercepts are drawn.
struct SimTruth {
  std::array<double, 3> gamma{};               // 011, 001, 000
  std::vector<std::array<double, 3>> delta;    // per strata covariate
  double sigma_a = 0.3;
  std::array<double, 9> alpha{};
  std::vector<double> beta_s;                  // 3, or 4 with free_beta_s_arm3
  std::vector<double> beta_x;                  // per outcome covariate
  double sigma_b = 0.3;
  std::array<double, 9> phi{};
};

struct SimConfig {
  int n_classes = 60;
  int class_size = 20;
  double edge_probability = 0.2;
  // Edge weight exp(-homophily * |x_i - x_j|) on the first continuous covariate.
  double homophily = 0.0;
  std::vector<SimCovariate> covariates;
  ModelOptions options;
  SimTruth truth;
  std::uint64_t seed = 1;

  // Three covariates and an NT-heavy strata mix (about 8/7/30/55 percent).
  static SimConfig defaults();
  // Same as defaults() with every mediator slope set to zero.
  static SimConfig null_spillover();

  void validate() const;
  nlohmann::json to_json() const;
  static SimConfig from_json(const nlohmann::json& json);
  CovariateSpec covariate_spec() const;
};

// Everything the generator knows. Outcomes are a deterministic function of
// (G, z, s) and the student's uniform pair, so Y(z, s) is available for any
// (z, s) and the observed Y is Y(Z, S(Z)).
struct GroundTruth {
  Parameters params;  // natural scale, drawn intercepts included
  std::vector<Stratum> strata;
  std::array<std::vector<double>, 3> mediator;  // S(z), index z - 1
  std::vector<OutcomeUniforms> uniforms;

  int outcome(std::size_t student, int z, double s, const StudyData& data) const;
  std::array<double, kNumStrata> shares() const;
};

struct SimulatedStudy {
  StudyData data;
  GroundTruth truth;
};

SimulatedStudy generate(const SimConfig& config);

// Finite-population values of the requested effects under the true strata;
// NaN for a stratum with no members.
struct OracleEstimates {
  std::vector<EffectSpec> effects;
  std::vector<std::array<double, kNumStrata>> values;
  std::array<std::size_t, kNumStrata> counts{};

  std::optional<double> value(const EffectSpec& e, Stratum g) const;
};
OracleEstimates oracle_estimands(const GroundTruth& truth, const StudyData& data,
                                 const EstimandRequest& request);

// Log of the sum over every joint stratum assignment of the product of
// pi_g(x) f_g(y), zero for incompatible strata. At most 8 students.
double brute_force_likelihood(const StudyData& data, const Parameters& params);

// truth.json: configuration, true parameters, strata shares, per-student
// latent values and oracle estimands.
nlohmann::json truth_to_json(const SimConfig& config, const SimulatedStudy& sim,
                             const EstimandRequest& request);

}  // namespace netstrat
