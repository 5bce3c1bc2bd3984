#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "netstrat/model.hpp"
#include "netstrat/rng.hpp"
#include "netstrat/sampler.hpp"
#include "netstrat/strata.hpp"

namespace netstrat {

class StudyData;

// Latent quantities imputed for one posterior draw.
struct AugmentedDraw {
  std::vector<Stratum> strata;
  std::array<std::vector<int>, 3> treatment;    // M(z), index z - 1
  std::array<std::vector<double>, 3> mediator;  // S(z), index z - 1

  int m(std::size_t student, int z) const { return treatment[static_cast<std::size_t>(z - 1)][student]; }
  double s(std::size_t student, int z) const { return mediator[static_cast<std::size_t>(z - 1)][student]; }
};

// Draws each student's stratum from its posterior given (Z, M, Y). Throws
// ValidationError naming the student when every compatible weight vanishes.
std::vector<Stratum> impute_strata(const StudyData& data, const Parameters& params, Rng& rng);

// Share of each student's friends whose potential uptake under z is 1.
std::vector<double> potential_mediator(const StudyData& data, std::span<const Stratum> strata, int z);

AugmentedDraw augment(const StudyData& data, const Parameters& params, Rng& rng);

// Uniform pair shared by every counterfactual outcome of one student in one
// draw: u0 decides the structural zero, u1 feeds the Poisson inverse cdf.
struct OutcomeUniforms {
  double u0 = 0.5;
  double u1 = 0.5;
};
OutcomeUniforms outcome_uniforms(std::uint64_t seed, std::size_t draw, std::size_t student);

// Maps a raw pair to a uniform draw from the region that reproduces the
// student's observed outcome in stratum g, so the counterfactuals share the
// latent ranks implied by the data.
OutcomeUniforms condition_uniforms(const StudyData& data, const Parameters& params, std::size_t student,
                                   Stratum g, OutcomeUniforms raw);

// Zero-inflated Poisson draw by inversion.
int zip_quantile(double phi, double mu, OutcomeUniforms u);

// Y(z, s) of `student` in stratum g. Returns the observed outcome when (z, s)
// coincides with the realized encouragement (up to tying) and mediator.
int impute_outcome(const StudyData& data, const Parameters& params, std::size_t student, Stratum g,
                   int z, double s, OutcomeUniforms u);

enum class EffectKind { PCE, NDE, NIE, CDE, CSE };

// One side of a contrast: encouragement z with the mediator either set to
// the natural value S(mediator_arm) or, when mediator_arm is 0, fixed at s.
struct OutcomeTerm {
  int z = 1;
  int mediator_arm = 0;
  double s = 0.0;

  bool operator==(const OutcomeTerm&) const = default;
};

// PCE(z vs z'), NDE(z vs z', S(w)), NIE(w, S(z) vs S(z')), CDE(z vs z', s_a),
// CSE(z, s_a vs s_b). `w` is stored in mediator_arm.
struct EffectSpec {
  EffectKind kind = EffectKind::PCE;
  int z = 2;
  int z_prime = 1;
  int mediator_arm = 0;
  double s_a = 0.0;
  double s_b = 0.0;

  OutcomeTerm plus() const;
  OutcomeTerm minus() const;
  std::string name() const;   // "PCE", "NDE", ...
  std::string label() const;  // "NIE(1, S(2) vs S(1))"

  static EffectSpec pce(int z, int zp) { return {EffectKind::PCE, z, zp, 0, 0.0, 0.0}; }
  static EffectSpec nde(int z, int zp, int w) { return {EffectKind::NDE, z, zp, w, 0.0, 0.0}; }
  static EffectSpec nie(int w, int z, int zp) { return {EffectKind::NIE, z, zp, w, 0.0, 0.0}; }
  static EffectSpec cde(int z, int zp, double s) { return {EffectKind::CDE, z, zp, 0, s, 0.0}; }
  static EffectSpec cse(int z, double s_hi, double s_lo) {
    return {EffectKind::CSE, z, z, 0, s_hi, s_lo};
  }
};

// Stratum mean of Y(plus) - Y(minus); nullopt when no student is imputed to g.
std::optional<double> effect_value(const StudyData& data, const Parameters& params,
                                   const AugmentedDraw& aug, std::span<const OutcomeUniforms> u,
                                   const EffectSpec& effect, Stratum g);

struct EstimandRequest {
  std::vector<std::pair<int, int>> contrasts = {{2, 1}, {3, 2}, {3, 1}};
  std::vector<double> s_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  double cse_reference = 0.0;  // s** of every CSE
  std::uint64_t seed = 1;
  int threads = 1;

  void validate() const;
  // Reads {"estimands": {"contrasts": [[2,1],...], "s_grid": [...],
  //                      "cse_reference": r, "seed": n}}.
  void apply_json(const nlohmann::json& config);
  nlohmann::json to_json() const;

  // Per contrast: PCE, both NDE and both NIE, CDE over the grid; per
  // encouragement: CSE of every other grid value against the reference.
  std::vector<EffectSpec> effects() const;
};

// Parses "2v1,3v2" and "0,0.1,0.25".
std::vector<std::pair<int, int>> parse_contrasts(const std::string& text);
std::vector<double> parse_grid(const std::string& text);

struct EstimandSummary {
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0, q05 = 0.0, q95 = 0.0, q975 = 0.0;
  double pr_positive = 0.0;
  std::size_t n = 0;
  std::size_t missing = 0;
};

// NaN entries count as missing. Throws ValidationError when all are missing.
EstimandSummary summarize(std::span<const double> values);

// Linear-interpolation quantile of sorted data.
double quantile_sorted(std::span<const double> sorted, double p);

// Per-draw estimand values and stratum profiles; missing entries are NaN.
struct EstimandDraws {
  std::vector<EffectSpec> effects;
  std::size_t n_draws = 0;
  std::vector<std::string> covariate_names;
  // [effect][stratum][draw]
  std::vector<std::array<std::vector<double>, kNumStrata>> values;
  // [draw][stratum]
  std::vector<std::array<double, kNumStrata>> shares;
  // [draw][stratum][covariate], raw units
  std::vector<std::array<std::vector<double>, kNumStrata>> covariate_means;
  // [draw][row stratum][friend stratum]
  std::vector<std::array<std::array<double, kNumStrata>, kNumStrata>> homophily;

  double value(std::size_t effect, Stratum g, std::size_t draw) const {
    return values[effect][index(g)][draw];
  }
  std::optional<std::size_t> find(const EffectSpec& e) const;
};

// One augmentation per retained draw. Draw d uses streams derived from
// (request.seed, d) only, so results do not depend on request.threads.
EstimandDraws compute_estimands(const StudyData& data, const Draws& draws,
                                const ParameterLayout& layout, const EstimandRequest& request);

// Per stratum: share of students and each covariate's stratum mean, summarized
// over draws.
nlohmann::json stratum_profiles(const EstimandDraws& est);

// Columns: stratum, estimand, label, z, z_prime, mediator_arm, s_a, s_b, mean,
// sd, q2.5, q5, q95, q97.5, pr_positive, n_draws, n_missing.
void write_estimands_csv(const EstimandDraws& est, const std::filesystem::path& path);
// Columns: stratum, label, mean, sd, q2.5, q5, q95, q97.5.
void write_strata_shares_csv(const EstimandDraws& est, const std::filesystem::path& path);
// Columns: stratum, friend_stratum, mean, sd, q2.5, q97.5, n_draws.
void write_homophily_csv(const EstimandDraws& est, const std::filesystem::path& path);

}  // namespace netstrat
