#include "netstrat/strata.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "netstrat/error.hpp"
#include "netstrat/rng.hpp"
#include "netstrat/study_data.hpp"

namespace netstrat {

std::string_view code(Stratum g) noexcept {
  constexpr std::array<std::string_view, kNumStrata> codes = {"111", "011", "001", "000"};
  return codes[index(g)];
}

std::string_view label(Stratum g) noexcept {
  constexpr std::array<std::string_view, kNumStrata> labels = {
      "AlwaysTaker", "PresentationComplier", "RewardComplier", "NeverTaker"};
  return labels[index(g)];
}

Stratum parse_stratum(std::string_view text) {
  for (Stratum g : kAllStrata)
    if (text == code(g) || text == label(g)) return g;
  if (text == "AT") return Stratum::AlwaysTaker;
  if (text == "PC") return Stratum::PresentationComplier;
  if (text == "RC") return Stratum::RewardComplier;
  if (text == "NT") return Stratum::NeverTaker;
  throw ValidationError("unknown principal stratum '" + std::string(text) + "'");
}

std::vector<Stratum> compatible_strata(int z, int m) {
  std::vector<Stratum> out;
  for (Stratum g : kAllStrata)
    if (potential_treatment(g, z) == m) out.push_back(g);
  return out;
}

std::array<double, kNumStrata> mom_proportions(const std::array<double, 3>& uptake) {
  const double p111 = uptake[0];
  const double p000 = 1.0 - uptake[2];
  const double p001 = (1.0 - uptake[1]) - p000;
  const double p011 = uptake[1] - p111;
  return {p111, p011, p001, p000};
}

namespace {

std::array<double, 3> uptake_rates(const std::array<ArmCounts, 3>& counts) {
  std::array<double, 3> out{};
  for (std::size_t a = 0; a < 3; ++a)
    out[a] = static_cast<double>(counts[a].treated) / static_cast<double>(counts[a].n);
  return out;
}

}  // namespace

MomEstimate mom_estimate(const StudyData& data, std::uint64_t seed, int replicates) {
  MomEstimate est;
  // Per-arm list of (class size, treated) pairs, the resampling units.
  std::array<std::vector<ArmCounts>, 3> class_counts;
  for (std::size_t j = 0; j < data.n_classes(); ++j) {
    const auto& c = data.classes()[j];
    ArmCounts cc;
    for (const auto& id : c.member_ids) {
      cc.n += 1;
      cc.treated += static_cast<std::size_t>(data.students()[*data.student_index(id)].m);
    }
    class_counts[c.z - 1].push_back(cc);
    est.arm_counts[c.z - 1].n += cc.n;
    est.arm_counts[c.z - 1].treated += cc.treated;
  }
  for (int z = 1; z <= 3; ++z)
    if (est.arm_counts[z - 1].n == 0)
      throw ValidationError("encouragement arm " + std::to_string(z) + " has no students");

  est.proportions = mom_proportions(uptake_rates(est.arm_counts));
  for (double p : est.proportions) {
    if (p < 0.0) {
      est.monotonicity_violation = true;
      spdlog::warn("negative moment estimate of a stratum proportion: uptake is not monotone");
      break;
    }
  }

  est.bootstrap_replicates = replicates;
  if (replicates < 2) return est;
  std::array<double, kNumStrata> sum{}, sum_sq{};
  for (int r = 0; r < replicates; ++r) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(r));
    std::array<ArmCounts, 3> boot{};
    for (std::size_t a = 0; a < 3; ++a) {
      const auto& units = class_counts[a];
      const double m = static_cast<double>(units.size());
      for (std::size_t k = 0; k < units.size(); ++k) {
        const auto& u = units[static_cast<std::size_t>(uniform01(rng) * m)];
        boot[a].n += u.n;
        boot[a].treated += u.treated;
      }
    }
    const auto p = mom_proportions(uptake_rates(boot));
    for (std::size_t g = 0; g < kNumStrata; ++g) {
      sum[g] += p[g];
      sum_sq[g] += p[g] * p[g];
    }
  }
  const double n = static_cast<double>(replicates);
  for (std::size_t g = 0; g < kNumStrata; ++g) {
    const double mean = sum[g] / n;
    const double var = std::max(0.0, (sum_sq[g] - n * mean * mean) / (n - 1.0));
    est.standard_errors[g] = std::sqrt(var);
  }
  return est;
}

nlohmann::json MomEstimate::to_json() const {
  nlohmann::json props = nlohmann::json::object();
  nlohmann::json ses = nlohmann::json::object();
  for (Stratum g : kAllStrata) {
    props[std::string(code(g))] = proportions[index(g)];
    ses[std::string(code(g))] = standard_errors[index(g)];
  }
  nlohmann::json arms = nlohmann::json::array();
  for (int z = 1; z <= 3; ++z) {
    const auto& c = arm_counts[z - 1];
    arms.push_back({{"z", z}, {"n", c.n}, {"m1", c.treated}, {"m0", c.n - c.treated}});
  }
  return {{"proportions", props},
          {"standard_errors", ses},
          {"arm_counts", arms},
          {"bootstrap_replicates", bootstrap_replicates},
          {"monotonicity_violation", monotonicity_violation}};
}

}  // namespace netstrat
