#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace netstrat {

class StudyData;

// Compliance types permitted under monotone uptake. The digits of the code are
// the potential treatments under encouragements 1, 2 and 3.
enum class Stratum : std::uint8_t {
  AlwaysTaker = 0,           // 111
  PresentationComplier = 1,  // 011
  RewardComplier = 2,        // 001
  NeverTaker = 3,            // 000
};

inline constexpr std::size_t kNumStrata = 4;
inline constexpr std::array<Stratum, kNumStrata> kAllStrata = {
    Stratum::AlwaysTaker, Stratum::PresentationComplier, Stratum::RewardComplier,
    Stratum::NeverTaker};

constexpr std::size_t index(Stratum g) noexcept { return static_cast<std::size_t>(g); }

std::string_view code(Stratum g) noexcept;   // "111", "011", "001", "000"
std::string_view label(Stratum g) noexcept;  // "AlwaysTaker", ...
// Accepts a code or a label; throws ValidationError otherwise.
Stratum parse_stratum(std::string_view text);

// Uptake of stratum g under encouragement z (digit z of the code).
constexpr int potential_treatment(Stratum g, int z) noexcept {
  switch (g) {
    case Stratum::AlwaysTaker: return 1;
    case Stratum::PresentationComplier: return z >= 2 ? 1 : 0;
    case Stratum::RewardComplier: return z >= 3 ? 1 : 0;
    case Stratum::NeverTaker: return 0;
  }
  return 0;
}

// Strata whose uptake under z equals m.
std::vector<Stratum> compatible_strata(int z, int m);

// Encouragements 2 and 3 act identically on outcomes for strata whose uptake
// does not change between them; returns the arm whose outcome model applies.
constexpr int outcome_arm(Stratum g, int z) noexcept {
  return (z == 3 && g != Stratum::RewardComplier) ? 2 : z;
}

struct ArmCounts {
  std::size_t n = 0;        // students in the arm
  std::size_t treated = 0;  // students with m = 1
};

struct MomEstimate {
  // Order: 111, 011, 001, 000.
  std::array<double, kNumStrata> proportions{};
  std::array<double, kNumStrata> standard_errors{};
  std::array<ArmCounts, 3> arm_counts{};
  bool monotonicity_violation = false;
  int bootstrap_replicates = 0;

  nlohmann::json to_json() const;
};

// Moment identities from the uptake rates P(M=1|Z=z), z = 1..3.
std::array<double, kNumStrata> mom_proportions(const std::array<double, 3>& uptake);

// Moment estimates with cluster-bootstrap standard errors: classes are
// resampled with replacement within each arm.
MomEstimate mom_estimate(const StudyData& data, std::uint64_t seed = 20140101,
                         int replicates = 2000);

}  // namespace netstrat
