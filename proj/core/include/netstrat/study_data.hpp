#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace netstrat {

enum class CovariateKind { Binary, Continuous };

// Names, kinds and model inclusion masks of the K study covariates, in the
// column order of students.csv.
struct CovariateSpec {
  std::vector<std::string> names;
  std::vector<CovariateKind> kinds;
  std::vector<bool> in_strata;
  std::vector<bool> in_outcome;

  std::size_t size() const noexcept { return names.size(); }
  std::size_t strata_count() const noexcept;
  std::size_t outcome_count() const noexcept;
  std::vector<std::string> strata_names() const;
  std::vector<std::string> outcome_names() const;

  // Every covariate in both models; kinds must be filled in separately.
  static CovariateSpec all_in_both(std::vector<std::string> names);

  // Reads {"covariates": {"kinds": {name: "binary"|"continuous"},
  //                       "strata": [names], "outcome": [names]}}.
  // Missing keys keep the defaults already present in `spec`.
  void apply_json(const nlohmann::json& config);
  nlohmann::json to_json() const;
};

struct Student {
  std::string id;
  std::string class_id;
  int m = 0;  // treatment uptake
  int y = 0;  // outcome count
  std::vector<double> covariates;  // raw units, CovariateSpec order
};

struct ClassRoom {
  std::string id;
  int z = 1;  // encouragement arm, 1..3
  std::vector<std::string> member_ids;
};

// Undirected, unweighted friendship graph keyed by student id. Each edge is
// stored once with the lexicographically smaller id first.
class FriendshipNetwork {
 public:
  // Throws ValidationError on a self-loop. Duplicate edges are collapsed.
  void add_edge(const std::string& a, const std::string& b);

  const std::vector<std::pair<std::string, std::string>>& edges() const noexcept {
    return edges_;
  }
  std::vector<std::string> neighbors(const std::string& id) const;
  std::size_t degree(const std::string& id) const;

 private:
  std::vector<std::pair<std::string, std::string>> edges_;
  std::unordered_map<std::string, std::vector<std::string>> adjacency_;
};

// Affine transform applied to continuous covariates: z = (x - mean) / sd.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> sd;

  double apply(std::size_t k, double x) const { return (x - mean[k]) / sd[k]; }
  double invert(std::size_t k, double z) const { return z * sd[k] + mean[k]; }
};

// Validated, immutable study. Construction indexes students, derives the
// observed mediator S from the network and standardizes continuous covariates.
class StudyData {
 public:
  static StudyData build(std::vector<ClassRoom> classes, std::vector<Student> students,
                         FriendshipNetwork network, CovariateSpec spec);

  std::size_t n_students() const noexcept { return students_.size(); }
  std::size_t n_classes() const noexcept { return classes_.size(); }

  const std::vector<ClassRoom>& classes() const noexcept { return classes_; }
  const std::vector<Student>& students() const noexcept { return students_; }
  const FriendshipNetwork& network() const noexcept { return network_; }
  const CovariateSpec& covariate_spec() const noexcept { return spec_; }
  const Standardization& standardization() const noexcept { return standardization_; }

  std::optional<std::size_t> student_index(const std::string& id) const;
  std::size_t class_of(std::size_t student) const { return class_index_[student]; }
  int arm(std::size_t student) const { return classes_[class_index_[student]].z; }
  const std::vector<std::size_t>& neighbors(std::size_t student) const {
    return neighbor_index_[student];
  }
  double observed_share(std::size_t student) const { return observed_share_[student]; }

  // Standardized covariates restricted to each model's mask.
  std::span<const double> strata_x(std::size_t student) const;
  std::span<const double> outcome_x(std::size_t student) const;
  std::size_t strata_dim() const noexcept { return strata_dim_; }
  std::size_t outcome_dim() const noexcept { return outcome_dim_; }

  std::size_t isolated_count() const noexcept;

 private:
  StudyData() = default;

  std::vector<ClassRoom> classes_;
  std::vector<Student> students_;
  FriendshipNetwork network_;
  CovariateSpec spec_;
  Standardization standardization_;

  std::unordered_map<std::string, std::size_t> student_lookup_;
  std::vector<std::size_t> class_index_;
  std::vector<std::vector<std::size_t>> neighbor_index_;
  std::vector<double> observed_share_;
  std::size_t strata_dim_ = 0;
  std::size_t outcome_dim_ = 0;
  std::vector<double> strata_x_;
  std::vector<double> outcome_x_;
};

// Reads classes.csv, students.csv and edges.csv. Covariate kinds not fixed by
// `spec_override` are inferred (binary when every value is 0 or 1).
StudyData load_study(const std::filesystem::path& class_file,
                     const std::filesystem::path& student_file,
                     const std::filesystem::path& edge_file,
                     const nlohmann::json& config = nlohmann::json::object());

// Writes the three CSV files with raw covariate values at full precision.
void write_study(const StudyData& data, const std::filesystem::path& class_file,
                 const std::filesystem::path& student_file,
                 const std::filesystem::path& edge_file);

// Proportion of `student_id`'s friends with value 1. Isolated students get 0
// and a logged warning.
double neighbor_share(const std::unordered_map<std::string, int>& m_values,
                      const FriendshipNetwork& network, const std::string& student_id);

// Share of ones among the listed neighbors; 0 when the list is empty.
template <class Values>
double share_of(const std::vector<std::size_t>& neighbors, const Values& values) {
  if (neighbors.empty()) return 0.0;
  std::size_t count = 0;
  for (std::size_t k : neighbors) count += values[k] != 0 ? 1 : 0;
  return static_cast<double>(count) / static_cast<double>(neighbors.size());
}

// Ratio estimator for cluster samples: sum of all values over total units.
double cluster_ratio_mean(const std::unordered_map<std::string, double>& values,
                          const StudyData& data);

// Counts per arm, isolated students and the degree distribution.
nlohmann::json validation_report(const StudyData& data);

}  // namespace netstrat
