#include "netstrat/study_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "csv.hpp"
#include "netstrat/error.hpp"

namespace netstrat {

// ---------------------------------------------------------------------------
// CovariateSpec

std::size_t CovariateSpec::strata_count() const noexcept {
  return static_cast<std::size_t>(std::count(in_strata.begin(), in_strata.end(), true));
}

std::size_t CovariateSpec::outcome_count() const noexcept {
  return static_cast<std::size_t>(std::count(in_outcome.begin(), in_outcome.end(), true));
}

std::vector<std::string> CovariateSpec::strata_names() const {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < names.size(); ++k)
    if (in_strata[k]) out.push_back(names[k]);
  return out;
}

std::vector<std::string> CovariateSpec::outcome_names() const {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < names.size(); ++k)
    if (in_outcome[k]) out.push_back(names[k]);
  return out;
}

CovariateSpec CovariateSpec::all_in_both(std::vector<std::string> names) {
  CovariateSpec spec;
  const std::size_t k = names.size();
  spec.names = std::move(names);
  spec.kinds.assign(k, CovariateKind::Continuous);
  spec.in_strata.assign(k, true);
  spec.in_outcome.assign(k, true);
  return spec;
}

void CovariateSpec::apply_json(const nlohmann::json& config) {
  if (!config.is_object() || !config.contains("covariates")) return;
  const auto& cov = config.at("covariates");
  auto position = [&](const std::string& name) {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ValidationError("config names unknown covariate '" + name + "'");
    return static_cast<std::size_t>(it - names.begin());
  };
  if (cov.contains("kinds")) {
    for (const auto& [name, kind] : cov.at("kinds").items()) {
      const auto text = kind.get<std::string>();
      if (text == "binary")
        kinds[position(name)] = CovariateKind::Binary;
      else if (text == "continuous")
        kinds[position(name)] = CovariateKind::Continuous;
      else
        throw ValidationError("covariate kind must be binary or continuous, got '" + text + "'");
    }
  }
  auto apply_mask = [&](const char* key, std::vector<bool>& mask) {
    if (!cov.contains(key)) return;
    mask.assign(names.size(), false);
    for (const auto& name : cov.at(key)) mask[position(name.get<std::string>())] = true;
  };
  apply_mask("strata", in_strata);
  apply_mask("outcome", in_outcome);
}

nlohmann::json CovariateSpec::to_json() const {
  nlohmann::json kinds_json = nlohmann::json::object();
  for (std::size_t k = 0; k < names.size(); ++k)
    kinds_json[names[k]] = kinds[k] == CovariateKind::Binary ? "binary" : "continuous";
  return {{"covariates",
           {{"kinds", kinds_json}, {"strata", strata_names()}, {"outcome", outcome_names()}}}};
}

// ---------------------------------------------------------------------------
// FriendshipNetwork

void FriendshipNetwork::add_edge(const std::string& a, const std::string& b) {
  if (a == b) throw ValidationError("self-loop on student '" + a + "'");
  auto key = a < b ? std::make_pair(a, b) : std::make_pair(b, a);
  auto& adj = adjacency_[key.first];
  if (std::find(adj.begin(), adj.end(), key.second) != adj.end()) return;
  adj.push_back(key.second);
  adjacency_[key.second].push_back(key.first);
  edges_.push_back(std::move(key));
}

std::vector<std::string> FriendshipNetwork::neighbors(const std::string& id) const {
  auto it = adjacency_.find(id);
  if (it == adjacency_.end()) return {};
  return it->second;
}

std::size_t FriendshipNetwork::degree(const std::string& id) const {
  auto it = adjacency_.find(id);
  return it == adjacency_.end() ? 0 : it->second.size();
}

// ---------------------------------------------------------------------------
// StudyData

StudyData StudyData::build(std::vector<ClassRoom> classes, std::vector<Student> students,
                           FriendshipNetwork network, CovariateSpec spec) {
  if (students.empty()) throw ValidationError("no students");
  if (classes.empty()) throw ValidationError("no classes");
  const std::size_t k_cov = spec.names.size();
  if (spec.kinds.size() != k_cov || spec.in_strata.size() != k_cov ||
      spec.in_outcome.size() != k_cov)
    throw ValidationError("covariate spec arrays have inconsistent lengths");

  StudyData data;
  std::unordered_map<std::string, std::size_t> class_lookup;
  for (std::size_t j = 0; j < classes.size(); ++j) {
    auto& c = classes[j];
    if (c.z < 1 || c.z > 3)
      throw ValidationError("class '" + c.id + "' has encouragement " + std::to_string(c.z) +
                            " outside {1,2,3}");
    if (!class_lookup.emplace(c.id, j).second)
      throw ValidationError("duplicate class id '" + c.id + "'");
    c.member_ids.clear();
  }

  data.class_index_.reserve(students.size());
  for (std::size_t i = 0; i < students.size(); ++i) {
    const auto& s = students[i];
    if (!data.student_lookup_.emplace(s.id, i).second)
      throw ValidationError("duplicate student id '" + s.id + "'");
    auto it = class_lookup.find(s.class_id);
    if (it == class_lookup.end())
      throw ValidationError("student '" + s.id + "' references unknown class '" + s.class_id +
                            "'");
    if (s.m != 0 && s.m != 1)
      throw ValidationError("student '" + s.id + "' has non-binary treatment");
    if (s.y < 0) throw ValidationError("student '" + s.id + "' has negative outcome");
    if (s.covariates.size() != k_cov)
      throw ValidationError("student '" + s.id + "' has " + std::to_string(s.covariates.size()) +
                            " covariates, expected " + std::to_string(k_cov));
    for (double v : s.covariates)
      if (!std::isfinite(v))
        throw ValidationError("student '" + s.id + "' has a non-finite covariate");
    data.class_index_.push_back(it->second);
    classes[it->second].member_ids.push_back(s.id);
  }
  for (const auto& c : classes)
    if (c.member_ids.empty()) throw ValidationError("class '" + c.id + "' has no students");

  data.neighbor_index_.assign(students.size(), {});
  for (const auto& [a, b] : network.edges()) {
    auto ia = data.student_lookup_.find(a);
    auto ib = data.student_lookup_.find(b);
    if (ia == data.student_lookup_.end() || ib == data.student_lookup_.end())
      throw ValidationError("edge (" + a + ", " + b + ") references an unknown student");
    if (data.class_index_[ia->second] != data.class_index_[ib->second])
      throw ValidationError("edge (" + a + ", " + b + ") connects students of different classes");
    data.neighbor_index_[ia->second].push_back(ib->second);
    data.neighbor_index_[ib->second].push_back(ia->second);
  }
  for (auto& nb : data.neighbor_index_) std::sort(nb.begin(), nb.end());

  data.observed_share_.resize(students.size());
  std::vector<int> m_obs(students.size());
  for (std::size_t i = 0; i < students.size(); ++i) m_obs[i] = students[i].m;
  std::size_t isolated = 0;
  for (std::size_t i = 0; i < students.size(); ++i) {
    if (data.neighbor_index_[i].empty()) ++isolated;
    data.observed_share_[i] = share_of(data.neighbor_index_[i], m_obs);
  }
  if (isolated > 0)
    spdlog::warn("{} student(s) have no friends; their neighbor share is set to 0", isolated);

  // Standardize continuous columns (sample SD); binary columns pass through.
  data.standardization_.mean.assign(k_cov, 0.0);
  data.standardization_.sd.assign(k_cov, 1.0);
  const double n = static_cast<double>(students.size());
  for (std::size_t k = 0; k < k_cov; ++k) {
    if (spec.kinds[k] != CovariateKind::Continuous) continue;
    double mean = 0.0;
    for (const auto& s : students) mean += s.covariates[k];
    mean /= n;
    double ss = 0.0;
    for (const auto& s : students) ss += (s.covariates[k] - mean) * (s.covariates[k] - mean);
    const double sd = students.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    data.standardization_.mean[k] = mean;
    data.standardization_.sd[k] = sd > 0.0 ? sd : 1.0;
  }

  data.strata_dim_ = spec.strata_count();
  data.outcome_dim_ = spec.outcome_count();
  data.strata_x_.reserve(students.size() * data.strata_dim_);
  data.outcome_x_.reserve(students.size() * data.outcome_dim_);
  for (const auto& s : students) {
    for (std::size_t k = 0; k < k_cov; ++k) {
      const double v = data.standardization_.apply(k, s.covariates[k]);
      if (spec.in_strata[k]) data.strata_x_.push_back(v);
      if (spec.in_outcome[k]) data.outcome_x_.push_back(v);
    }
  }

  data.classes_ = std::move(classes);
  data.students_ = std::move(students);
  data.network_ = std::move(network);
  data.spec_ = std::move(spec);
  return data;
}

std::optional<std::size_t> StudyData::student_index(const std::string& id) const {
  auto it = student_lookup_.find(id);
  if (it == student_lookup_.end()) return std::nullopt;
  return it->second;
}

std::span<const double> StudyData::strata_x(std::size_t student) const {
  return {strata_x_.data() + student * strata_dim_, strata_dim_};
}

std::span<const double> StudyData::outcome_x(std::size_t student) const {
  return {outcome_x_.data() + student * outcome_dim_, outcome_dim_};
}

std::size_t StudyData::isolated_count() const noexcept {
  return static_cast<std::size_t>(std::count_if(
      neighbor_index_.begin(), neighbor_index_.end(), [](const auto& nb) { return nb.empty(); }));
}

// ---------------------------------------------------------------------------
// File I/O

StudyData load_study(const std::filesystem::path& class_file,
                     const std::filesystem::path& student_file,
                     const std::filesystem::path& edge_file, const nlohmann::json& config) {
  const auto class_table = csv::read(class_file);
  const std::size_t c_id = class_table.column("class_id");
  const std::size_t c_z = class_table.column("z");
  std::vector<ClassRoom> classes;
  for (std::size_t r = 0; r < class_table.rows.size(); ++r) {
    const auto& row = class_table.rows[r];
    const auto line = class_table.line_numbers[r];
    ClassRoom c;
    c.id = row[c_id];
    if (c.id.empty()) throw ParseError(class_table.file, line, "empty class_id");
    const auto z = csv::parse_int(row[c_z], class_table.file, line);
    if (z < 1 || z > 3) throw ParseError(class_table.file, line, "z must be 1, 2 or 3");
    c.z = static_cast<int>(z);
    classes.push_back(std::move(c));
  }

  const auto student_table = csv::read(student_file);
  const std::size_t s_id = student_table.column("student_id");
  const std::size_t s_class = student_table.column("class_id");
  const std::size_t s_m = student_table.column("m");
  const std::size_t s_y = student_table.column("y");
  std::vector<std::size_t> cov_columns;
  std::vector<std::string> cov_names;
  for (std::size_t k = 0; k < student_table.header.size(); ++k) {
    if (k == s_id || k == s_class || k == s_m || k == s_y) continue;
    cov_columns.push_back(k);
    cov_names.push_back(student_table.header[k]);
  }
  if (student_table.rows.empty()) throw ValidationError("no students");

  std::vector<Student> students;
  students.reserve(student_table.rows.size());
  for (std::size_t r = 0; r < student_table.rows.size(); ++r) {
    const auto& row = student_table.rows[r];
    const auto line = student_table.line_numbers[r];
    Student s;
    s.id = row[s_id];
    s.class_id = row[s_class];
    if (s.id.empty()) throw ParseError(student_table.file, line, "empty student_id");
    const auto m = csv::parse_int(row[s_m], student_table.file, line);
    if (m != 0 && m != 1) throw ParseError(student_table.file, line, "m must be 0 or 1");
    const auto y = csv::parse_int(row[s_y], student_table.file, line);
    if (y < 0) throw ParseError(student_table.file, line, "y must be a nonnegative integer");
    s.m = static_cast<int>(m);
    s.y = static_cast<int>(y);
    s.covariates.reserve(cov_columns.size());
    for (std::size_t k : cov_columns)
      s.covariates.push_back(csv::parse_double(row[k], student_table.file, line));
    students.push_back(std::move(s));
  }

  auto spec = CovariateSpec::all_in_both(cov_names);
  for (std::size_t k = 0; k < cov_names.size(); ++k) {
    const bool binary = std::all_of(students.begin(), students.end(), [k](const Student& s) {
      return s.covariates[k] == 0.0 || s.covariates[k] == 1.0;
    });
    spec.kinds[k] = binary ? CovariateKind::Binary : CovariateKind::Continuous;
  }
  spec.apply_json(config);

  const auto edge_table = csv::read(edge_file);
  const std::size_t e_a = edge_table.column("student_id_a");
  const std::size_t e_b = edge_table.column("student_id_b");
  FriendshipNetwork network;
  for (std::size_t r = 0; r < edge_table.rows.size(); ++r) {
    const auto& row = edge_table.rows[r];
    if (row[e_a].empty() || row[e_b].empty())
      throw ParseError(edge_table.file, edge_table.line_numbers[r], "empty student id");
    network.add_edge(row[e_a], row[e_b]);
  }

  return StudyData::build(std::move(classes), std::move(students), std::move(network),
                          std::move(spec));
}

void write_study(const StudyData& data, const std::filesystem::path& class_file,
                 const std::filesystem::path& student_file,
                 const std::filesystem::path& edge_file) {
  auto open = [](const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    return out;
  };
  {
    auto out = open(class_file);
    out << "class_id,z\n";
    for (const auto& c : data.classes()) out << c.id << ',' << c.z << '\n';
  }
  {
    auto out = open(student_file);
    out << "student_id,class_id,m,y";
    for (const auto& name : data.covariate_spec().names) out << ',' << name;
    out << '\n';
    for (const auto& s : data.students()) {
      out << s.id << ',' << s.class_id << ',' << s.m << ',' << s.y;
      for (double v : s.covariates) out << ',' << csv::format_double(v);
      out << '\n';
    }
  }
  {
    auto out = open(edge_file);
    out << "student_id_a,student_id_b\n";
    for (const auto& [a, b] : data.network().edges()) out << a << ',' << b << '\n';
  }
}

// ---------------------------------------------------------------------------
// Summaries

double neighbor_share(const std::unordered_map<std::string, int>& m_values,
                      const FriendshipNetwork& network, const std::string& student_id) {
  if (!m_values.contains(student_id))
    throw ValidationError("unknown student id '" + student_id + "'");
  const auto friends = network.neighbors(student_id);
  if (friends.empty()) {
    spdlog::warn("student '{}' has no friends; neighbor share set to 0", student_id);
    return 0.0;
  }
  std::size_t visits = 0;
  for (const auto& f : friends) {
    auto it = m_values.find(f);
    if (it == m_values.end())
      throw ValidationError("no treatment value for friend '" + f + "' of '" + student_id + "'");
    visits += it->second != 0 ? 1 : 0;
  }
  return static_cast<double>(visits) / static_cast<double>(friends.size());
}

double cluster_ratio_mean(const std::unordered_map<std::string, double>& values,
                          const StudyData& data) {
  if (data.n_students() == 0 || data.n_classes() == 0) throw ValidationError("empty study");
  double total = 0.0;
  double units = 0.0;
  for (const auto& c : data.classes()) {
    for (const auto& id : c.member_ids) {
      auto it = values.find(id);
      if (it == values.end()) throw ValidationError("no value for student '" + id + "'");
      total += it->second;
    }
    units += static_cast<double>(c.member_ids.size());
  }
  return total / units;
}

nlohmann::json validation_report(const StudyData& data) {
  std::map<int, std::array<std::size_t, 3>> arms;  // classes, students, treated
  for (const auto& c : data.classes()) arms[c.z][0] += 1;
  std::map<std::size_t, std::size_t> degrees;
  std::vector<std::string> isolated;
  for (std::size_t i = 0; i < data.n_students(); ++i) {
    auto& arm = arms[data.arm(i)];
    arm[1] += 1;
    arm[2] += static_cast<std::size_t>(data.students()[i].m);
    const auto d = data.neighbors(i).size();
    degrees[d] += 1;
    if (d == 0) isolated.push_back(data.students()[i].id);
  }
  nlohmann::json arm_json = nlohmann::json::object();
  for (const auto& [z, counts] : arms) {
    arm_json[std::to_string(z)] = {
        {"classes", counts[0]}, {"students", counts[1]}, {"treated", counts[2]}};
  }
  nlohmann::json degree_json = nlohmann::json::object();
  for (const auto& [d, count] : degrees) degree_json[std::to_string(d)] = count;
  const double mean_degree =
      2.0 * static_cast<double>(data.network().edges().size()) /
      static_cast<double>(data.n_students());
  return {{"n_classes", data.n_classes()},
          {"n_students", data.n_students()},
          {"n_edges", data.network().edges().size()},
          {"arms", arm_json},
          {"isolated_students", isolated.size()},
          {"isolated_ids", isolated},
          {"degree_distribution", degree_json},
          {"mean_degree", mean_degree},
          {"covariates", data.covariate_spec().to_json().at("covariates")}};
}

}  // namespace netstrat
