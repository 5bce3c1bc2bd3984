#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "netstrat/model.hpp"
#include "netstrat/rng.hpp"
#include "netstrat/study_data.hpp"

namespace netstrat::testing {

// Builds a study from per-class arms and per-student (class, m, y) triples.
// Covariates are optional; edges use student ids.
struct StudyBuilder {
  std::vector<ClassRoom> classes;
  std::vector<Student> students;
  FriendshipNetwork network;
  CovariateSpec spec;

  StudyBuilder& covariate(const std::string& name, CovariateKind kind, bool strata = true,
                          bool outcome = true) {
    spec.names.push_back(name);
    spec.kinds.push_back(kind);
    spec.in_strata.push_back(strata);
    spec.in_outcome.push_back(outcome);
    return *this;
  }
  StudyBuilder& add_class(const std::string& id, int z) {
    classes.push_back({id, z, {}});
    return *this;
  }
  StudyBuilder& add_student(const std::string& id, const std::string& cls, int m, int y,
                            std::vector<double> x = {}) {
    students.push_back({id, cls, m, y, std::move(x)});
    return *this;
  }
  StudyBuilder& edge(const std::string& a, const std::string& b) {
    network.add_edge(a, b);
    return *this;
  }
  StudyData build() const { return StudyData::build(classes, students, network, spec); }
};

// Random study of n students in up to three classes with two covariates and
// random friendships inside classes.
inline StudyData random_study(Rng& rng, std::size_t n, double edge_p = 0.5) {
  StudyBuilder b;
  b.covariate("x1", CovariateKind::Continuous).covariate("x2", CovariateKind::Binary);
  const std::size_t n_classes = std::min<std::size_t>(n, 1 + static_cast<std::size_t>(uniform01(rng) * 3.0));
  for (std::size_t j = 0; j < n_classes; ++j)
    b.add_class("c" + std::to_string(j), 1 + static_cast<int>(uniform01(rng) * 3.0));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i < n_classes ? i : static_cast<std::size_t>(uniform01(rng) * n_classes);
    b.add_student("s" + std::to_string(i), "c" + std::to_string(j), uniform01(rng) < 0.5 ? 1 : 0,
                  static_cast<int>(uniform01(rng) * 5.0),
                  {standard_normal(rng), uniform01(rng) < 0.5 ? 1.0 : 0.0});
  }
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t c = a + 1; c < n; ++c)
      if (b.students[a].class_id == b.students[c].class_id && uniform01(rng) < edge_p)
        b.edge(b.students[a].id, b.students[c].id);
  return b.build();
}

// Natural-scale parameters: coefficients in (-1, 1), sigmas in (0.3, 1.5),
// phis in (0.05, 0.95).
inline Parameters random_parameters(const ParameterLayout& layout, Rng& rng) {
  Parameters p(layout);
  for (auto& v : p.values) v = 2.0 * uniform01(rng) - 1.0;
  p[layout.sigma_a()] = 0.3 + 1.2 * uniform01(rng);
  p[layout.sigma_b()] = 0.3 + 1.2 * uniform01(rng);
  for (std::size_t s = 0; s < 9; ++s)
    p[layout.phi(Stratum::AlwaysTaker, 1) + s] = 0.05 + 0.9 * uniform01(rng);
  return p;
}

// Table 6 counts: arm sizes 89/87/90 with 3/10/40 students taking up,
// in five contiguous classes per arm.
inline StudyBuilder table6_builder() {
  StudyBuilder b;
  const int sizes[3] = {89, 87, 90};
  const int treated[3] = {3, 10, 40};
  int sid = 0;
  for (int z = 1; z <= 3; ++z) {
    for (int c = 0; c < 5; ++c) b.add_class("c" + std::to_string(z) + std::to_string(c), z);
    for (int i = 0; i < sizes[z - 1]; ++i)
      b.add_student("s" + std::to_string(sid++), "c" + std::to_string(z) + std::to_string(i * 5 / sizes[z - 1]),
                    i < treated[z - 1] ? 1 : 0, 0);
  }
  return b;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("netstrat_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace netstrat::testing
