#include <doctest.h>

#include <cmath>
#include <unordered_map>

#include "netstrat/error.hpp"
#include "netstrat/study_data.hpp"
#include "support.hpp"

using namespace netstrat;
using namespace netstrat::testing;

namespace {

void write_small(const TempDir& dir) {
  write_text(dir / "classes.csv", "class_id,z\nA,1\nB,3\n");
  write_text(dir / "students.csv",
             "student_id,class_id,m,y,female,gpa\n"
             "a1,A,0,2,1,6.5\n"
             "a2,A,1,0,0,7.5\n"
             "a3,A,0,1,1,8.0\n"
             "b1,B,1,3,0,7.0\n"
             "b2,B,0,0,1,6.0\n");
  write_text(dir / "edges.csv", "student_id_a,student_id_b\na1,a2\na1,a3\nb1,b2\n");
}

std::string validation_message(StudyBuilder b) {
  try {
    b.build();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("load_study reads the three files and derives S") {
  TempDir dir("load");
  write_small(dir);
  const auto data = load_study(dir / "classes.csv", dir / "students.csv", dir / "edges.csv");
  CHECK(data.n_students() == 5);
  CHECK(data.n_classes() == 2);
  CHECK(data.covariate_spec().names == std::vector<std::string>{"female", "gpa"});
  CHECK(data.covariate_spec().kinds[0] == CovariateKind::Binary);
  CHECK(data.covariate_spec().kinds[1] == CovariateKind::Continuous);

  const auto a1 = *data.student_index("a1");
  const auto a2 = *data.student_index("a2");
  const auto b2 = *data.student_index("b2");
  CHECK(data.observed_share(a1) == doctest::Approx(0.5));  // friends a2 (m=1), a3 (m=0)
  CHECK(data.observed_share(a2) == 0.0);
  CHECK(data.observed_share(b2) == 1.0);
  CHECK(data.arm(b2) == 3);
  CHECK(data.isolated_count() == 0);
}

TEST_CASE("continuous covariates are standardized with the sample sd, binary ones pass through") {
  TempDir dir("std");
  write_small(dir);
  const auto data = load_study(dir / "classes.csv", dir / "students.csv", dir / "edges.csv");
  double sum = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < data.n_students(); ++i) {
    const double v = data.strata_x(i)[1];
    sum += v;
    ss += v * v;
    CHECK(data.strata_x(i)[0] == data.students()[i].covariates[0]);
  }
  CHECK(sum == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ss / 4.0 == doctest::Approx(1.0));
  // raw mean 7.0, raw sample sd sqrt(0.625)
  CHECK(data.standardization().mean[1] == doctest::Approx(7.0));
  CHECK(data.standardization().sd[1] == doctest::Approx(std::sqrt(0.625)));
}

TEST_CASE("config masks restrict covariates per model") {
  TempDir dir("mask");
  write_small(dir);
  const nlohmann::json cfg = {{"covariates", {{"strata", {"gpa"}}, {"outcome", {"female", "gpa"}}}}};
  const auto data = load_study(dir / "classes.csv", dir / "students.csv", dir / "edges.csv", cfg);
  CHECK(data.strata_dim() == 1);
  CHECK(data.outcome_dim() == 2);

  const nlohmann::json bad = {{"covariates", {{"strata", {"height"}}}}};
  CHECK_THROWS_AS(load_study(dir / "classes.csv", dir / "students.csv", dir / "edges.csv", bad),
                  ValidationError);
}

TEST_CASE("parse errors carry the file and line") {
  TempDir dir("parse");
  write_small(dir);
  write_text(dir / "students.csv",
             "student_id,class_id,m,y,female,gpa\n"
             "a1,A,0,2,1,6.5\n"
             "a2,A,1,zero,0,7.5\n");
  try {
    load_study(dir / "classes.csv", dir / "students.csv", dir / "edges.csv");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(e.file().find("students.csv") != std::string::npos);
  }

  write_text(dir / "students.csv", "student_id,class_id,m,y\na1,A,0\n");
  CHECK_THROWS_AS(load_study(dir / "classes.csv", dir / "students.csv", dir / "edges.csv"),
                  ParseError);
}

TEST_CASE("missing files raise an I/O error") {
  TempDir dir("missing");
  CHECK_THROWS_AS(load_study(dir / "classes.csv", dir / "students.csv", dir / "edges.csv"), IoError);
}

TEST_CASE("an empty student file is rejected") {
  TempDir dir("empty");
  write_small(dir);
  write_text(dir / "students.csv", "student_id,class_id,m,y\n");
  try {
    load_study(dir / "classes.csv", dir / "students.csv", dir / "edges.csv");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("no students") != std::string::npos);
  }
}

TEST_CASE("structural validation") {
  auto base = [] {
    StudyBuilder b;
    b.add_class("A", 1).add_class("B", 2);
    b.add_student("a", "A", 0, 1).add_student("b", "B", 1, 0);
    return b;
  };
  CHECK(validation_message(base()).empty());

  auto cross = base();
  cross.edge("a", "b");
  CHECK(validation_message(cross).find("connects students of different classes") != std::string::npos);

  auto arm = base();
  arm.classes[0].z = 4;
  CHECK(!validation_message(arm).empty());

  auto uptake = base();
  uptake.students[0].m = 2;
  CHECK(!validation_message(uptake).empty());

  auto outcome = base();
  outcome.students[0].y = -1;
  CHECK(!validation_message(outcome).empty());

  auto unknown = base();
  unknown.students[0].class_id = "Z";
  CHECK(!validation_message(unknown).empty());

  auto dup = base();
  dup.students[1].id = "a";
  dup.students[1].class_id = "A";
  CHECK(!validation_message(dup).empty());

  auto empty_class = base();
  empty_class.add_class("C", 3);
  CHECK(validation_message(empty_class).find("no students") != std::string::npos);

  auto ghost = base();
  ghost.edge("a", "ghost");
  CHECK(!validation_message(ghost).empty());

  FriendshipNetwork net;
  CHECK_THROWS_AS(net.add_edge("x", "x"), ValidationError);
}

TEST_CASE("duplicate edges collapse and are stored once") {
  FriendshipNetwork net;
  net.add_edge("b", "a");
  net.add_edge("a", "b");
  net.add_edge("a", "c");
  CHECK(net.edges().size() == 2);
  CHECK(net.edges()[0] == std::make_pair(std::string("a"), std::string("b")));
  CHECK(net.degree("a") == 2);
  CHECK(net.degree("nobody") == 0);
}

TEST_CASE("neighbor_share examples") {
  FriendshipNetwork net;
  net.add_edge("i", "always");
  net.add_edge("i", "reward");
  const std::unordered_map<std::string, int> m = {{"i", 0}, {"always", 1}, {"reward", 0}, {"alone", 0}};
  CHECK(neighbor_share(m, net, "i") == 0.5);
  CHECK(neighbor_share(m, net, "alone") == 0.0);
  CHECK_THROWS_AS(neighbor_share(m, net, "stranger"), ValidationError);
}

TEST_CASE("isolated students get S = 0 and are counted") {
  StudyBuilder b;
  b.add_class("A", 2);
  b.add_student("a", "A", 1, 0).add_student("b", "A", 1, 0).add_student("c", "A", 1, 0);
  b.edge("a", "b");
  const auto data = b.build();
  CHECK(data.isolated_count() == 1);
  CHECK(data.observed_share(*data.student_index("c")) == 0.0);
  const auto report = validation_report(data);
  CHECK(report["isolated_students"] == 1);
  CHECK(report["isolated_ids"][0] == "c");
}

TEST_CASE("property: observed S is the share of friends taking up, within [0, 1]") {
  Rng rng = make_rng(101, 0);
  for (int rep = 0; rep < 50; ++rep) {
    const auto data = random_study(rng, 12, 0.4);
    for (std::size_t i = 0; i < data.n_students(); ++i) {
      const auto& nb = data.neighbors(i);
      double ones = 0.0;
      for (std::size_t f : nb) {
        ones += data.students()[f].m;
        CHECK(data.class_of(f) == data.class_of(i));
      }
      const double expected = nb.empty() ? 0.0 : ones / static_cast<double>(nb.size());
      CHECK(data.observed_share(i) == doctest::Approx(expected).epsilon(1e-15));
      CHECK(data.observed_share(i) >= 0.0);
      CHECK(data.observed_share(i) <= 1.0);
    }
  }
}

TEST_CASE("cluster_ratio_mean is total over units") {
  StudyBuilder b;
  b.add_class("A", 1).add_class("B", 1);
  b.add_student("a1", "A", 0, 0).add_student("a2", "A", 0, 0).add_student("b1", "B", 0, 0);
  const auto data = b.build();
  const std::unordered_map<std::string, double> v = {{"a1", 1.0}, {"a2", 0.0}, {"b1", 1.0}};
  CHECK(cluster_ratio_mean(v, data) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("write_study and load_study round-trip exactly") {
  Rng rng = make_rng(7, 1);
  const auto data = random_study(rng, 8);
  TempDir dir("roundtrip");
  write_study(data, dir / "c.csv", dir / "s.csv", dir / "e.csv");
  const nlohmann::json cfg = data.covariate_spec().to_json();
  const auto back = load_study(dir / "c.csv", dir / "s.csv", dir / "e.csv", cfg);
  REQUIRE(back.n_students() == data.n_students());
  for (std::size_t i = 0; i < data.n_students(); ++i) {
    const auto j = *back.student_index(data.students()[i].id);
    CHECK(back.students()[j].covariates == data.students()[i].covariates);
    CHECK(back.students()[j].y == data.students()[i].y);
    CHECK(back.observed_share(j) == data.observed_share(i));
  }
  CHECK(back.network().edges().size() == data.network().edges().size());
}

TEST_CASE("quoted fields may contain commas") {
  TempDir dir("quoted");
  write_text(dir / "classes.csv", "class_id,z\n\"A,1\",2\n");
  write_text(dir / "students.csv", "student_id,class_id,m,y\n\"x\",\"A,1\",1,0\n");
  write_text(dir / "edges.csv", "student_id_a,student_id_b\n");
  const auto data = load_study(dir / "classes.csv", dir / "students.csv", dir / "edges.csv");
  CHECK(data.classes()[0].id == "A,1");
}
