#include <doctest.h>

#include <cmath>

#include "netstrat/error.hpp"
#include "netstrat/simulate.hpp"
#include "support.hpp"

using namespace netstrat;
using namespace netstrat::testing;

namespace {

SimConfig small_config(std::uint64_t seed) {
  auto c = SimConfig::defaults();
  c.n_classes = 9;
  c.class_size = 12;
  c.edge_probability = 0.3;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("generated studies have balanced arms and consistent observations") {
  const auto cfg = small_config(1);
  const auto sim = generate(cfg);
  const auto& data = sim.data;
  CHECK(data.n_classes() == 9);
  CHECK(data.n_students() == 108);
  std::array<int, 3> per_arm{};
  for (const auto& c : data.classes()) ++per_arm[static_cast<std::size_t>(c.z - 1)];
  CHECK(per_arm == std::array<int, 3>{3, 3, 3});
  CHECK(data.students()[0].id == "s00001");
  CHECK(data.classes()[0].id == "c001");
  for (std::size_t i = 0; i < data.n_students(); ++i) {
    const int z = data.arm(i);
    const Stratum g = sim.truth.strata[i];
    CHECK(data.students()[i].m == potential_treatment(g, z));
    CHECK(sim.truth.mediator[static_cast<std::size_t>(z - 1)][i] == data.observed_share(i));
    CHECK(data.students()[i].y == sim.truth.outcome(i, z, data.observed_share(i), data));
    CHECK(sim.truth.mediator[0][i] <= sim.truth.mediator[1][i]);
    CHECK(sim.truth.mediator[1][i] <= sim.truth.mediator[2][i]);
  }
  const auto sh = sim.truth.shares();
  CHECK(sh[0] + sh[1] + sh[2] + sh[3] == doctest::Approx(1.0));
}

TEST_CASE("generation is deterministic in the seed") {
  const auto a = generate(small_config(4));
  const auto b = generate(small_config(4));
  const auto c = generate(small_config(5));
  CHECK(a.truth.params.values == b.truth.params.values);
  CHECK(a.truth.strata == b.truth.strata);
  bool same_y = true;
  for (std::size_t i = 0; i < a.data.n_students(); ++i)
    same_y = same_y && a.data.students()[i].y == b.data.students()[i].y;
  CHECK(same_y);
  CHECK(a.truth.params.values != c.truth.params.values);
}

TEST_CASE("default truth gives a never-taker-heavy mix") {
  auto cfg = SimConfig::defaults();
  cfg.n_classes = 150;
  const auto sh = generate(cfg).truth.shares();
  CHECK(sh[index(Stratum::NeverTaker)] > sh[index(Stratum::RewardComplier)]);
  CHECK(sh[index(Stratum::RewardComplier)] > sh[index(Stratum::AlwaysTaker)]);
  CHECK(sh[index(Stratum::NeverTaker)] == doctest::Approx(0.55).epsilon(0.15));
}

TEST_CASE("a configuration with only never-takers") {
  auto cfg = small_config(2);
  cfg.truth.gamma = {0.0, 0.0, 30.0};
  const auto sim = generate(cfg);
  for (Stratum g : sim.truth.strata) CHECK(g == Stratum::NeverTaker);
  for (const auto& s : sim.data.students()) CHECK(s.m == 0);
  const auto oracle = oracle_estimands(sim.truth, sim.data, {});
  CHECK_FALSE(oracle.value(EffectSpec::pce(2, 1), Stratum::AlwaysTaker).has_value());
  CHECK(oracle.counts[index(Stratum::NeverTaker)] == sim.data.n_students());
  // Nobody takes up, so natural mediators never move.
  CHECK(*oracle.value(EffectSpec::nie(2, 2, 1), Stratum::NeverTaker) == 0.0);
}

TEST_CASE("property: oracle effects decompose exactly") {
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const auto sim = generate(small_config(seed));
    const EstimandRequest req;
    const auto o = oracle_estimands(sim.truth, sim.data, req);
    for (const auto& [z, zp] : req.contrasts) {
      for (Stratum g : kAllStrata) {
        const auto pce = o.value(EffectSpec::pce(z, zp), g);
        if (!pce) continue;
        CHECK(*o.value(EffectSpec::nde(z, zp, zp), g) + *o.value(EffectSpec::nie(z, z, zp), g) ==
              doctest::Approx(*pce).epsilon(1e-12));
        CHECK(*o.value(EffectSpec::nde(z, zp, z), g) + *o.value(EffectSpec::nie(zp, z, zp), g) ==
              doctest::Approx(*pce).epsilon(1e-12));
        if (z == 3 && zp == 2 && g != Stratum::RewardComplier) {
          CHECK(*o.value(EffectSpec::nde(3, 2, 2), g) == 0.0);
          CHECK(*o.value(EffectSpec::cde(3, 2, 0.3), g) == 0.0);
        }
      }
    }
  }
}

TEST_CASE("without spillover the indirect and spillover effects vanish") {
  auto cfg = SimConfig::null_spillover();
  cfg.n_classes = 9;
  cfg.class_size = 12;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    cfg.seed = seed;
    const auto sim = generate(cfg);
    const EstimandRequest req;
    const auto o = oracle_estimands(sim.truth, sim.data, req);
    for (std::size_t k = 0; k < o.effects.size(); ++k) {
      const auto kind = o.effects[k].kind;
      if (kind != EffectKind::NIE && kind != EffectKind::CSE) continue;
      for (std::size_t g = 0; g < 4; ++g)
        if (!std::isnan(o.values[k][g])) CHECK(o.values[k][g] == 0.0);
    }
  }
}

TEST_CASE("brute-force likelihood for a single student and a cap on size") {
  StudyBuilder b;
  b.add_class("A", 2);
  b.add_student("x", "A", 1, 0);
  const auto data = b.build();
  Parameters p = Parameters::neutral(ParameterLayout::for_study(data));
  for (std::size_t s = 0; s < 9; ++s) p[p.layout.phi(Stratum::AlwaysTaker, 1) + s] = 0.0;
  // 111 and 011 are compatible, each with prior 1/4; Poisson(1) mass at 0 is e^-1.
  CHECK(brute_force_likelihood(data, p) == doctest::Approx(std::log(0.5 * std::exp(-1.0))));

  Rng rng = make_rng(9, 9);
  const auto big = random_study(rng, 9);
  CHECK_THROWS_AS(brute_force_likelihood(big, random_parameters(ParameterLayout::for_study(big), rng)),
                  ValidationError);
}

TEST_CASE("configuration JSON round-trips and invalid settings are rejected") {
  const auto cfg = small_config(77);
  const auto back = SimConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  const auto a = generate(cfg);
  const auto b = generate(back);
  CHECK(a.truth.params.values == b.truth.params.values);

  auto bad = cfg;
  bad.n_classes = 10;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = cfg;
  bad.edge_probability = 1.5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = cfg;
  bad.truth.phi[0] = -0.1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = cfg;
  bad.truth.beta_s.push_back(0.1);
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = cfg;
  bad.truth.beta_x.clear();
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  auto free = cfg;
  free.options.free_beta_s_arm3 = true;
  free.truth.beta_s.push_back(0.5);
  CHECK_NOTHROW(generate(free));
}

TEST_CASE("truth document") {
  const auto cfg = small_config(3);
  const auto sim = generate(cfg);
  const EstimandRequest req;
  const auto j = truth_to_json(cfg, sim, req);
  CHECK(j["format"] == "netstrat.truth");
  CHECK(j["students"].size() == sim.data.n_students());
  CHECK(j["oracle"].size() == 4 * req.effects().size());
  const auto params = parameters_from_json(j["parameters"], sim.data);
  CHECK(params.values == sim.truth.params.values);
  double total = 0.0;
  for (const auto& [k, v] : j["shares"].items()) total += v.get<double>();
  CHECK(total == doctest::Approx(1.0));
}
