#include <doctest.h>

#include <cmath>

#include <boost/math/distributions/poisson.hpp>

#include "netstrat/error.hpp"
#include "netstrat/estimands.hpp"
#include "support.hpp"

using namespace netstrat;
using namespace netstrat::testing;

namespace {

Draws draws_from(const std::vector<Parameters>& rows, const StudyData& data) {
  Draws d;
  d.names = rows.front().layout.names(data);
  d.chains = 1;
  d.samples = rows.size();
  for (const auto& p : rows) {
    d.values.insert(d.values.end(), p.values.begin(), p.values.end());
    d.log_posterior.push_back(0.0);
    d.accept_stat.push_back(1.0);
    d.n_leapfrog.push_back(1);
    d.divergent.push_back(0);
  }
  return d;
}

std::vector<OutcomeUniforms> uniforms_for(const StudyData& data, std::uint64_t seed) {
  std::vector<OutcomeUniforms> u;
  for (std::size_t i = 0; i < data.n_students(); ++i) u.push_back(outcome_uniforms(seed, 0, i));
  return u;
}

// Unnormalized posterior stratum weight of student i written out from the
// softmax and the zero-inflated Poisson mass, without the library helpers.
std::array<double, 4> bayes_weights(const StudyData& data, const Parameters& p, std::size_t i) {
  const auto& l = p.layout;
  const auto& st = data.students()[i];
  const int z = data.arm(i);
  const std::size_t j = data.class_of(i);
  std::array<double, 4> eta{};
  for (std::size_t g = 1; g < 4; ++g) {
    eta[g] = p[l.gamma(kAllStrata[g])] + p[l.a(j)];
    for (std::size_t k = 0; k < data.strata_dim(); ++k)
      eta[g] += p[l.delta(kAllStrata[g], k)] * data.strata_x(i)[k];
  }
  double denom = 0.0;
  for (double e : eta) denom += std::exp(e);
  std::array<double, 4> w{};
  for (std::size_t g = 0; g < 4; ++g) {
    const Stratum s = kAllStrata[g];
    if (std::string(code(s))[static_cast<std::size_t>(z - 1)] - '0' != st.m) continue;
    double lin = p[l.alpha(s, z)] + p[l.beta_s(s, z)] * data.observed_share(i) + p[l.b(j)];
    for (std::size_t k = 0; k < data.outcome_dim(); ++k)
      lin += p[l.beta_x(k)] * data.outcome_x(i)[k];
    const double mu = std::exp(lin);
    const double phi = p[l.phi(s, z)];
    const double pois = boost::math::pdf(boost::math::poisson_distribution<double>(mu), st.y);
    const double f = (st.y == 0 ? phi : 0.0) + (1.0 - phi) * pois;
    w[g] = std::exp(eta[g]) / denom * f;
  }
  return w;
}

}  // namespace

TEST_CASE("stratum imputation follows the posterior stratum weights") {
  Rng rng = make_rng(31, 0);
  const auto data = random_study(rng, 6);
  const auto p = random_parameters(ParameterLayout::for_study(data), rng);
  const int reps = 20000;
  std::vector<std::array<int, 4>> counts(data.n_students());
  Rng draw_rng = make_rng(31, 1);
  for (int r = 0; r < reps; ++r) {
    const auto strata = impute_strata(data, p, draw_rng);
    for (std::size_t i = 0; i < strata.size(); ++i) ++counts[i][index(strata[i])];
  }
  for (std::size_t i = 0; i < data.n_students(); ++i) {
    const auto w = bayes_weights(data, p, i);
    const double total = w[0] + w[1] + w[2] + w[3];
    for (std::size_t g = 0; g < 4; ++g) {
      const double prob = w[g] / total;
      const double freq = counts[i][g] / static_cast<double>(reps);
      if (prob == 0.0) {
        CHECK(counts[i][g] == 0);
      } else {
        CHECK(std::abs(freq - prob) < 5.0 * std::sqrt(prob * (1.0 - prob) / reps) + 1e-9);
      }
    }
  }
}

TEST_CASE("imputed strata are compatible with the observed uptake") {
  Rng rng = make_rng(32, 0);
  for (int rep = 0; rep < 30; ++rep) {
    const auto data = random_study(rng, 10);
    const auto p = random_parameters(ParameterLayout::for_study(data), rng);
    const auto aug = augment(data, p, rng);
    for (std::size_t i = 0; i < data.n_students(); ++i) {
      CHECK(aug.m(i, data.arm(i)) == data.students()[i].m);
      CHECK(aug.s(i, data.arm(i)) == data.observed_share(i));
      CHECK(aug.s(i, 1) <= aug.s(i, 2));
      CHECK(aug.s(i, 2) <= aug.s(i, 3));
    }
  }
}

TEST_CASE("potential mediator example") {
  StudyBuilder b;
  b.add_class("A", 1);
  b.add_student("i", "A", 0, 0).add_student("f1", "A", 0, 0).add_student("f2", "A", 0, 0);
  b.add_student("f3", "A", 0, 0).add_student("lone", "A", 0, 0);
  b.edge("i", "f1").edge("i", "f2").edge("i", "f3");
  const auto data = b.build();
  using S = Stratum;
  const std::vector<S> strata = {S::NeverTaker, S::AlwaysTaker, S::PresentationComplier,
                                 S::RewardComplier, S::AlwaysTaker};
  CHECK(potential_mediator(data, strata, 1)[0] == doctest::Approx(1.0 / 3.0));
  CHECK(potential_mediator(data, strata, 2)[0] == doctest::Approx(2.0 / 3.0));
  CHECK(potential_mediator(data, strata, 3)[0] == 1.0);
  CHECK(potential_mediator(data, strata, 3)[4] == 0.0);
  CHECK(potential_mediator(data, strata, 1)[1] == 0.0);  // f1's only friend is i, a never-taker
  CHECK_THROWS_AS(potential_mediator(data, strata, 4), ValidationError);
}

TEST_CASE("imputation reports a student whose weights all vanish") {
  StudyBuilder b;
  b.add_class("A", 3);
  b.add_student("stuck", "A", 0, 4);
  const auto data = b.build();
  Parameters p = Parameters::neutral(ParameterLayout::for_study(data));
  p[p.layout.phi(Stratum::NeverTaker, 3)] = 1.0;  // never-taker mass at y = 4 is zero
  Rng rng = make_rng(1, 1);
  try {
    impute_strata(data, p, rng);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("stuck") != std::string::npos);
  }
}

TEST_CASE("outcome imputation returns the observed outcome at the realized cell") {
  StudyBuilder b;
  b.add_class("A", 3);
  b.add_student("n", "A", 0, 7).add_student("r", "A", 1, 5).add_student("a", "A", 1, 2);
  b.edge("n", "r");
  const auto data = b.build();
  Rng rng = make_rng(33, 0);
  const auto p = random_parameters(ParameterLayout::for_study(data), rng);
  const OutcomeUniforms u{0.99, 0.5};
  const double s_n = data.observed_share(0);
  CHECK(impute_outcome(data, p, 0, Stratum::NeverTaker, 3, s_n, u) == 7);
  CHECK(impute_outcome(data, p, 0, Stratum::NeverTaker, 2, s_n, u) == 7);  // tied arm
  CHECK(impute_outcome(data, p, 1, Stratum::RewardComplier, 3, data.observed_share(1), u) == 5);
  const double s_r = data.observed_share(1);
  const double mu2 = poisson_mean(Stratum::RewardComplier, 2, s_r, {}, p.b(0), p);
  CHECK(impute_outcome(data, p, 1, Stratum::RewardComplier, 2, s_r, u) ==
        zip_quantile(p.phi(Stratum::RewardComplier, 2), mu2, u));
  CHECK_THROWS_AS(impute_outcome(data, p, 0, Stratum::NeverTaker, 3, 1.5, u), ValidationError);
  CHECK_THROWS_AS(impute_outcome(data, p, 0, Stratum::NeverTaker, 0, 0.0, u), ValidationError);

  auto all_zero = p;
  for (std::size_t s = 0; s < 9; ++s) all_zero[p.layout.phi(Stratum::AlwaysTaker, 1) + s] = 1.0;
  CHECK(impute_outcome(data, all_zero, 2, Stratum::AlwaysTaker, 1, 0.0, u) == 0);
  CHECK(impute_outcome(data, all_zero, 2, Stratum::AlwaysTaker, 3, data.observed_share(2), u) == 2);
}

TEST_CASE("zip_quantile inverts the Poisson cdf") {
  Rng rng = make_rng(34, 0);
  for (double mu : {0.2, 3.0, 17.0, 49.0, 80.0, 400.0}) {
    const boost::math::poisson_distribution<double> pois(mu);
    for (int r = 0; r < 200; ++r) {
      const OutcomeUniforms u{1.0, uniform01(rng)};
      const int k = zip_quantile(0.0, mu, u);
      CHECK(boost::math::cdf(pois, k) >= u.u1 * (1.0 - 1e-12));
      if (k > 0) CHECK(boost::math::cdf(pois, k - 1) < u.u1 * (1.0 + 1e-12));
    }
  }
  CHECK(zip_quantile(0.3, 5.0, {0.29, 0.999}) == 0);
}

TEST_CASE("zip_quantile draws have the zero-inflated Poisson mean and zero mass") {
  Rng rng = make_rng(35, 0);
  const double phi = 0.35, mu = 4.0;
  const int n = 200000;
  double sum = 0.0;
  int zeros = 0;
  for (int r = 0; r < n; ++r) {
    const int y = zip_quantile(phi, mu, {uniform01(rng), uniform01(rng)});
    sum += y;
    zeros += y == 0;
  }
  const double mean = (1.0 - phi) * mu;
  const double var = (1.0 - phi) * mu * (1.0 + phi * mu);
  CHECK(std::abs(sum / n - mean) < 4.0 * std::sqrt(var / n));
  const double p0 = phi + (1.0 - phi) * std::exp(-mu);
  CHECK(std::abs(zeros / static_cast<double>(n) - p0) < 4.0 * std::sqrt(p0 * (1.0 - p0) / n));
}

TEST_CASE("conditioned uniforms reproduce the observed outcome") {
  Rng rng = make_rng(36, 0);
  for (int rep = 0; rep < 40; ++rep) {
    const auto data = random_study(rng, 2 + static_cast<std::size_t>(uniform01(rng) * 10.0));
    const auto p = random_parameters(ParameterLayout::for_study(data), rng);
    for (std::size_t i = 0; i < data.n_students(); ++i) {
      const int z = data.arm(i);
      for (Stratum g : kAllStrata) {
        if (potential_treatment(g, z) != data.students()[i].m) continue;
        const auto u = condition_uniforms(data, p, i, g, {uniform01(rng), uniform01(rng)});
        CHECK(u.u0 >= 0.0);
        CHECK(u.u0 <= 1.0);
        CHECK(u.u1 >= 0.0);
        CHECK(u.u1 <= 1.0);
        const double mu = poisson_mean(g, z, data.observed_share(i), data.outcome_x(i),
                                       p.b(data.class_of(i)), p);
        CHECK(zip_quantile(p.phi(g, z), mu, u) == data.students()[i].y);
      }
    }
  }
}

TEST_CASE("conditioned uniforms match rejection sampling") {
  for (int y : {0, 1, 4}) {
    StudyBuilder b;
    b.add_class("A", 2);
    b.add_student("s", "A", 0, y);
    const auto data = b.build();
    Parameters p = Parameters::neutral(ParameterLayout::for_study(data));
    p[p.layout.phi(Stratum::NeverTaker, 2)] = 0.3;
    p[p.layout.alpha(Stratum::NeverTaker, 2)] = std::log(2.5);
    const double phi = 0.3, mu = 2.5;

    Rng rng = make_rng(37, static_cast<std::uint64_t>(y));
    const int n = 40000;
    double r0 = 0.0, r1 = 0.0, rz = 0.0, c0 = 0.0, c1 = 0.0, cz = 0.0;
    int kept = 0;
    while (kept < n) {
      const OutcomeUniforms u{uniform01(rng), uniform01(rng)};
      if (zip_quantile(phi, mu, u) != y) continue;
      ++kept;
      r0 += u.u0;
      r1 += u.u1;
      rz += u.u0 < phi;
    }
    for (int k = 0; k < n; ++k) {
      const auto u = condition_uniforms(data, p, 0, Stratum::NeverTaker, {uniform01(rng), uniform01(rng)});
      c0 += u.u0;
      c1 += u.u1;
      cz += u.u0 < phi;
    }
    // Each coordinate lies in [0, 1], so its sd is at most 0.5.
    const double se = 0.5 * std::sqrt(2.0 / n);
    CHECK(std::abs(r0 - c0) / n < 4.0 * se);
    CHECK(std::abs(r1 - c1) / n < 4.0 * se);
    CHECK(std::abs(rz - cz) / n < 4.0 * se);
  }
}

TEST_CASE("outcome uniforms are deterministic per (seed, draw, student)") {
  const auto a = outcome_uniforms(5, 2, 3);
  const auto b = outcome_uniforms(5, 2, 3);
  CHECK(a.u0 == b.u0);
  CHECK(a.u1 == b.u1);
  CHECK(outcome_uniforms(5, 2, 4).u0 != a.u0);
  CHECK(outcome_uniforms(6, 2, 3).u0 != a.u0);
  CHECK(a.u0 > 0.0);
  CHECK(a.u1 < 1.0);
}

TEST_CASE("effect labels") {
  CHECK(EffectSpec::pce(2, 1).label() == "PCE(2 vs 1)");
  CHECK(EffectSpec::nde(3, 2, 2).label() == "NDE(3 vs 2, S(2))");
  CHECK(EffectSpec::nie(1, 2, 1).label() == "NIE(1, S(2) vs S(1))");
  CHECK(EffectSpec::cde(3, 1, 0.2).label() == "CDE(3 vs 1, 0.2)");
  CHECK(EffectSpec::cse(2, 0.5, 0.0).label() == "CSE(2, 0.5 vs 0)");
}

TEST_CASE("property: total effect splits exactly into direct and indirect parts") {
  Rng rng = make_rng(36, 0);
  for (int rep = 0; rep < 40; ++rep) {
    const auto data = random_study(rng, 15, 0.4);
    const auto p = random_parameters(ParameterLayout::for_study(data), rng);
    const auto aug = augment(data, p, rng);
    const auto u = uniforms_for(data, static_cast<std::uint64_t>(rep));
    for (const auto& [z, zp] : std::vector<std::pair<int, int>>{{2, 1}, {3, 2}, {3, 1}, {1, 3}}) {
      for (Stratum g : kAllStrata) {
        const auto pce = effect_value(data, p, aug, u, EffectSpec::pce(z, zp), g);
        if (!pce) continue;
        const double a = *effect_value(data, p, aug, u, EffectSpec::nde(z, zp, zp), g) +
                         *effect_value(data, p, aug, u, EffectSpec::nie(z, z, zp), g);
        const double b = *effect_value(data, p, aug, u, EffectSpec::nde(z, zp, z), g) +
                         *effect_value(data, p, aug, u, EffectSpec::nie(zp, z, zp), g);
        CHECK(a == doctest::Approx(*pce).epsilon(1e-12));
        CHECK(b == doctest::Approx(*pce).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("property: structural zeros and trivial contrasts") {
  Rng rng = make_rng(37, 0);
  for (int rep = 0; rep < 30; ++rep) {
    const auto data = random_study(rng, 12, 0.4);
    const auto p = random_parameters(ParameterLayout::for_study(data), rng);
    const auto aug = augment(data, p, rng);
    const auto u = uniforms_for(data, 100 + static_cast<std::uint64_t>(rep));
    for (Stratum g : kAllStrata) {
      if (!effect_value(data, p, aug, u, EffectSpec::pce(2, 1), g)) continue;
      if (g != Stratum::RewardComplier) {
        for (int w : {2, 3}) CHECK(*effect_value(data, p, aug, u, EffectSpec::nde(3, 2, w), g) == 0.0);
        for (double s : {0.0, 0.3, 1.0})
          CHECK(*effect_value(data, p, aug, u, EffectSpec::cde(3, 2, s), g) == 0.0);
      }
      for (int z = 1; z <= 3; ++z) {
        CHECK(*effect_value(data, p, aug, u, EffectSpec::cse(z, 0.4, 0.4), g) == 0.0);
        CHECK(*effect_value(data, p, aug, u, EffectSpec::pce(z, z), g) == 0.0);
      }
    }
  }
}

TEST_CASE("no spillover means no indirect or spillover effect") {
  Rng rng = make_rng(38, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const auto data = random_study(rng, 12, 0.5);
    auto p = random_parameters(ParameterLayout::for_study(data), rng);
    for (std::size_t s = 0; s < p.layout.beta_s_count(); ++s) p[p.layout.beta_s_begin() + s] = 0.0;
    const auto aug = augment(data, p, rng);
    const auto u = uniforms_for(data, 200 + static_cast<std::uint64_t>(rep));
    for (Stratum g : kAllStrata) {
      if (!effect_value(data, p, aug, u, EffectSpec::pce(2, 1), g)) continue;
      for (int z = 1; z <= 3; ++z) {
        // mediator values away from any observed share, so nothing is anchored
        CHECK(*effect_value(data, p, aug, u, EffectSpec::cse(z, 0.17, 0.83), g) == 0.0);
      }
    }
  }
}

TEST_CASE("summaries") {
  const std::vector<double> v = {1.0, 2.0, 3.0, 4.0, std::nan("")};
  const auto s = summarize(v);
  CHECK(s.n == 4);
  CHECK(s.missing == 1);
  CHECK(s.mean == 2.5);
  CHECK(s.sd == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(s.pr_positive == 1.0);
  CHECK(s.q025 == doctest::Approx(1.075));
  CHECK(s.q975 == doctest::Approx(3.925));
  const std::vector<double> one = {-2.0};
  CHECK(summarize(one).sd == 0.0);
  CHECK(summarize(one).q975 == -2.0);
  const std::vector<double> none = {std::nan(""), std::nan("")};
  CHECK_THROWS_AS(summarize(none), ValidationError);
  const std::vector<double> sorted = {0.0, 10.0};
  CHECK(quantile_sorted(sorted, 0.25) == 2.5);
}

TEST_CASE("request parsing, validation and the default effect list") {
  CHECK(parse_contrasts("2v1, 3v2") == std::vector<std::pair<int, int>>{{2, 1}, {3, 2}});
  CHECK_THROWS_AS(parse_contrasts("2-1"), ValidationError);
  CHECK_THROWS_AS(parse_contrasts("4v1"), ValidationError);
  CHECK(parse_grid("0, 0.25,1") == std::vector<double>{0.0, 0.25, 1.0});
  CHECK_THROWS(parse_grid("0,x"));

  EstimandRequest r;
  CHECK_NOTHROW(r.validate());
  // per contrast: 1 PCE + 2 NDE + 2 NIE + 6 CDE; per arm: 5 CSE
  CHECK(r.effects().size() == 3 * 11 + 3 * 5);
  auto bad = r;
  bad.contrasts = {{2, 2}};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = r;
  bad.s_grid = {1.2};
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  EstimandRequest other;
  other.apply_json({{"estimands", {{"contrasts", {{3, 1}}}, {"s_grid", {0.0, 0.5}}, {"seed", 4}}}});
  CHECK(other.contrasts == std::vector<std::pair<int, int>>{{3, 1}});
  CHECK(other.effects().size() == 1 + 2 + 2 + 2 + 3);
  EstimandRequest back;
  back.apply_json({{"estimands", other.to_json()}});
  CHECK(back.to_json() == other.to_json());
}

TEST_CASE("estimand pipeline: homophily rows, thread invariance, outputs") {
  Rng rng = make_rng(39, 0);
  const auto data = random_study(rng, 20, 0.4);
  const auto layout = ParameterLayout::for_study(data);
  std::vector<Parameters> rows;
  for (int d = 0; d < 12; ++d) rows.push_back(random_parameters(layout, rng));
  const auto draws = draws_from(rows, data);

  EstimandRequest req;
  req.seed = 3;
  const auto a = compute_estimands(data, draws, layout, req);
  req.threads = 4;
  const auto b = compute_estimands(data, draws, layout, req);
  REQUIRE(a.values.size() == b.values.size());
  for (std::size_t e = 0; e < a.values.size(); ++e)
    for (std::size_t g = 0; g < 4; ++g)
      for (std::size_t d = 0; d < a.n_draws; ++d) {
        const double x = a.values[e][g][d], y = b.values[e][g][d];
        CHECK(((std::isnan(x) && std::isnan(y)) || x == y));
      }

  for (std::size_t d = 0; d < a.n_draws; ++d) {
    double share = 0.0;
    for (double s : a.shares[d]) share += s;
    CHECK(share == doctest::Approx(1.0));
    for (const auto& row : a.homophily[d]) {
      if (std::isnan(row[0])) continue;
      CHECK(row[0] + row[1] + row[2] + row[3] == doctest::Approx(1.0));
    }
  }

  // Each per-draw value equals effect_value on the same augmentation.
  const auto k = *a.find(EffectSpec::nie(2, 2, 1));
  Parameters p0(layout);
  p0.values = rows[0].values;
  Rng r0 = make_rng(req.seed ^ 0x5354, 0);
  const auto aug = augment(data, p0, r0);
  std::vector<OutcomeUniforms> u;
  for (std::size_t i = 0; i < data.n_students(); ++i)
    u.push_back(condition_uniforms(data, p0, i, aug.strata[i], outcome_uniforms(req.seed, 0, i)));
  for (Stratum g : kAllStrata) {
    const auto v = effect_value(data, p0, aug, u, EffectSpec::nie(2, 2, 1), g);
    if (v)
      CHECK(a.value(k, g, 0) == doctest::Approx(*v).epsilon(1e-12));
    else
      CHECK(std::isnan(a.value(k, g, 0)));
  }

  TempDir dir("est");
  write_estimands_csv(a, dir / "estimands.csv");
  write_strata_shares_csv(a, dir / "shares.csv");
  write_homophily_csv(a, dir / "homophily.csv");
  const auto text = read_text(dir / "estimands.csv");
  CHECK(text.rfind("stratum,estimand,label,z,z_prime,mediator_arm,s_a,s_b,mean,sd,q2.5,q5,q95,"
                   "q97.5,pr_positive,n_draws,n_missing\n",
                   0) == 0);
  CHECK(text.find("\"NIE(2, S(2) vs S(1))\"") != std::string::npos);
  CHECK(read_text(dir / "shares.csv").rfind("stratum,label,mean,sd,", 0) == 0);
  const auto profiles = stratum_profiles(a);
  CHECK(profiles["strata"].size() == 4);
  CHECK(profiles["strata"][0]["covariate_means"].contains("x1"));

  auto wrong = draws;
  wrong.names.pop_back();
  wrong.values.resize(wrong.names.size() * wrong.size());
  CHECK_THROWS_AS(compute_estimands(data, wrong, layout, req), ValidationError);
}

TEST_CASE("strata nobody belongs to are reported as missing") {
  StudyBuilder b;
  b.add_class("A", 3).add_class("B", 3);
  for (int i = 0; i < 6; ++i) b.add_student("s" + std::to_string(i), i < 3 ? "A" : "B", 0, i % 3);
  b.edge("s0", "s1").edge("s3", "s4");
  const auto data = b.build();
  const auto layout = ParameterLayout::for_study(data);
  Rng rng = make_rng(40, 0);
  std::vector<Parameters> rows;
  for (int d = 0; d < 5; ++d) rows.push_back(random_parameters(layout, rng));
  const auto est = compute_estimands(data, draws_from(rows, data), layout, {});
  for (std::size_t d = 0; d < est.n_draws; ++d) CHECK(est.shares[d][index(Stratum::NeverTaker)] == 1.0);
  CHECK(std::isnan(est.value(0, Stratum::AlwaysTaker, 0)));
  TempDir dir("allnt");
  write_estimands_csv(est, dir / "e.csv");
  write_homophily_csv(est, dir / "h.csv");
  const auto text = read_text(dir / "e.csv");
  CHECK(text.find("111,PCE,\"PCE(2 vs 1)\",2,1,,,,,,,,,,,0,5\n") != std::string::npos);
}
