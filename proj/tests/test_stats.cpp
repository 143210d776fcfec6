#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "exposome/core.hpp"
#include "exposome/errors.hpp"
#include "exposome/stats.hpp"
#include "helpers.hpp"

using namespace exposome;
using testutil::balanced_anova;
using testutil::fixture_groups;
using testutil::spec_from_groups;

namespace {

stats::LmmSpec shuffled(const stats::LmmSpec& spec, Rng& rng) {
  std::vector<size_t> order(spec.y.size());
  std::iota(order.begin(), order.end(), 0);
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
  stats::LmmSpec out;
  out.x_cols.resize(spec.x_cols.size());
  for (size_t idx : order) {
    out.y.push_back(spec.y[idx]);
    out.group.push_back(spec.group[idx]);
    for (size_t c = 0; c < spec.x_cols.size(); ++c)
      out.x_cols[c].push_back(spec.x_cols[c][idx]);
  }
  return out;
}

}  // namespace

TEST_CASE("reml deviance at theta 0 equals the fixed-effects formula") {
  const auto spec = spec_from_groups(fixture_groups());
  // Independent OLS-REML computation for the intercept-only model.
  const size_t n = spec.y.size();
  const double mean = std::accumulate(spec.y.begin(), spec.y.end(), 0.0) / n;
  double rss = 0.0;
  for (double v : spec.y) rss += (v - mean) * (v - mean);
  const double df = static_cast<double>(n) - 1.0;
  const double sigma2 = rss / df;
  const double expected = df * (1.0 + std::log(2.0 * 3.14159265358979323846) +
                                std::log(sigma2)) +
                          std::log(static_cast<double>(n));
  CHECK(stats::reml_deviance(0.0, spec) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("reml deviance is minimized near the ANOVA theta on the fixture") {
  const auto groups = fixture_groups();
  const auto spec = spec_from_groups(groups);
  const auto oracle = balanced_anova(groups);
  CHECK(oracle.msw == doctest::Approx(0.5));
  CHECK(oracle.tau00 == doctest::Approx(3.75));
  const double theta_star = std::sqrt(oracle.tau00 / oracle.msw);  // sqrt(7.5)

  const double dev_star = stats::reml_deviance(theta_star, spec);
  for (double delta : {0.05, 0.2, 1.0}) {
    CHECK(stats::reml_deviance(theta_star + delta, spec) > dev_star);
    CHECK(stats::reml_deviance(std::max(0.0, theta_star - delta), spec) > dev_star);
  }
}

TEST_CASE("reml deviance is unimodal on a 200-point log grid") {
  const auto spec = spec_from_groups(fixture_groups());
  std::vector<double> thetas, devs;
  for (int i = 0; i < 200; ++i) {
    const double theta = std::pow(10.0, -2.0 + 4.0 * i / 199.0);
    thetas.push_back(theta);
    devs.push_back(stats::reml_deviance(theta, spec));
  }
  // Strictly decreasing to the argmin, strictly increasing after it.
  const size_t argmin =
      std::min_element(devs.begin(), devs.end()) - devs.begin();
  for (size_t i = 0; i + 1 <= argmin; ++i) CHECK(devs[i] > devs[i + 1]);
  for (size_t i = argmin; i + 1 < devs.size(); ++i) CHECK(devs[i] < devs[i + 1]);
}

TEST_CASE("fit matches the balanced ANOVA closed form on the fixture") {
  const auto fit = stats::fit_random_intercept(spec_from_groups(fixture_groups()));
  CHECK(fit.beta[0] == doctest::Approx(3.5).epsilon(1e-10));
  CHECK(fit.sigma2 == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(fit.tau00 == doctest::Approx(3.75).epsilon(1e-8));
  CHECK(fit.icc == doctest::Approx(3.75 / 4.25).epsilon(1e-8));
  CHECK(fit.icc == doctest::Approx(fit.tau00 / (fit.tau00 + fit.sigma2)));
  CHECK(fit.converged);
  CHECK_FALSE(fit.boundary);
  CHECK(fit.n_obs == 6);
  CHECK(fit.n_groups == 3);
  // SE of the grand mean in a balanced design: sqrt(MSB / (g*n)).
  CHECK(fit.se[0] == doctest::Approx(std::sqrt(8.0 / 6.0)).epsilon(1e-6));
}

TEST_CASE("balanced ANOVA equivalence holds across seeded datasets") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    Rng rng(seed);
    const int g = 5 + rng.uniform_int(0, 10);
    const int n = 4 + rng.uniform_int(0, 10);
    std::vector<std::vector<double>> groups(g, std::vector<double>(n));
    for (auto& group : groups) {
      const double b = rng.normal(0.0, 1.5);  // generous between-variance
      for (auto& v : group) v = 10.0 + b + rng.normal(0.0, 1.0);
    }
    const auto oracle = balanced_anova(groups);
    if (!oracle.interior) continue;
    const auto fit = stats::fit_random_intercept(spec_from_groups(groups));
    CHECK(fit.sigma2 == doctest::Approx(oracle.msw).epsilon(1e-8));
    CHECK(fit.tau00 == doctest::Approx(oracle.tau00).epsilon(1e-8));
    CHECK(fit.beta[0] == doctest::Approx(oracle.grand_mean).epsilon(1e-10));
  }
}

TEST_CASE("equal group means collapse to the boundary and OLS") {
  // Identical values in every group: no between-group variance at all.
  std::vector<std::vector<double>> groups = {{1.0, 5.0, 3.0},
                                             {1.0, 5.0, 3.0},
                                             {1.0, 5.0, 3.0},
                                             {1.0, 5.0, 3.0}};
  const auto spec = spec_from_groups(groups);
  const auto fit = stats::fit_random_intercept(spec);
  CHECK(fit.boundary);
  CHECK(fit.tau00 == doctest::Approx(0.0));
  // OLS quantities computed independently.
  const size_t n = spec.y.size();
  const double mean = std::accumulate(spec.y.begin(), spec.y.end(), 0.0) / n;
  double rss = 0.0;
  for (double v : spec.y) rss += (v - mean) * (v - mean);
  const double sigma2_ols = rss / (n - 1.0);
  CHECK(fit.beta[0] == doctest::Approx(mean).epsilon(1e-12));
  CHECK(fit.sigma2 == doctest::Approx(sigma2_ols).epsilon(1e-10));
  CHECK(fit.se[0] == doctest::Approx(std::sqrt(sigma2_ols / n)).epsilon(1e-10));
  // Boundary fits fall back to the residual df.
  CHECK(fit.satterthwaite_df[0] == doctest::Approx(static_cast<double>(n - 1)));
  CHECK(fit.df_fallback);
}

TEST_CASE("row permutation changes nothing") {
  Rng rng(77);
  stats::LmmSpec spec;
  std::vector<double> slope_col;
  for (int grp = 0; grp < 12; ++grp) {
    const double b = rng.normal(0.0, 1.0);
    for (int i = 0; i < 8; ++i) {
      const double x = rng.normal(0.0, 1.0);
      spec.y.push_back(1.0 + 0.5 * x + b + rng.normal(0.0, 0.8));
      spec.group.push_back(grp);
      slope_col.push_back(x);
    }
  }
  spec.x_cols = {std::vector<double>(spec.y.size(), 1.0), slope_col};
  const auto fit_a = stats::fit_random_intercept(spec);
  const auto fit_b = stats::fit_random_intercept(shuffled(spec, rng));
  CHECK(fit_b.sigma2 == doctest::Approx(fit_a.sigma2).epsilon(1e-12));
  CHECK(fit_b.tau00 == doctest::Approx(fit_a.tau00).epsilon(1e-10));
  for (size_t c = 0; c < fit_a.beta.size(); ++c) {
    CHECK(fit_b.beta[c] == doctest::Approx(fit_a.beta[c]).epsilon(1e-10));
    CHECK(fit_b.se[c] == doctest::Approx(fit_a.se[c]).epsilon(1e-10));
  }
}

TEST_CASE("centering the predictor moves only intercept and trait terms") {
  Rng rng(99);
  std::vector<std::string> ids;
  std::vector<double> x_raw, y;
  for (int grp = 0; grp < 15; ++grp) {
    const double b = rng.normal(0.0, 1.0);
    const double trait = rng.uniform(1.0, 6.0);
    for (int i = 0; i < 10; ++i) {
      const double x = trait + rng.normal(0.0, 1.0);
      ids.push_back("P" + std::to_string(grp));
      x_raw.push_back(x);
      y.push_back(0.7 + 1.3 * x + b + rng.normal(0.0, 0.5));
    }
  }
  std::vector<std::optional<double>> x_opt(x_raw.begin(), x_raw.end());
  const auto centered = core::person_center(ids, x_opt);

  std::size_t n_groups = 0;
  const auto group = stats::make_group_index(ids, &n_groups);

  stats::LmmSpec raw_spec;  // y ~ 1 + trait + raw x
  stats::LmmSpec centered_spec;  // y ~ 1 + trait + state
  raw_spec.y = y;
  centered_spec.y = y;
  raw_spec.group = group;
  centered_spec.group = group;
  std::vector<double> ones(y.size(), 1.0), trait_col(y.size()), state_col(y.size());
  for (size_t i = 0; i < y.size(); ++i) {
    trait_col[i] = *centered.trait_row[i];
    state_col[i] = *centered.state[i];
  }
  raw_spec.x_cols = {ones, trait_col, x_raw};
  centered_spec.x_cols = {ones, trait_col, state_col};

  const auto fit_raw = stats::fit_random_intercept(raw_spec);
  const auto fit_centered = stats::fit_random_intercept(centered_spec);
  // state = x - trait is an affine reparameterization: the x/state slope is
  // unchanged, the trait column absorbs the difference.
  CHECK(fit_centered.beta[2] == doctest::Approx(fit_raw.beta[2]).epsilon(1e-10));
  CHECK(fit_centered.sigma2 == doctest::Approx(fit_raw.sigma2).epsilon(1e-10));
  CHECK(fit_centered.beta[1] ==
        doctest::Approx(fit_raw.beta[1] + fit_raw.beta[2]).epsilon(1e-8));
}

TEST_CASE("satterthwaite df on a balanced design approaches g - 1") {
  Rng rng(123);
  const int g = 12, n = 6;
  std::vector<std::vector<double>> groups(g, std::vector<double>(n));
  for (auto& group : groups) {
    const double b = rng.normal(0.0, 2.0);
    for (auto& v : group) v = 5.0 + b + rng.normal(0.0, 1.0);
  }
  const auto spec = spec_from_groups(groups);
  const auto fit = stats::fit_random_intercept(spec);
  REQUIRE_FALSE(fit.boundary);
  CHECK(fit.satterthwaite_df[0] ==
        doctest::Approx(static_cast<double>(g - 1)).epsilon(0.02));
}

TEST_CASE("rank-deficient design raises a typed error") {
  stats::LmmSpec spec;
  spec.y = {1, 2, 3, 4, 5, 6};
  spec.group = {0, 0, 0, 1, 1, 1};
  std::vector<double> ones(6, 1.0);
  spec.x_cols = {ones, ones};  // duplicated intercept
  CHECK_THROWS_AS(stats::fit_random_intercept(spec), DegenerateError);
}

TEST_CASE("nakagawa r2") {
  SUBCASE("intercept-only: marginal 0, conditional = ICC") {
    const auto fit = stats::fit_random_intercept(spec_from_groups(fixture_groups()));
    CHECK(fit.r2_marginal == doctest::Approx(0.0));
    CHECK(fit.r2_conditional == doctest::Approx(fit.icc).epsilon(1e-10));
  }
  SUBCASE("tau00 = 0: conditional equals marginal") {
    stats::LmmSpec spec;
    spec.y = {1, 2, 1.5, 2.5, 1.2, 2.2};
    spec.x_cols = {{1, 1, 1, 1, 1, 1}, {0, 1, 0, 1, 0, 1}};
    const auto r2 = stats::nakagawa_r2(spec, {1.0, 1.0}, 0.5, 0.0);
    CHECK(r2.marginal == doctest::Approx(r2.conditional));
  }
  SUBCASE("hand-computed ratios") {
    stats::LmmSpec spec;
    spec.y = {0, 0, 0, 0};  // irrelevant for the formula
    spec.x_cols = {{1, 1, 1, 1}, {0, 1, 2, 3}};
    // beta = (0, 1): fitted = (0,1,2,3), population variance = 1.25.
    const auto r2 = stats::nakagawa_r2(spec, {0.0, 1.0}, 2.0, 0.75);
    CHECK(r2.marginal == doctest::Approx(1.25 / (1.25 + 0.75 + 2.0)));
    CHECK(r2.conditional == doctest::Approx((1.25 + 0.75) / (1.25 + 0.75 + 2.0)));
    CHECK(r2.marginal <= r2.conditional);
    CHECK(r2.conditional <= 1.0);
  }
}

TEST_CASE("icc matches the published two-decimal values") {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", stats::icc(3.59, 0.76));
  CHECK(std::string(buf) == "0.17");
  std::snprintf(buf, sizeof buf, "%.2f", stats::icc(6.35, 1.47));
  CHECK(std::string(buf) == "0.19");
  CHECK(stats::icc(1.0, 0.0) == doctest::Approx(0.0));
  CHECK_THROWS_AS(stats::icc(0.0, 1.0), DegenerateError);
}

TEST_CASE("pearson") {
  SUBCASE("perfect linearity") {
    const auto r = stats::pearson({1, 2, 3}, {2, 4, 6});
    REQUIRE(r.defined);
    CHECK(r.r == doctest::Approx(1.0));
    CHECK(r.p == doctest::Approx(0.0));
  }
  SUBCASE("reflection") {
    const auto r = stats::pearson({1, 2, 3}, {3, 2, 1});
    REQUIRE(r.defined);
    CHECK(r.r == doctest::Approx(-1.0));
  }
  SUBCASE("zero variance is a typed undefined result") {
    const auto r = stats::pearson({1, 1, 1, 1}, {1, 2, 3, 4});
    CHECK_FALSE(r.defined);
  }
  SUBCASE("fewer than 3 pairs throws") {
    CHECK_THROWS_AS(stats::pearson({1, 2}, {1, 2}), DegenerateError);
  }
  SUBCASE("p agrees with a quadrature oracle") {
    // Construct a sample with moderate correlation and check the p-value
    // against direct integration of the t density.
    Rng rng(5);
    std::vector<double> x, y;
    for (int i = 0; i < 24; ++i) {
      const double v = rng.normal();
      x.push_back(v);
      y.push_back(0.6 * v + rng.normal());
    }
    const auto r = stats::pearson(x, y);
    REQUIRE(r.defined);
    const double t = r.r * std::sqrt((24.0 - 2.0) / (1.0 - r.r * r.r));
    const double oracle = testutil::t_two_sided_p_quadrature(t, 22.0);
    CHECK(r.p == doctest::Approx(oracle).epsilon(1e-5));
  }
}

TEST_CASE("student t helpers") {
  // Quadrature oracle at assorted (t, df).
  for (const auto& [t, df] : std::vector<std::pair<double, double>>{
           {1.0, 5.0}, {2.0, 10.0}, {2.5, 30.0}, {0.5, 100.0}, {3.2, 7.0}}) {
    const double oracle = testutil::t_two_sided_p_quadrature(t, df);
    CHECK(stats::student_t_two_sided_p(t, df) ==
          doctest::Approx(oracle).epsilon(1e-6));
  }
  // Quantile round trip and the large-df normal limit.
  for (double df : {3.0, 11.0, 48.0, 2500.0}) {
    const double q = stats::student_t_quantile(0.025, df);
    CHECK(stats::student_t_two_sided_p(q, df) == doctest::Approx(0.05).epsilon(1e-9));
  }
  CHECK(stats::student_t_quantile(0.025, 1e6) == doctest::Approx(1.95996).epsilon(1e-4));
}

TEST_CASE("cronbach alpha") {
  SUBCASE("identical columns give alpha 1") {
    std::vector<std::vector<double>> m;
    for (int i = 0; i < 10; ++i)
      m.push_back({static_cast<double>(i), static_cast<double>(i),
                   static_cast<double>(i)});
    const auto alpha = stats::cronbach_alpha(m);
    REQUIRE(alpha.has_value());
    CHECK(*alpha == doctest::Approx(1.0));
  }
  SUBCASE("hand-computed 3x2 example") {
    const auto alpha = stats::cronbach_alpha({{1, 2}, {2, 3}, {3, 5}});
    REQUIRE(alpha.has_value());
    CHECK(*alpha == doctest::Approx(18.0 / 19.0));
  }
  SUBCASE("independent columns give alpha near 0") {
    Rng rng(11);
    std::vector<std::vector<double>> m;
    for (int i = 0; i < 20000; ++i) m.push_back({rng.normal(), rng.normal()});
    const auto alpha = stats::cronbach_alpha(m);
    REQUIRE(alpha.has_value());
    CHECK(std::abs(*alpha) < 0.05);
  }
  SUBCASE("zero total variance is undefined") {
    CHECK_FALSE(stats::cronbach_alpha({{1, 1}, {1, 1}}).has_value());
  }
}

TEST_CASE("binomial exceedance") {
  CHECK(stats::binomial_exceedance(0, 20) == doctest::Approx(1.0));
  CHECK(stats::binomial_exceedance(20, 20, 0.05) ==
        doctest::Approx(std::pow(0.05, 20)).epsilon(1e-10));
  // n=20, k=3, p0=0.05 against the direct-summation oracle.
  const double oracle = testutil::binomial_tail_direct(3, 20, 0.05);
  CHECK(oracle == doctest::Approx(0.07548367).epsilon(1e-6));  // frozen
  CHECK(stats::binomial_exceedance(3, 20, 0.05) ==
        doctest::Approx(oracle).epsilon(1e-12));
  // Against the oracle across k, and monotone in k.
  double prev = 2.0;
  for (int k = 0; k <= 12; ++k) {
    const double p = stats::binomial_exceedance(k, 12, 0.3);
    CHECK(p == doctest::Approx(testutil::binomial_tail_direct(k, 12, 0.3))
                   .epsilon(1e-12));
    CHECK(p < prev + 1e-15);
    prev = p;
  }
  CHECK_THROWS_AS(stats::binomial_exceedance(5, 4), DegenerateError);
}

TEST_CASE("simulator recovery: fitted components near the generating truth") {
  core::SimulationConfig config;
  config.n_participants = 100;
  config.days = 5;
  config.alarms_per_day = 5;  // 25 obs per participant
  config.tau00_true = 1.0;
  config.sigma2_true = 4.0;
  config.beta_true = {2.0, 0.5};
  config.seed = 2024;
  const auto sim = core::simulate_study(config);

  stats::LmmSpec spec;
  spec.y = sim.truth.y;
  std::size_t n_groups = 0;
  spec.group = stats::make_group_index(sim.truth.participant, &n_groups);
  spec.x_cols = {std::vector<double>(spec.y.size(), 1.0), sim.truth.x_columns[0]};
  const auto fit = stats::fit_random_intercept(spec);
  CHECK(n_groups == 100);
  CHECK(std::abs(fit.tau00 - 1.0) < 0.2);
  CHECK(std::abs(fit.sigma2 - 4.0) < 0.8);
  CHECK(std::abs(fit.beta[1] - 0.5) < 0.1);
  // The state slope df should be near n - p, the trait-style intercept df
  // far smaller; both inside [1, n-p].
  CHECK(fit.satterthwaite_df[1] > 100.0);
  CHECK(fit.satterthwaite_df[1] <= static_cast<double>(fit.n_obs - 2));
}
