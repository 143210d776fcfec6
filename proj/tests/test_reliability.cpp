#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "exposome/errors.hpp"
#include "exposome/reliability.hpp"
#include "exposome/rng.hpp"
#include "helpers.hpp"

using namespace exposome;

namespace {

// y_pti = person + time + item + person_time + person_item + residual, each
// drawn from the named variance.
std::vector<std::vector<std::vector<double>>> simulate_cells(
    int np, int nt, int ni, double s_p, double s_t, double s_i, double s_pt,
    double s_pi, double s_e, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> a_p(np), b_t(nt), c_i(ni);
  for (auto& v : a_p) v = s_p > 0 ? rng.normal(0.0, std::sqrt(s_p)) : 0.0;
  for (auto& v : b_t) v = s_t > 0 ? rng.normal(0.0, std::sqrt(s_t)) : 0.0;
  for (auto& v : c_i) v = s_i > 0 ? rng.normal(0.0, std::sqrt(s_i)) : 0.0;
  std::vector<std::vector<double>> ab(np, std::vector<double>(nt, 0.0));
  std::vector<std::vector<double>> ac(np, std::vector<double>(ni, 0.0));
  for (auto& row : ab)
    for (auto& v : row) v = s_pt > 0 ? rng.normal(0.0, std::sqrt(s_pt)) : 0.0;
  for (auto& row : ac)
    for (auto& v : row) v = s_pi > 0 ? rng.normal(0.0, std::sqrt(s_pi)) : 0.0;
  std::vector<std::vector<std::vector<double>>> data(
      np, std::vector<std::vector<double>>(nt, std::vector<double>(ni)));
  for (int p = 0; p < np; ++p)
    for (int t = 0; t < nt; ++t)
      for (int i = 0; i < ni; ++i)
        data[p][t][i] = 10.0 + a_p[p] + b_t[t] + c_i[i] + ab[p][t] + ac[p][i] +
                        (s_e > 0 ? rng.normal(0.0, std::sqrt(s_e)) : 0.0);
  return data;
}

}  // namespace

TEST_CASE("direct-formula oracle values for the reference components") {
  // R_Cn = s_PT / (s_PT + s_e/m) with s_PT = s_e = 1, m = 5.
  const double r_cn = 1.0 / (1.0 + 1.0 / 5.0);
  CHECK(r_cn == doctest::Approx(0.8333333333));
  // R_KRn = s_P / (s_P + s_PT/k + s_e/(k m)) with s_P = 1, k = 49.
  const double r_krn = 1.0 / (1.0 + 1.0 / 49.0 + 1.0 / (49.0 * 5.0));
  CHECK(r_krn == doctest::Approx(0.9760956175).epsilon(1e-9));
}

TEST_CASE("estimator lands on the generating components at scale") {
  const auto data =
      simulate_cells(500, 49, 5, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 4242);
  const auto result = stats::multilevel_reliability(data);
  CHECK(result.components.person == doctest::Approx(1.0).epsilon(0.15));
  CHECK(result.components.person_time == doctest::Approx(1.0).epsilon(0.05));
  CHECK(result.components.residual == doctest::Approx(1.0).epsilon(0.02));
  CHECK(std::abs(result.r_cn - 0.8333333) < 0.03);
  CHECK(std::abs(result.r_krn - 0.9760956) < 0.02);
  CHECK_FALSE(result.unbalanced_warning);
}

TEST_CASE("noiseless change has R_Cn = 1") {
  const auto data = simulate_cells(40, 10, 4, 1.0, 0.0, 0.0, 1.5, 0.0, 0.0, 7);
  const auto result = stats::multilevel_reliability(data);
  CHECK(result.r_cn == doctest::Approx(1.0));
  CHECK(result.components.residual == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("all six components recovered on a full simulation") {
  const auto data =
      simulate_cells(300, 30, 6, 2.0, 0.5, 0.3, 1.0, 0.7, 1.0, 1234);
  const auto result = stats::multilevel_reliability(data);
  CHECK(result.components.person == doctest::Approx(2.0).epsilon(0.25));
  CHECK(result.components.time == doctest::Approx(0.5).epsilon(0.45));
  CHECK(result.components.item == doctest::Approx(0.3).epsilon(0.75));
  CHECK(result.components.person_time == doctest::Approx(1.0).epsilon(0.1));
  CHECK(result.components.person_item == doctest::Approx(0.7).epsilon(0.15));
  CHECK(result.components.residual == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("degenerate dimensions raise typed errors") {
  using Cells = std::vector<std::vector<std::vector<double>>>;
  CHECK_THROWS_AS(stats::multilevel_reliability(Cells{}), DegenerateError);
  const Cells one_person(1, std::vector<std::vector<double>>(3, {1.0, 2.0}));
  CHECK_THROWS_AS(stats::multilevel_reliability(one_person), DegenerateError);
  const Cells one_time(3, std::vector<std::vector<double>>(1, {1.0, 2.0}));
  CHECK_THROWS_AS(stats::multilevel_reliability(one_time), DegenerateError);
  const Cells one_item(3, std::vector<std::vector<double>>(3, {1.0}));
  CHECK_THROWS_AS(stats::multilevel_reliability(one_item), DegenerateError);
}

TEST_CASE("heavy missingness flips the unbalance warning") {
  auto data = simulate_cells(30, 10, 4, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 88);
  Rng rng(3);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (auto& person : data)
    for (auto& times : person)
      for (auto& v : times)
        if (rng.uniform() < 0.25) v = nan;
  const auto result = stats::multilevel_reliability(data);
  CHECK(result.unbalanced_warning);
  CHECK(result.missing_fraction == doctest::Approx(0.25).epsilon(0.15));
  // Available-case estimates stay in the right region.
  CHECK(result.r_cn > 0.5);
  CHECK(result.r_cn < 1.0);
}

TEST_CASE("mild missingness keeps estimates close to the balanced ones") {
  auto data = simulate_cells(200, 20, 5, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 55);
  const auto balanced = stats::multilevel_reliability(data);
  Rng rng(4);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (auto& person : data)
    for (auto& times : person)
      for (auto& v : times)
        if (rng.uniform() < 0.05) v = nan;
  const auto sparse = stats::multilevel_reliability(data);
  CHECK_FALSE(sparse.unbalanced_warning);
  CHECK(sparse.r_cn == doctest::Approx(balanced.r_cn).epsilon(0.05));
  CHECK(sparse.r_krn == doctest::Approx(balanced.r_krn).epsilon(0.02));
}
