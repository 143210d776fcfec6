#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace exposome::stats {

// --- random-intercept linear mixed model -------------------------------------

// Outcome, fixed design (column-major; x_cols[0] must be the all-ones
// intercept), and one grouping factor. Group indices must be 0..n_groups-1
// with every group populated; make_group_index builds them from labels.
struct LmmSpec {
  std::vector<double> y;
  std::vector<std::vector<double>> x_cols;
  std::vector<std::string> x_names;  // optional; sized like x_cols when set
  std::vector<int> group;
};

std::vector<int> make_group_index(const std::vector<std::string>& labels,
                                  std::size_t* n_groups);

struct LmmFit {
  std::vector<double> beta;
  std::vector<double> se;
  std::vector<double> satterthwaite_df;
  std::vector<double> t_value;
  std::vector<double> p_value;   // two-sided
  std::vector<double> ci_lo;     // 95%
  std::vector<double> ci_hi;
  double sigma2 = 0.0;           // residual variance
  double tau00 = 0.0;            // intercept variance
  double theta = 0.0;            // tau/sigma ratio at the optimum
  double icc = 0.0;              // tau00 / (tau00 + sigma2)
  double r2_marginal = 0.0;
  double r2_conditional = 0.0;
  std::size_t n_obs = 0;
  std::size_t n_groups = 0;
  double reml_deviance = 0.0;    // at the optimum
  bool converged = false;
  bool boundary = false;         // theta hit 0
  bool df_fallback = false;      // Satterthwaite fell back to n - p
  std::vector<std::string> x_names;
};

// -2 * restricted log-likelihood profiled over beta and sigma^2, as a
// function of theta = tau/sigma >= 0. Group-wise rank-one updates keep the
// evaluation O(g * p^2) after an O(n * p^2) precomputation; no N x N matrix
// is ever formed. Throws DegenerateError for rank-deficient X.
double reml_deviance(double theta, const LmmSpec& spec);

// Reusable evaluator for dense sweeps (grids, profiling): the sufficient
// statistics are computed once at construction.
class RemlObjective {
 public:
  explicit RemlObjective(const LmmSpec& spec);
  ~RemlObjective();
  RemlObjective(RemlObjective&&) noexcept;
  double operator()(double theta) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Unprofiled -2 restricted log-likelihood in the (sigma2, tau00)
// parameterization; the Satterthwaite machinery differentiates this.
double reml_deviance_components(double sigma2, double tau00,
                                const LmmSpec& spec);

// Var(c' beta_hat) as a function of the variance components.
double coef_variance(const LmmSpec& spec, double sigma2, double tau00,
                     const std::vector<double>& contrast);

// Profiled REML fit: theta by a coarse log-grid bracket plus Brent
// refinement on [0, 1e4] (tolerance 1e-9 in theta), beta by GLS at the
// optimum, Satterthwaite df / t / p / CI95 per coefficient, ICC and
// Nakagawa R2. A boundary solution (theta = 0) is flagged, not an error.
LmmFit fit_random_intercept(const LmmSpec& spec);

// Satterthwaite df for one contrast: 2 g^2 / Var(g) with g = Var(c'beta) at
// the fitted components, gradient by central differences (relative step
// 1e-5) and Var(g) from the inverse REML information (finite-difference
// Hessian of the deviance in (sigma2, tau00)).
double satterthwaite_df(const LmmSpec& spec, const LmmFit& fit,
                        const std::vector<double>& contrast,
                        bool* fell_back = nullptr);

// sigma2_f = population variance of X*beta; marginal R2 =
// sigma2_f / (sigma2_f + tau00 + sigma2), conditional adds tau00 on top.
struct R2 {
  double marginal = 0.0;
  double conditional = 0.0;
};
R2 nakagawa_r2(const LmmSpec& spec, const std::vector<double>& beta,
               double sigma2, double tau00);

double icc(double sigma2, double tau00);

// --- scalar minimization ------------------------------------------------------

struct BrentResult {
  double x = 0.0;
  double f = 0.0;
  int evaluations = 0;
  bool converged = false;
};

// Brent's method (golden section + parabolic steps) on [a, b].
template <typename F>
BrentResult brent_minimize(F&& f, double a, double b, double tol,
                           int max_iter = 200);

// --- classical tests ----------------------------------------------------------

struct PearsonResult {
  bool defined = false;  // false when either series has zero variance
  double r = 0.0;
  double p = 1.0;
  std::size_t n = 0;
};

// Sample Pearson correlation with a two-sided p from t = r*sqrt((n-2)/(1-r^2))
// on n-2 df. Requires n >= 3 pairs (DegenerateError otherwise).
PearsonResult pearson(const std::vector<double>& x,
                      const std::vector<double>& y);

// alpha = k/(k-1) * (1 - sum(item variances) / variance(row sums)); rows =
// persons, columns = items. nullopt when the total variance is zero.
std::optional<double> cronbach_alpha(
    const std::vector<std::vector<double>>& items_by_person);

// One-sided exact binomial tail P(X >= k), X ~ Binomial(n, p0), summed in
// log space.
double binomial_exceedance(int k_hits, int n, double p0 = 0.05);

// --- distribution helpers -------------------------------------------------------

double incomplete_beta(double a, double b, double x);  // regularized I_x(a,b)
double student_t_two_sided_p(double t, double df);
double student_t_quantile(double upper_tail_prob, double df);  // e.g. 0.025

// --- implementation of the template ------------------------------------------

template <typename F>
BrentResult brent_minimize(F&& f, double a, double b, double tol,
                           int max_iter) {
  // Classic localmin scheme; tol acts as an absolute floor on the bracket.
  const double golden = 0.3819660112501051;
  double x = a + golden * (b - a);
  double w = x, v = x;
  double fx = f(x);
  double fw = fx, fv = fx;
  double d = 0.0, e = 0.0;
  BrentResult out;
  out.evaluations = 1;
  for (int iter = 0; iter < max_iter; ++iter) {
    const double m = 0.5 * (a + b);
    const double tol1 = tol * std::abs(x) + tol;
    const double tol2 = 2.0 * tol1;
    if (std::abs(x - m) <= tol2 - 0.5 * (b - a)) {
      out.converged = true;
      break;
    }
    bool take_golden = true;
    if (std::abs(e) > tol1) {
      // Parabola through x, v, w.
      const double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      const double e_old = e;
      e = d;
      if (std::abs(p) < std::abs(0.5 * q * e_old) && p > q * (a - x) &&
          p < q * (b - x)) {
        d = p / q;
        const double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = (x < m) ? tol1 : -tol1;
        take_golden = false;
      }
    }
    if (take_golden) {
      e = (x < m) ? b - x : a - x;
      d = golden * e;
    }
    const double u = (std::abs(d) >= tol1) ? x + d : x + (d > 0 ? tol1 : -tol1);
    const double fu = f(u);
    ++out.evaluations;
    if (fu <= fx) {
      if (u < x) b = x; else a = x;
      v = w; fv = fw;
      w = x; fw = fx;
      x = u; fx = fu;
    } else {
      if (u < x) a = u; else b = u;
      if (fu <= fw || w == x) {
        v = w; fv = fw;
        w = u; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  out.x = x;
  out.f = fx;
  return out;
}

}  // namespace exposome::stats
