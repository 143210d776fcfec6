#include "exposome/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "exposome/errors.hpp"

namespace exposome::stats {

namespace {

constexpr double kThetaUpper = 1e4;
constexpr double kThetaTol = 1e-9;
constexpr double kBoundaryTheta = 1e-6;
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// p x p row-major SPD helpers; p stays small (intercept + a few predictors).
struct SmallMatrix {
  int p = 0;
  std::vector<double> a;  // row-major

  double& at(int i, int j) { return a[static_cast<size_t>(i) * p + j]; }
  double at(int i, int j) const { return a[static_cast<size_t>(i) * p + j]; }
};

// In-place Cholesky, lower triangle. Returns false when a pivot collapses
// relative to the original diagonal (rank deficiency).
bool cholesky(SmallMatrix& m) {
  const int p = m.p;
  double max_diag = 0.0;
  for (int i = 0; i < p; ++i) max_diag = std::max(max_diag, std::abs(m.at(i, i)));
  if (max_diag <= 0.0) return false;
  for (int j = 0; j < p; ++j) {
    double d = m.at(j, j);
    for (int k = 0; k < j; ++k) d -= m.at(j, k) * m.at(j, k);
    if (d <= 1e-12 * max_diag) return false;
    const double root = std::sqrt(d);
    m.at(j, j) = root;
    for (int i = j + 1; i < p; ++i) {
      double s = m.at(i, j);
      for (int k = 0; k < j; ++k) s -= m.at(i, k) * m.at(j, k);
      m.at(i, j) = s / root;
    }
  }
  return true;
}

// Solve L L' x = b given the Cholesky factor in the lower triangle.
std::vector<double> chol_solve(const SmallMatrix& l, std::vector<double> b) {
  const int p = l.p;
  for (int i = 0; i < p; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= l.at(i, k) * b[k];
    b[i] = s / l.at(i, i);
  }
  for (int i = p - 1; i >= 0; --i) {
    double s = b[i];
    for (int k = i + 1; k < p; ++k) s -= l.at(k, i) * b[k];
    b[i] = s / l.at(i, i);
  }
  return b;
}

double chol_logdet(const SmallMatrix& l) {
  double sum = 0.0;
  for (int i = 0; i < l.p; ++i) sum += std::log(l.at(i, i));
  return 2.0 * sum;
}

// Sufficient statistics shared by every deviance evaluation of one spec.
struct Precomp {
  size_t n = 0;
  int p = 0;
  size_t g = 0;
  std::vector<int> group_size;
  SmallMatrix xtx;                        // X'X
  std::vector<double> xty;                // X'y
  double yty = 0.0;
  std::vector<std::vector<double>> group_x_sum;  // per group: column sums
  std::vector<double> group_y_sum;
};

void validate_spec(const LmmSpec& spec) {
  const size_t n = spec.y.size();
  if (n == 0) throw DegenerateError("lmm: empty outcome vector");
  if (spec.x_cols.empty()) throw DegenerateError("lmm: no design columns");
  for (const auto& col : spec.x_cols)
    if (col.size() != n)
      throw DegenerateError("lmm: design column length mismatch");
  if (spec.group.size() != n)
    throw DegenerateError("lmm: group vector length mismatch");
  for (double v : spec.x_cols[0])
    if (v != 1.0)
      throw DegenerateError("lmm: first design column must be the intercept");
  if (!spec.x_names.empty() && spec.x_names.size() != spec.x_cols.size())
    throw DegenerateError("lmm: x_names size mismatch");
}

Precomp precompute(const LmmSpec& spec) {
  validate_spec(spec);
  Precomp pc;
  pc.n = spec.y.size();
  pc.p = static_cast<int>(spec.x_cols.size());
  int max_group = -1;
  for (int gidx : spec.group) {
    if (gidx < 0) throw DegenerateError("lmm: negative group index");
    max_group = std::max(max_group, gidx);
  }
  pc.g = static_cast<size_t>(max_group) + 1;
  pc.group_size.assign(pc.g, 0);
  for (int gidx : spec.group) ++pc.group_size[gidx];
  for (size_t j = 0; j < pc.g; ++j)
    if (pc.group_size[j] == 0)
      throw DegenerateError("lmm: empty group " + std::to_string(j));
  if (pc.g < 2) throw DegenerateError("lmm: need at least 2 groups");
  if (pc.n <= static_cast<size_t>(pc.p))
    throw DegenerateError("lmm: need more observations than fixed effects");

  pc.xtx.p = pc.p;
  pc.xtx.a.assign(static_cast<size_t>(pc.p) * pc.p, 0.0);
  pc.xty.assign(pc.p, 0.0);
  pc.group_x_sum.assign(pc.g, std::vector<double>(pc.p, 0.0));
  pc.group_y_sum.assign(pc.g, 0.0);
  for (size_t i = 0; i < pc.n; ++i) {
    const int gi = spec.group[i];
    const double yi = spec.y[i];
    pc.yty += yi * yi;
    pc.group_y_sum[gi] += yi;
    for (int a = 0; a < pc.p; ++a) {
      const double xa = spec.x_cols[a][i];
      pc.xty[a] += xa * yi;
      pc.group_x_sum[gi][a] += xa;
      for (int b = a; b < pc.p; ++b)
        pc.xtx.at(a, b) += xa * spec.x_cols[b][i];
    }
  }
  for (int a = 0; a < pc.p; ++a)
    for (int b = 0; b < a; ++b) pc.xtx.at(a, b) = pc.xtx.at(b, a);
  return pc;
}

struct ProfileEval {
  double deviance = 0.0;
  std::vector<double> beta;
  double sigma2 = 0.0;      // REML profile estimate at this theta
  double quad = 0.0;         // r' Lambda^-1 r
  double logdet_lambda = 0.0;
  double logdet_a = 0.0;
  SmallMatrix chol_a;        // factor of X' Lambda^-1 X
};

// Core evaluation at theta2 = theta^2 = tau00/sigma2. Lambda = I + theta2 Z Z'
// handled group-wise: Lambda_j^-1 = I - w_j J with w_j = theta2/(1+n_j theta2).
// With exact_residuals the quadratic form is accumulated from per-row
// residuals, which survives near-perfect fits; the shortcut
// y'L y - beta'u is O(g) and serves the optimizer's many evaluations.
ProfileEval profile_at(double theta2, const Precomp& pc, const LmmSpec& spec,
                       bool exact_residuals) {
  ProfileEval ev;
  SmallMatrix a = pc.xtx;
  std::vector<double> u = pc.xty;
  double y_quad = pc.yty;
  ev.logdet_lambda = 0.0;
  for (size_t j = 0; j < pc.g; ++j) {
    const double nj = pc.group_size[j];
    const double w = theta2 / (1.0 + nj * theta2);
    ev.logdet_lambda += std::log1p(nj * theta2);
    if (w == 0.0) continue;
    const auto& s = pc.group_x_sum[j];
    const double t = pc.group_y_sum[j];
    y_quad -= w * t * t;
    for (int r = 0; r < pc.p; ++r) {
      u[r] -= w * s[r] * t;
      for (int c = r; c < pc.p; ++c) a.at(r, c) -= w * s[r] * s[c];
    }
  }
  for (int r = 0; r < pc.p; ++r)
    for (int c = 0; c < r; ++c) a.at(r, c) = a.at(c, r);

  ev.chol_a = a;
  if (!cholesky(ev.chol_a))
    throw DegenerateError("lmm: rank-deficient fixed-effects design");
  ev.logdet_a = chol_logdet(ev.chol_a);
  ev.beta = chol_solve(ev.chol_a, u);

  double quad;
  if (exact_residuals) {
    quad = 0.0;
    std::vector<double> group_r_sum(pc.g, 0.0);
    for (size_t i = 0; i < pc.n; ++i) {
      double fitted = 0.0;
      for (int c = 0; c < pc.p; ++c) fitted += ev.beta[c] * spec.x_cols[c][i];
      const double r = spec.y[i] - fitted;
      quad += r * r;
      group_r_sum[spec.group[i]] += r;
    }
    for (size_t j = 0; j < pc.g; ++j) {
      const double nj = pc.group_size[j];
      const double w = theta2 / (1.0 + nj * theta2);
      quad -= w * group_r_sum[j] * group_r_sum[j];
    }
  } else {
    quad = y_quad;
    for (int c = 0; c < pc.p; ++c) quad -= ev.beta[c] * u[c];
  }

  // Perfect fits would send log(sigma2) to -inf; floor the quadratic form at
  // a scale-relative epsilon so such outcomes surface as p ~ 0 instead.
  const double scale = (pc.yty / static_cast<double>(pc.n)) + 1.0;
  quad = std::max(quad, 1e-13 * scale);

  const double df = static_cast<double>(pc.n) - pc.p;
  ev.quad = quad;
  ev.sigma2 = quad / df;
  ev.deviance = df * (1.0 + kLog2Pi + std::log(ev.sigma2)) + ev.logdet_lambda +
                ev.logdet_a;
  return ev;
}

// d(deviance)/d(lambda) at lambda = theta^2, via the envelope theorem:
//   (n-p) q'/q + sum_j n_j/(1+n_j L) - sum_j s_j' A^-1 s_j / (1+n_j L)^2
// with q' = -sum_j (group residual sum)^2 / (1+n_j L)^2. Exact up to the
// linear solves, which makes the stationary point resolvable to machine
// precision where value-comparison search stalls at sqrt(eps).
double profile_derivative(double lambda, const Precomp& pc,
                          const LmmSpec& spec) {
  const ProfileEval ev = profile_at(lambda, pc, spec, true);
  std::vector<double> group_r_sum(pc.g, 0.0);
  for (size_t i = 0; i < pc.n; ++i) {
    double fitted = 0.0;
    for (int c = 0; c < pc.p; ++c) fitted += ev.beta[c] * spec.x_cols[c][i];
    group_r_sum[spec.group[i]] += spec.y[i] - fitted;
  }
  double q_prime = 0.0;
  double logdet_lambda_term = 0.0;
  double logdet_a_term = 0.0;
  for (size_t j = 0; j < pc.g; ++j) {
    const double nj = pc.group_size[j];
    const double denom = 1.0 + nj * lambda;
    q_prime -= group_r_sum[j] * group_r_sum[j] / (denom * denom);
    logdet_lambda_term += nj / denom;
    const auto z = chol_solve(ev.chol_a, pc.group_x_sum[j]);
    double saz = 0.0;
    for (int c = 0; c < pc.p; ++c) saz += pc.group_x_sum[j][c] * z[c];
    logdet_a_term += saz / (denom * denom);
  }
  const double df = static_cast<double>(pc.n) - pc.p;
  return df * q_prime / ev.quad + logdet_lambda_term - logdet_a_term;
}

}  // namespace

std::vector<int> make_group_index(const std::vector<std::string>& labels,
                                  std::size_t* n_groups) {
  std::vector<int> index(labels.size());
  std::map<std::string, int> ids;
  for (size_t i = 0; i < labels.size(); ++i)
    index[i] = ids.emplace(labels[i], static_cast<int>(ids.size())).first->second;
  if (n_groups) *n_groups = ids.size();
  return index;
}

double reml_deviance(double theta, const LmmSpec& spec) {
  if (theta < 0.0) throw DegenerateError("lmm: theta must be >= 0");
  const Precomp pc = precompute(spec);
  return profile_at(theta * theta, pc, spec, false).deviance;
}

struct RemlObjective::Impl {
  LmmSpec spec;
  Precomp pc;
};

RemlObjective::RemlObjective(const LmmSpec& spec)
    : impl_(std::make_unique<Impl>(Impl{spec, precompute(spec)})) {}

RemlObjective::~RemlObjective() = default;
RemlObjective::RemlObjective(RemlObjective&&) noexcept = default;

double RemlObjective::operator()(double theta) const {
  if (theta < 0.0) throw DegenerateError("lmm: theta must be >= 0");
  return profile_at(theta * theta, impl_->pc, impl_->spec, false).deviance;
}

double reml_deviance_components(double sigma2, double tau00,
                                const LmmSpec& spec) {
  if (sigma2 <= 0.0) throw DegenerateError("lmm: sigma2 must be > 0");
  if (tau00 < 0.0) throw DegenerateError("lmm: tau00 must be >= 0");
  const Precomp pc = precompute(spec);
  const ProfileEval ev = profile_at(tau00 / sigma2, pc, spec, true);
  const double df = static_cast<double>(pc.n) - pc.p;
  return df * kLog2Pi + df * std::log(sigma2) + ev.logdet_lambda +
         ev.logdet_a + ev.quad / sigma2;
}

double coef_variance(const LmmSpec& spec, double sigma2, double tau00,
                     const std::vector<double>& contrast) {
  const Precomp pc = precompute(spec);
  const ProfileEval ev = profile_at(tau00 / sigma2, pc, spec, true);
  const auto z = chol_solve(ev.chol_a, contrast);
  double q = 0.0;
  for (int i = 0; i < pc.p; ++i) q += contrast[i] * z[i];
  return sigma2 * q;
}

namespace {

double satterthwaite_from_components(const Precomp& pc, const LmmSpec& spec,
                                     double sigma2, double tau00,
                                     const std::vector<double>& contrast,
                                     bool* ok) {
  *ok = false;
  const auto var_of_contrast = [&](double s2, double t00) {
    const ProfileEval ev = profile_at(t00 / s2, pc, spec, true);
    const auto z = chol_solve(ev.chol_a, contrast);
    double q = 0.0;
    for (int i = 0; i < pc.p; ++i) q += contrast[i] * z[i];
    return s2 * q;
  };
  const auto deviance = [&](double s2, double t00) {
    const ProfileEval ev = profile_at(t00 / s2, pc, spec, true);
    const double df = static_cast<double>(pc.n) - pc.p;
    return df * kLog2Pi + df * std::log(s2) + ev.logdet_lambda + ev.logdet_a +
           ev.quad / s2;
  };

  const double g0 = var_of_contrast(sigma2, tau00);
  if (!(g0 > 0.0)) return 0.0;

  // Gradient of g by central differences, relative step 1e-5.
  const double hs = 1e-5 * sigma2;
  const double ht = 1e-5 * std::max(tau00, 1e-8 * sigma2);
  if (tau00 - ht < 0.0) return 0.0;  // too close to the boundary
  const double dg_ds =
      (var_of_contrast(sigma2 + hs, tau00) - var_of_contrast(sigma2 - hs, tau00)) /
      (2.0 * hs);
  const double dg_dt =
      (var_of_contrast(sigma2, tau00 + ht) - var_of_contrast(sigma2, tau00 - ht)) /
      (2.0 * ht);

  // Hessian of the deviance by central second differences.
  double s_step = 1e-4 * sigma2;
  double t_step = 1e-4 * std::max(tau00, 1e-6 * sigma2);
  if (tau00 - t_step < 0.0) t_step = tau00 / 2.0;
  if (t_step <= 0.0) return 0.0;
  const double f0 = deviance(sigma2, tau00);
  const double h_ss = (deviance(sigma2 + s_step, tau00) - 2.0 * f0 +
                       deviance(sigma2 - s_step, tau00)) /
                      (s_step * s_step);
  const double h_tt = (deviance(sigma2, tau00 + t_step) - 2.0 * f0 +
                       deviance(sigma2, tau00 - t_step)) /
                      (t_step * t_step);
  const double h_st = (deviance(sigma2 + s_step, tau00 + t_step) -
                       deviance(sigma2 + s_step, tau00 - t_step) -
                       deviance(sigma2 - s_step, tau00 + t_step) +
                       deviance(sigma2 - s_step, tau00 - t_step)) /
                      (4.0 * s_step * t_step);

  // Asymptotic covariance of the variance components: 2 H^-1.
  const double det = h_ss * h_tt - h_st * h_st;
  if (!(det > 0.0) || !(h_ss > 0.0)) return 0.0;
  const double v_ss = 2.0 * h_tt / det;
  const double v_tt = 2.0 * h_ss / det;
  const double v_st = -2.0 * h_st / det;

  const double var_g = dg_ds * dg_ds * v_ss + dg_dt * dg_dt * v_tt +
                       2.0 * dg_ds * dg_dt * v_st;
  if (!(var_g > 0.0)) return 0.0;
  *ok = true;
  return 2.0 * g0 * g0 / var_g;
}

}  // namespace

double satterthwaite_df(const LmmSpec& spec, const LmmFit& fit,
                        const std::vector<double>& contrast, bool* fell_back) {
  const Precomp pc = precompute(spec);
  const double residual_df = static_cast<double>(pc.n) - pc.p;
  if (fell_back) *fell_back = false;
  if (fit.boundary || fit.tau00 <= 0.0) {
    if (fell_back) *fell_back = true;
    return residual_df;
  }
  bool ok = false;
  double df = satterthwaite_from_components(pc, spec, fit.sigma2, fit.tau00,
                                            contrast, &ok);
  if (!ok) {
    if (fell_back) *fell_back = true;
    return residual_df;
  }
  return std::clamp(df, 1.0, residual_df);
}

LmmFit fit_random_intercept(const LmmSpec& spec) {
  const Precomp pc = precompute(spec);
  const auto dev = [&](double theta) {
    return profile_at(theta * theta, pc, spec, false).deviance;
  };

  // Coarse log-grid scan picks the Brent bracket; this also lands boundary
  // solutions on [0, first grid point].
  std::vector<double> grid;
  grid.push_back(0.0);
  for (int i = 0; i <= 56; ++i)
    grid.push_back(std::pow(10.0, -3.0 + 7.0 * i / 56.0));
  size_t best = 0;
  double best_f = dev(grid[0]);
  for (size_t i = 1; i < grid.size(); ++i) {
    const double f = dev(grid[i]);
    if (f < best_f) {
      best_f = f;
      best = i;
    }
  }
  const double lo = best == 0 ? 0.0 : grid[best - 1];
  const double hi = best + 1 < grid.size() ? grid[best + 1] : kThetaUpper;
  BrentResult br = brent_minimize(dev, lo, hi, kThetaTol);

  double theta = br.x;
  // Snap to the boundary when 0 is at least as good.
  if (dev(0.0) <= br.f) theta = 0.0;

  // Score-equation polish: bisection on d(dev)/d(lambda) around the Brent
  // point takes the interior solution from sqrt(eps) accuracy down to
  // machine precision.
  if (theta > kBoundaryTheta) {
    const auto score = [&](double lambda) {
      return profile_derivative(lambda, pc, spec);
    };
    double lambda_hat = theta * theta;
    double lo = lambda_hat, hi = lambda_hat;
    double f_lo = score(lo), f_hi = f_lo;
    for (int i = 0; i < 60 && f_lo > 0.0; ++i) {
      hi = lo;
      f_hi = f_lo;
      lo *= 0.5;
      f_lo = score(lo);
      if (lo < 1e-14) break;
    }
    for (int i = 0; i < 60 && f_hi < 0.0; ++i) {
      lo = hi;
      f_lo = f_hi;
      hi *= 2.0;
      f_hi = score(hi);
      if (hi > kThetaUpper * kThetaUpper) break;
    }
    if (f_lo < 0.0 && f_hi > 0.0) {
      for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        if (score(mid) < 0.0) lo = mid;
        else hi = mid;
      }
      theta = std::sqrt(0.5 * (lo + hi));
    } else if (f_lo >= 0.0 && lo <= 1e-14 && dev(0.0) <= dev(theta)) {
      theta = 0.0;  // score positive all the way down: boundary
    }
  }

  const ProfileEval ev = profile_at(theta * theta, pc, spec, true);
  LmmFit fit;
  fit.beta = ev.beta;
  fit.sigma2 = ev.sigma2;
  fit.theta = theta;
  fit.tau00 = theta * theta * ev.sigma2;
  fit.icc = icc(fit.sigma2, fit.tau00);
  fit.n_obs = pc.n;
  fit.n_groups = pc.g;
  fit.reml_deviance = ev.deviance;
  fit.converged = br.converged || theta == 0.0;
  fit.boundary = theta <= kBoundaryTheta;
  fit.x_names = spec.x_names;
  if (!fit.converged)
    throw DegenerateError("lmm: theta search did not converge (best theta " +
                          std::to_string(theta) + ")");

  const int p = pc.p;
  fit.se.resize(p);
  fit.satterthwaite_df.resize(p);
  fit.t_value.resize(p);
  fit.p_value.resize(p);
  fit.ci_lo.resize(p);
  fit.ci_hi.resize(p);
  for (int c = 0; c < p; ++c) {
    std::vector<double> contrast(p, 0.0);
    contrast[c] = 1.0;
    const auto z = chol_solve(ev.chol_a, contrast);
    fit.se[c] = std::sqrt(std::max(0.0, fit.sigma2 * z[c]));
    bool fell_back = false;
    fit.satterthwaite_df[c] = satterthwaite_df(spec, fit, contrast, &fell_back);
    fit.df_fallback = fit.df_fallback || fell_back;
    fit.t_value[c] = fit.se[c] > 0.0 ? fit.beta[c] / fit.se[c] : 0.0;
    fit.p_value[c] = student_t_two_sided_p(fit.t_value[c], fit.satterthwaite_df[c]);
    const double tq = student_t_quantile(0.025, fit.satterthwaite_df[c]);
    fit.ci_lo[c] = fit.beta[c] - tq * fit.se[c];
    fit.ci_hi[c] = fit.beta[c] + tq * fit.se[c];
  }

  const R2 r2 = nakagawa_r2(spec, fit.beta, fit.sigma2, fit.tau00);
  fit.r2_marginal = r2.marginal;
  fit.r2_conditional = r2.conditional;
  return fit;
}

R2 nakagawa_r2(const LmmSpec& spec, const std::vector<double>& beta,
               double sigma2, double tau00) {
  const size_t n = spec.y.size();
  double mean = 0.0;
  std::vector<double> fitted(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    double f = 0.0;
    for (size_t c = 0; c < beta.size(); ++c) f += beta[c] * spec.x_cols[c][i];
    fitted[i] = f;
    mean += f;
  }
  mean /= static_cast<double>(n);
  double var_f = 0.0;
  for (double f : fitted) var_f += (f - mean) * (f - mean);
  var_f /= static_cast<double>(n);  // population variance
  const double total = var_f + tau00 + sigma2;
  R2 out;
  if (total > 0.0) {
    out.marginal = var_f / total;
    out.conditional = (var_f + tau00) / total;
  }
  return out;
}

double icc(double sigma2, double tau00) {
  if (sigma2 <= 0.0) throw DegenerateError("icc: sigma2 must be > 0");
  if (tau00 < 0.0) throw DegenerateError("icc: tau00 must be >= 0");
  return tau00 / (tau00 + sigma2);
}

PearsonResult pearson(const std::vector<double>& x,
                      const std::vector<double>& y) {
  if (x.size() != y.size()) throw DegenerateError("pearson: length mismatch");
  const size_t n = x.size();
  if (n < 3) throw DegenerateError("pearson: need at least 3 pairs");
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  PearsonResult out;
  out.n = n;
  if (sxx <= 0.0 || syy <= 0.0) return out;  // undefined, zero variance
  out.defined = true;
  out.r = sxy / std::sqrt(sxx * syy);
  out.r = std::clamp(out.r, -1.0, 1.0);
  const double df = static_cast<double>(n) - 2.0;
  const double denom = 1.0 - out.r * out.r;
  if (denom <= 0.0) {
    out.p = 0.0;
  } else {
    const double t = out.r * std::sqrt(df / denom);
    out.p = student_t_two_sided_p(t, df);
  }
  return out;
}

std::optional<double> cronbach_alpha(
    const std::vector<std::vector<double>>& items_by_person) {
  const size_t n = items_by_person.size();
  if (n < 2) throw DegenerateError("cronbach: need at least 2 persons");
  const size_t k = items_by_person.front().size();
  if (k < 2) throw DegenerateError("cronbach: need at least 2 items");
  for (const auto& row : items_by_person)
    if (row.size() != k) throw DegenerateError("cronbach: ragged item matrix");

  std::vector<double> item_mean(k, 0.0);
  double total_mean = 0.0;
  for (const auto& row : items_by_person) {
    double sum = 0.0;
    for (size_t j = 0; j < k; ++j) {
      item_mean[j] += row[j];
      sum += row[j];
    }
    total_mean += sum;
  }
  for (auto& m : item_mean) m /= static_cast<double>(n);
  total_mean /= static_cast<double>(n);

  double item_var_sum = 0.0;
  double total_var = 0.0;
  for (size_t j = 0; j < k; ++j) {
    double v = 0.0;
    for (const auto& row : items_by_person) {
      const double d = row[j] - item_mean[j];
      v += d * d;
    }
    item_var_sum += v / static_cast<double>(n - 1);
  }
  for (const auto& row : items_by_person) {
    const double sum = std::accumulate(row.begin(), row.end(), 0.0);
    total_var += (sum - total_mean) * (sum - total_mean);
  }
  total_var /= static_cast<double>(n - 1);
  if (total_var <= 0.0) return std::nullopt;
  return static_cast<double>(k) / (k - 1.0) * (1.0 - item_var_sum / total_var);
}

double binomial_exceedance(int k_hits, int n, double p0) {
  if (n < 0 || k_hits < 0 || k_hits > n)
    throw DegenerateError("binomial: need 0 <= k <= n");
  if (p0 < 0.0 || p0 > 1.0) throw DegenerateError("binomial: p0 outside [0,1]");
  if (k_hits == 0) return 1.0;
  if (p0 == 0.0) return 0.0;
  if (p0 == 1.0) return 1.0;
  const double log_p = std::log(p0);
  const double log_q = std::log1p(-p0);
  const double lg_n1 = std::lgamma(n + 1.0);
  // Sum the tail's log-PMFs against the running maximum.
  std::vector<double> logs;
  logs.reserve(n - k_hits + 1);
  double max_log = -1e308;
  for (int i = k_hits; i <= n; ++i) {
    const double lp = lg_n1 - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) +
                      i * log_p + (n - i) * log_q;
    logs.push_back(lp);
    max_log = std::max(max_log, lp);
  }
  double sum = 0.0;
  for (double lp : logs) sum += std::exp(lp - max_log);
  return std::min(1.0, std::exp(max_log) * sum);
}

// --- distribution helpers ----------------------------------------------------

namespace {

// Continued fraction for the regularized incomplete beta (modified Lentz).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) -
                          std::lgamma(b) + a * std::log(x) +
                          b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (df <= 0.0) throw DegenerateError("t distribution: df must be > 0");
  if (!std::isfinite(t)) return 0.0;
  const double x = df / (df + t * t);
  return incomplete_beta(df / 2.0, 0.5, x);
}

double student_t_quantile(double upper_tail_prob, double df) {
  if (upper_tail_prob <= 0.0 || upper_tail_prob >= 0.5)
    throw DegenerateError("t quantile: tail probability must be in (0, 0.5)");
  const double target = 2.0 * upper_tail_prob;  // two-sided p at the quantile
  double lo = 0.0, hi = 1.0;
  while (student_t_two_sided_p(hi, df) > target && hi < 1e12) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (student_t_two_sided_p(mid, df) > target) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace exposome::stats
