#include "exposome/reliability.hpp"

#include <cmath>

#include "exposome/errors.hpp"

namespace exposome::stats {

namespace {

struct MeanAcc {
  double sum = 0.0;
  long n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  double mean() const { return n > 0 ? sum / static_cast<double>(n) : 0.0; }
};

}  // namespace

ReliabilityResult multilevel_reliability(
    const std::vector<std::vector<std::vector<double>>>& data) {
  const size_t np = data.size();
  if (np < 2) throw DegenerateError("reliability: need >= 2 persons");
  const size_t nt = data.front().size();
  if (nt < 2) throw DegenerateError("reliability: need >= 2 times");
  const size_t ni = data.front().front().size();
  if (ni < 2) throw DegenerateError("reliability: need >= 2 items");
  for (const auto& person : data) {
    if (person.size() != nt)
      throw DegenerateError("reliability: ragged time dimension");
    for (const auto& times : person)
      if (times.size() != ni)
        throw DegenerateError("reliability: ragged item dimension");
  }

  MeanAcc grand;
  std::vector<MeanAcc> by_p(np), by_t(nt), by_i(ni);
  std::vector<std::vector<MeanAcc>> by_pt(np, std::vector<MeanAcc>(nt));
  std::vector<std::vector<MeanAcc>> by_pi(np, std::vector<MeanAcc>(ni));
  long missing = 0;
  for (size_t p = 0; p < np; ++p)
    for (size_t t = 0; t < nt; ++t)
      for (size_t i = 0; i < ni; ++i) {
        const double v = data[p][t][i];
        if (std::isnan(v)) {
          ++missing;
          continue;
        }
        grand.add(v);
        by_p[p].add(v);
        by_t[t].add(v);
        by_i[i].add(v);
        by_pt[p][t].add(v);
        by_pi[p][i].add(v);
      }
  const double total_cells = static_cast<double>(np) * nt * ni;
  if (grand.n < 4) throw DegenerateError("reliability: too few observed cells");

  ReliabilityResult out;
  out.missing_fraction = static_cast<double>(missing) / total_cells;
  out.unbalanced_warning = out.missing_fraction > 0.20;

  const double gp = static_cast<double>(np);
  const double gk = static_cast<double>(nt);
  const double gm = static_cast<double>(ni);
  const double gmean = grand.mean();

  // Count-weighted sums of squares on the available-case marginal means;
  // with a complete design these are exactly the balanced formulas.
  double ss_p = 0.0, ss_t = 0.0, ss_i = 0.0, ss_pt = 0.0, ss_pi = 0.0,
         ss_total = 0.0;
  long nonempty_pt = 0, nonempty_pi = 0;
  for (size_t p = 0; p < np; ++p)
    if (by_p[p].n > 0) {
      const double d = by_p[p].mean() - gmean;
      ss_p += static_cast<double>(by_p[p].n) * d * d;
    }
  for (size_t t = 0; t < nt; ++t)
    if (by_t[t].n > 0) {
      const double d = by_t[t].mean() - gmean;
      ss_t += static_cast<double>(by_t[t].n) * d * d;
    }
  for (size_t i = 0; i < ni; ++i)
    if (by_i[i].n > 0) {
      const double d = by_i[i].mean() - gmean;
      ss_i += static_cast<double>(by_i[i].n) * d * d;
    }
  for (size_t p = 0; p < np; ++p)
    for (size_t t = 0; t < nt; ++t)
      if (by_pt[p][t].n > 0) {
        ++nonempty_pt;
        const double d =
            by_pt[p][t].mean() - by_p[p].mean() - by_t[t].mean() + gmean;
        ss_pt += static_cast<double>(by_pt[p][t].n) * d * d;
      }
  for (size_t p = 0; p < np; ++p)
    for (size_t i = 0; i < ni; ++i)
      if (by_pi[p][i].n > 0) {
        ++nonempty_pi;
        const double d =
            by_pi[p][i].mean() - by_p[p].mean() - by_i[i].mean() + gmean;
        ss_pi += static_cast<double>(by_pi[p][i].n) * d * d;
      }
  for (size_t p = 0; p < np; ++p)
    for (size_t t = 0; t < nt; ++t)
      for (size_t i = 0; i < ni; ++i) {
        const double v = data[p][t][i];
        if (std::isnan(v)) continue;
        ss_total += (v - gmean) * (v - gmean);
      }
  // Residual pools the time x item and three-way strata.
  const double ss_res =
      std::max(0.0, ss_total - ss_p - ss_t - ss_i - ss_pt - ss_pi);

  const double df_p = gp - 1.0;
  const double df_t = gk - 1.0;
  const double df_i = gm - 1.0;
  const double df_pt = (gp - 1.0) * (gk - 1.0);
  const double df_pi = (gp - 1.0) * (gm - 1.0);
  const double observed = static_cast<double>(grand.n);
  const double df_res =
      std::max(1.0, observed - 1.0 - df_p - df_t - df_i - df_pt - df_pi);

  const double ms_p = ss_p / df_p;
  const double ms_t = ss_t / df_t;
  const double ms_i = ss_i / df_i;
  const double ms_pt = ss_pt / df_pt;
  const double ms_pi = ss_pi / df_pi;
  const double ms_res = ss_res / df_res;

  // EMS coefficients from the observed counts (balanced: m, k, km, pm, pk).
  const double m_eff = observed / static_cast<double>(nonempty_pt);
  const double k_eff = observed / static_cast<double>(nonempty_pi);
  const double n_per_person = observed / gp;
  const double n_per_time = observed / gk;
  const double n_per_item = observed / gm;

  VarianceComponents vc;
  vc.residual = ms_res;
  vc.person_time = std::max(0.0, (ms_pt - ms_res) / m_eff);
  vc.person_item = std::max(0.0, (ms_pi - ms_res) / k_eff);
  vc.person = std::max(0.0, (ms_p - ms_pt - ms_pi + ms_res) / n_per_person);
  vc.time = std::max(0.0, (ms_t - ms_pt) / n_per_time);
  vc.item = std::max(0.0, (ms_i - ms_pi) / n_per_item);
  out.components = vc;

  const double cn_den = vc.person_time + vc.residual / gm;
  out.r_cn = cn_den > 0.0 ? vc.person_time / cn_den : 0.0;
  const double kr_num = vc.person + vc.person_item / gm;
  const double kr_den =
      kr_num + vc.person_time / gk + vc.residual / (gk * gm);
  out.r_krn = kr_den > 0.0 ? kr_num / kr_den : 0.0;
  return out;
}

}  // namespace exposome::stats
