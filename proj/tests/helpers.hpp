#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "exposome/rng.hpp"
#include "exposome/stats.hpp"

namespace testutil {

// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    const auto base = std::filesystem::temp_directory_path();
    path_ = base / ("exposome_test_" + tag + "_" + std::to_string(::getpid()) +
                    "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// --- balanced one-way ANOVA oracle -------------------------------------------

struct AnovaOracle {
  double grand_mean = 0.0;
  double msw = 0.0;       // sigma2_hat (REML = ANOVA on balanced interior)
  double msb = 0.0;
  double tau00 = 0.0;     // (MSB - MSW) / n_per_group
  double icc = 0.0;
  bool interior = false;  // tau00 > 0
};

inline AnovaOracle balanced_anova(const std::vector<std::vector<double>>& groups) {
  AnovaOracle oracle;
  const size_t g = groups.size();
  const size_t n = groups.front().size();
  double total = 0.0;
  std::vector<double> means(g, 0.0);
  for (size_t j = 0; j < g; ++j) {
    for (double v : groups[j]) means[j] += v;
    means[j] /= static_cast<double>(n);
    total += means[j];
  }
  oracle.grand_mean = total / static_cast<double>(g);
  double ssw = 0.0, ssb = 0.0;
  for (size_t j = 0; j < g; ++j) {
    for (double v : groups[j]) ssw += (v - means[j]) * (v - means[j]);
    ssb += (means[j] - oracle.grand_mean) * (means[j] - oracle.grand_mean);
  }
  oracle.msw = ssw / (static_cast<double>(g) * (n - 1));
  oracle.msb = static_cast<double>(n) * ssb / (static_cast<double>(g) - 1.0);
  oracle.tau00 = (oracle.msb - oracle.msw) / static_cast<double>(n);
  oracle.interior = oracle.tau00 > 0.0;
  if (!oracle.interior) oracle.tau00 = 0.0;
  oracle.icc = oracle.tau00 / (oracle.tau00 + oracle.msw);
  return oracle;
}

inline exposome::stats::LmmSpec spec_from_groups(
    const std::vector<std::vector<double>>& groups) {
  exposome::stats::LmmSpec spec;
  for (size_t j = 0; j < groups.size(); ++j)
    for (double v : groups[j]) {
      spec.y.push_back(v);
      spec.group.push_back(static_cast<int>(j));
    }
  spec.x_cols = {std::vector<double>(spec.y.size(), 1.0)};
  return spec;
}

// The worked fixture used across the stats tests: groups (1,2), (3,4), (5,6).
inline std::vector<std::vector<double>> fixture_groups() {
  return {{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}};
}

// --- misc oracles ---------------------------------------------------------------

// Kolmogorov-Smirnov distance against Uniform(0,1).
inline double ks_uniform(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double d = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    const double hi = (static_cast<double>(i) + 1.0) / n - values[i];
    const double lo = values[i] - static_cast<double>(i) / n;
    d = std::max(d, std::max(hi, lo));
  }
  return d;
}

// Student-t two-sided p by Simpson integration of the density; an
// implementation-independent check of the incomplete-beta path.
inline double t_two_sided_p_quadrature(double t, double df) {
  t = std::abs(t);
  const double log_norm = std::lgamma((df + 1.0) / 2.0) -
                          std::lgamma(df / 2.0) -
                          0.5 * std::log(df * 3.14159265358979323846);
  const auto pdf = [&](double x) {
    return std::exp(log_norm - (df + 1.0) / 2.0 * std::log1p(x * x / df));
  };
  // Integrate the upper tail [t, t + span] with Simpson; the remainder past
  // the span is negligible for the magnitudes tested.
  const double span = 400.0 + 40.0 * std::sqrt(df);
  const int steps = 200001;  // odd
  const double h = span / (steps - 1);
  double sum = pdf(t) + pdf(t + span);
  for (int i = 1; i + 1 < steps; ++i)
    sum += pdf(t + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return std::min(1.0, 2.0 * sum * h / 3.0);
}

// Exact binomial upper tail by direct product accumulation (no logs).
inline double binomial_tail_direct(int k, int n, double p0) {
  double tail = 0.0;
  for (int i = k; i <= n; ++i) {
    double term = 1.0;
    for (int j = 0; j < i; ++j) term *= p0 * static_cast<double>(n - j) / (j + 1);
    for (int j = 0; j < n - i; ++j) term *= (1.0 - p0);
    tail += term;
  }
  return tail;
}

inline double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace testutil
