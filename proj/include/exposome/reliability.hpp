#pragma once

#include <vector>

namespace exposome::stats {

struct VarianceComponents {
  double person = 0.0;
  double time = 0.0;
  double item = 0.0;
  double person_time = 0.0;
  double person_item = 0.0;
  double residual = 0.0;
};

struct ReliabilityResult {
  VarianceComponents components;
  double r_cn = 0.0;   // within-person (change) reliability
  double r_krn = 0.0;  // between-person (k-occasion average) reliability
  double missing_fraction = 0.0;
  bool unbalanced_warning = false;  // > 20% of cells missing
};

// Person x time x item variance decomposition by expected-mean-squares
// method of moments (negatives clamped to 0), then
//   R_Cn  = s2_PT / (s2_PT + s2_e / m)
//   R_KRn = (s2_P + s2_PI/m) / (s2_P + s2_PI/m + s2_PT/k + s2_e/(k*m))
// with m items and k occasions. data[p][t][i]; NaN marks a missing cell.
// Requires >= 2 persons, >= 2 times, >= 2 items (DegenerateError otherwise).
// Cells missing beyond 20% switch nothing off but set unbalanced_warning;
// mean squares are then available-case approximations.
ReliabilityResult multilevel_reliability(
    const std::vector<std::vector<std::vector<double>>>& data);

}  // namespace exposome::stats
