#pragma once

#include <string>
#include <vector>

#include "exposome/core.hpp"
#include "exposome/pipeline.hpp"
#include "exposome/rater.hpp"
#include "exposome/stats.hpp"
#include "exposome/vocab.hpp"

namespace exposome::stats {

struct ScreeningOptions {
  std::string model;        // aggregates of this model ("" = first seen)
  double alpha = 0.05;
  double chance_rate = 0.05;  // binomial baseline
  int jobs = 1;
};

struct ScreeningRow {
  std::string feature;
  vocab::Outcome outcome = vocab::Outcome::positive_affect;
  std::string level;  // "state" or "trait"
  double estimate = 0.0;
  double p = 1.0;
  vocab::Direction expected = vocab::Direction::increase;
  bool significant = false;
  bool matched = false;  // estimate sign agrees with the catalog direction
  bool hit = false;      // significant && matched
  std::size_t n_used = 0;
};

struct ScreeningCell {
  std::string key;  // e.g. "positive_affect/increase/state" or "overall"
  int n_tested = 0;
  int n_significant = 0;
  int n_hit = 0;
  double hit_rate = 0.0;
  double significance_rate = 0.0;
  double exceedance_p = 1.0;              // P(X >= n_hit) under chance
  double exceedance_p_significant = 1.0;  // same for the undirected count
};

struct ScreeningSummary {
  std::vector<ScreeningRow> rows;    // sorted by (feature, outcome, level)
  std::vector<ScreeningCell> cells;  // per (outcome, direction, level) + overall
  int n_skipped = 0;                 // zero-variance or degenerate features
  std::vector<std::string> diagnostics;
};

// Per catalog entry: PA/NA outcomes get a random-intercept fit of the
// feature aggregate on the affect trait + state columns (state and trait
// rows emitted separately); stress gets a Pearson correlation of the
// feature's participant mean against the PSS score (trait row only). A hit
// is p < alpha with the literature-expected sign at the matching level.
ScreeningSummary screen_features(
    const core::StudyDataset& dataset,
    const std::vector<rater::AggregatedRating>& aggregates,
    const std::vector<pipeline::LiteratureEffect>& catalog,
    const ScreeningOptions& options = {});

// screening.csv: feature,outcome,level,estimate,p,expected_direction,hit
void write_screening_csv(const std::string& path,
                         const std::vector<ScreeningRow>& rows);

}  // namespace exposome::stats
