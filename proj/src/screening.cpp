#include "exposome/screening.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <mutex>
#include <thread>
#include <tuple>

#include "exposome/csv.hpp"
#include "exposome/errors.hpp"

namespace exposome::stats {

namespace {

using vocab::Direction;
using vocab::Outcome;

struct ObsFrame {
  std::vector<std::string> participant;
  std::vector<std::string> photo;
  std::vector<std::optional<double>> pa_trait, pa_state;
  std::vector<std::optional<double>> na_trait, na_state;
};

ObsFrame build_frame(const core::StudyDataset& dataset) {
  ObsFrame frame;
  std::vector<std::optional<double>> pa_raw, na_raw;
  for (const auto& obs : dataset.observations) {
    if (dataset.is_excluded(obs.participant_id)) continue;
    if (!obs.photo_id) continue;
    const auto affect = core::derive_affect(obs);
    frame.participant.push_back(obs.participant_id);
    frame.photo.push_back(*obs.photo_id);
    pa_raw.push_back(affect.positive);
    na_raw.push_back(affect.negative);
  }
  const auto pa = core::person_center(frame.participant, pa_raw);
  const auto na = core::person_center(frame.participant, na_raw);
  frame.pa_trait = pa.trait_row;
  frame.pa_state = pa.state;
  frame.na_trait = na.trait_row;
  frame.na_state = na.state;
  return frame;
}

bool has_variance(const std::vector<double>& values) {
  for (size_t i = 1; i < values.size(); ++i)
    if (values[i] != values[0]) return true;
  return false;
}

std::string cell_key(Outcome outcome, Direction direction,
                     const std::string& level) {
  return vocab::to_string(outcome) + "/" + vocab::to_string(direction) + "/" +
         level;
}

}  // namespace

ScreeningSummary screen_features(
    const core::StudyDataset& dataset,
    const std::vector<rater::AggregatedRating>& aggregates,
    const std::vector<pipeline::LiteratureEffect>& catalog,
    const ScreeningOptions& options) {
  if (catalog.empty()) throw ConfigError("screening: empty catalog");
  std::string model = options.model;
  if (model.empty() && !aggregates.empty()) model = aggregates.front().model;

  // feature -> photo -> aggregated mean score
  std::map<std::string, std::map<std::string, double>> feature_scores;
  for (const auto& agg : aggregates)
    if (agg.model == model)
      feature_scores[agg.feature][agg.photo_id] = agg.mean_score;

  const ObsFrame frame = build_frame(dataset);

  std::map<std::string, double> pss;
  for (const auto& baseline : dataset.baselines) {
    if (dataset.is_excluded(baseline.participant_id)) continue;
    if (auto score = core::score_pss(baseline))
      pss[baseline.participant_id] = *score;
  }

  struct EntryResult {
    std::vector<ScreeningRow> rows;
    std::vector<std::string> diagnostics;
    bool skipped = false;
  };
  std::vector<EntryResult> results(catalog.size());

  const auto run_entry = [&](size_t index) {
    const pipeline::LiteratureEffect& effect = catalog[index];
    EntryResult& out = results[index];
    const auto scores_it = feature_scores.find(effect.category);
    if (scores_it == feature_scores.end()) {
      out.diagnostics.push_back("feature '" + effect.category +
                                "' has no aggregates for model " + model);
      out.skipped = true;
      return;
    }
    const auto& by_photo = scores_it->second;

    if (effect.outcome == Outcome::stress) {
      // Trait level: participant mean of the feature vs the PSS score.
      std::map<std::string, std::pair<double, int>> sums;
      for (size_t i = 0; i < frame.photo.size(); ++i) {
        auto it = by_photo.find(frame.photo[i]);
        if (it == by_photo.end()) continue;
        auto& agg = sums[frame.participant[i]];
        agg.first += it->second;
        agg.second += 1;
      }
      std::vector<double> xs, ys;
      for (const auto& [pid, agg] : sums) {
        auto it = pss.find(pid);
        if (it == pss.end()) continue;
        xs.push_back(agg.first / agg.second);
        ys.push_back(it->second);
      }
      if (xs.size() < 3) {
        out.diagnostics.push_back("feature '" + effect.category +
                                  "': fewer than 3 participants for stress");
        out.skipped = true;
        return;
      }
      if (!has_variance(xs)) {
        out.diagnostics.push_back("feature '" + effect.category +
                                  "': zero variance, excluded");
        out.skipped = true;
        return;
      }
      const PearsonResult r = pearson(xs, ys);
      if (!r.defined) {
        out.diagnostics.push_back("feature '" + effect.category +
                                  "': undefined correlation");
        out.skipped = true;
        return;
      }
      ScreeningRow row;
      row.feature = effect.category;
      row.outcome = effect.outcome;
      row.level = "trait";
      row.estimate = r.r;
      row.p = r.p;
      row.expected = effect.direction;
      row.significant = r.p < options.alpha;
      row.matched = effect.direction == Direction::increase ? r.r > 0 : r.r < 0;
      row.hit = row.significant && row.matched;
      row.n_used = xs.size();
      out.rows.push_back(std::move(row));
      return;
    }

    // PA / NA: random-intercept model of the feature on trait + state.
    const bool positive = effect.outcome == Outcome::positive_affect;
    LmmSpec spec;
    std::vector<std::string> participants;
    for (size_t i = 0; i < frame.photo.size(); ++i) {
      auto it = by_photo.find(frame.photo[i]);
      if (it == by_photo.end()) continue;
      const auto& trait = positive ? frame.pa_trait[i] : frame.na_trait[i];
      const auto& state = positive ? frame.pa_state[i] : frame.na_state[i];
      if (!trait || !state) continue;  // listwise per model
      spec.y.push_back(it->second);
      if (spec.x_cols.empty()) spec.x_cols.resize(3);
      spec.x_cols[0].push_back(1.0);
      spec.x_cols[1].push_back(*trait);
      spec.x_cols[2].push_back(*state);
      participants.push_back(frame.participant[i]);
    }
    if (spec.y.size() < 8) {
      out.diagnostics.push_back("feature '" + effect.category +
                                "': too few joined observations");
      out.skipped = true;
      return;
    }
    if (!has_variance(spec.y)) {
      out.diagnostics.push_back("feature '" + effect.category +
                                "': zero variance, excluded");
      out.skipped = true;
      return;
    }
    std::size_t n_groups = 0;
    spec.group = make_group_index(participants, &n_groups);
    if (n_groups < 2) {
      out.diagnostics.push_back("feature '" + effect.category +
                                "': fewer than 2 participants");
      out.skipped = true;
      return;
    }
    spec.x_names = {"(intercept)", "trait", "state"};
    LmmFit fit;
    try {
      fit = fit_random_intercept(spec);
    } catch (const Error& e) {
      out.diagnostics.push_back("feature '" + effect.category +
                                "': " + e.what());
      out.skipped = true;
      return;
    }
    const auto emit = [&](const std::string& level, int coef) {
      ScreeningRow row;
      row.feature = effect.category;
      row.outcome = effect.outcome;
      row.level = level;
      row.estimate = fit.beta[coef];
      row.p = fit.p_value[coef];
      row.expected = effect.direction;
      row.significant = row.p < options.alpha;
      row.matched = effect.direction == Direction::increase ? row.estimate > 0
                                                            : row.estimate < 0;
      row.hit = row.significant && row.matched;
      row.n_used = spec.y.size();
      out.rows.push_back(std::move(row));
    };
    emit("trait", 1);
    emit("state", 2);
  };

  const int workers =
      std::max(1, std::min<int>(options.jobs, static_cast<int>(catalog.size())));
  if (workers == 1) {
    for (size_t i = 0; i < catalog.size(); ++i) run_entry(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        while (true) {
          const size_t i = next.fetch_add(1);
          if (i >= catalog.size()) return;
          run_entry(i);
        }
      });
    for (auto& t : pool) t.join();
  }

  // Deterministic aggregation order regardless of worker scheduling.
  ScreeningSummary summary;
  for (auto& result : results) {
    for (auto& row : result.rows) summary.rows.push_back(std::move(row));
    for (auto& d : result.diagnostics) summary.diagnostics.push_back(std::move(d));
    if (result.skipped) ++summary.n_skipped;
  }
  std::sort(summary.rows.begin(), summary.rows.end(),
            [](const ScreeningRow& a, const ScreeningRow& b) {
              return std::tie(a.feature, a.outcome, a.level) <
                     std::tie(b.feature, b.outcome, b.level);
            });
  std::sort(summary.diagnostics.begin(), summary.diagnostics.end());

  std::map<std::string, ScreeningCell> cells;
  const auto tally = [&](const std::string& key, const ScreeningRow& row) {
    ScreeningCell& cell = cells[key];
    cell.key = key;
    ++cell.n_tested;
    if (row.significant) ++cell.n_significant;
    if (row.hit) ++cell.n_hit;
  };
  for (const auto& row : summary.rows) {
    tally(cell_key(row.outcome, row.expected, row.level), row);
    tally("overall", row);
  }
  for (auto& [key, cell] : cells) {
    cell.hit_rate = cell.n_tested ? static_cast<double>(cell.n_hit) / cell.n_tested : 0.0;
    cell.significance_rate =
        cell.n_tested ? static_cast<double>(cell.n_significant) / cell.n_tested : 0.0;
    cell.exceedance_p =
        binomial_exceedance(cell.n_hit, cell.n_tested, options.chance_rate);
    cell.exceedance_p_significant = binomial_exceedance(
        cell.n_significant, cell.n_tested, options.chance_rate);
    summary.cells.push_back(cell);
  }
  return summary;
}

void write_screening_csv(const std::string& path,
                         const std::vector<ScreeningRow>& rows) {
  csv::Table table;
  table.header = {"feature", "outcome", "level", "estimate",
                  "p",       "expected_direction", "hit"};
  for (const auto& row : rows)
    table.rows.push_back({row.feature, vocab::to_string(row.outcome), row.level,
                          csv::format_double(row.estimate),
                          csv::format_double(row.p),
                          vocab::to_string(row.expected),
                          row.hit ? "1" : "0"});
  csv::write_file(path, table);
}

}  // namespace exposome::stats
