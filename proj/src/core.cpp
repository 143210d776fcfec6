#include "exposome/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "exposome/csv.hpp"
#include "exposome/errors.hpp"

namespace exposome::core {

const ParticipantBaseline* StudyDataset::baseline_for(
    const std::string& participant_id) const {
  for (const auto& b : baselines)
    if (b.participant_id == participant_id) return &b;
  return nullptr;
}

namespace {

const char* const kEmaHeader[] = {"participant_id", "alarm_time",
                                  "pa1", "pa2", "pa3", "pa4", "pa5",
                                  "na1", "na2", "na3", "na4", "na5",
                                  "greenness_self", "photo_id"};
const char* const kBaselineHeader[] = {"participant_id", "age", "sex",
                                       "pss1", "pss2", "pss3", "pss4", "pss5",
                                       "pss6", "pss7", "pss8", "pss9", "pss10"};

void check_header(const csv::Table& table, const char* const* expected,
                  size_t n, const std::string& path) {
  if (table.header.size() != n)
    throw IoError(path + ": expected " + std::to_string(n) +
                  " header fields, got " + std::to_string(table.header.size()));
  for (size_t i = 0; i < n; ++i)
    if (table.header[i] != expected[i])
      throw IoError(path + ": header field " + std::to_string(i + 1) +
                    " is '" + table.header[i] + "', expected '" + expected[i] +
                    "'");
}

// Baseline header with an optional reverse-code mask: a pssN column may be
// written pssNr, marking that item for 6 - x recoding on ingestion (raw
// exports; the default unmarked header means pre-scored items).
std::array<bool, kPssItems> check_baseline_header(const csv::Table& table,
                                                  const std::string& path) {
  if (table.header.size() != std::size(kBaselineHeader))
    throw IoError(path + ": expected " +
                  std::to_string(std::size(kBaselineHeader)) +
                  " header fields, got " + std::to_string(table.header.size()));
  std::array<bool, kPssItems> reversed{};
  for (size_t i = 0; i < std::size(kBaselineHeader); ++i) {
    const std::string& got = table.header[i];
    const std::string want = kBaselineHeader[i];
    if (got == want) continue;
    if (i >= 3 && got == want + "r") {
      reversed[i - 3] = true;
      continue;
    }
    throw IoError(path + ": header field " + std::to_string(i + 1) + " is '" +
                  got + "', expected '" + want + "'");
  }
  return reversed;
}

struct RowDiagnostics {
  std::vector<std::string> problems;

  void add(const std::string& path, size_t data_line, const std::string& field,
           const std::string& what) {
    problems.push_back(path + " row " + std::to_string(data_line) +
                       ", field '" + field + "': " + what);
  }
  void raise_if_any() const {
    if (problems.empty()) return;
    std::string msg = problems.front();
    for (size_t i = 1; i < problems.size(); ++i) msg += "\n" + problems[i];
    throw IoError(msg);
  }
};

std::optional<int> ranged_int(const std::string& cell, int lo, int hi,
                              bool* bad) {
  *bad = false;
  if (cell.empty()) return std::nullopt;
  auto v = csv::parse_int(cell);
  if (!v || *v < lo || *v > hi) {
    *bad = true;
    return std::nullopt;
  }
  return v;
}

}  // namespace

StudyDataset load_dataset(const std::string& ema_path,
                          const std::string& baseline_path) {
  csv::Table ema = csv::read_file(ema_path);
  csv::Table base = csv::read_file(baseline_path);
  check_header(ema, kEmaHeader, std::size(kEmaHeader), ema_path);
  const auto reversed = check_baseline_header(base, baseline_path);

  StudyDataset dataset;
  dataset.provenance = ema_path + " + " + baseline_path;
  RowDiagnostics diag;

  for (size_t r = 0; r < base.rows.size(); ++r) {
    const auto& row = base.rows[r];
    ParticipantBaseline b;
    b.participant_id = row[0];
    if (b.participant_id.empty())
      diag.add(baseline_path, r + 1, "participant_id", "empty");
    bool bad = false;
    b.age = ranged_int(row[1], 0, 130, &bad);
    if (bad) diag.add(baseline_path, r + 1, "age", "'" + row[1] + "' out of range 0..130");
    b.sex = row[2];
    for (int i = 0; i < kPssItems; ++i) {
      b.pss_items[i] = ranged_int(row[3 + i], 1, 5, &bad);
      if (bad)
        diag.add(baseline_path, r + 1, "pss" + std::to_string(i + 1),
                 "'" + row[3 + i] + "' not in 1..5");
      if (b.pss_items[i] && reversed[i]) b.pss_items[i] = 6 - *b.pss_items[i];
    }
    dataset.baselines.push_back(std::move(b));
  }

  std::set<std::string> known_participants;
  for (const auto& b : dataset.baselines)
    known_participants.insert(b.participant_id);

  for (size_t r = 0; r < ema.rows.size(); ++r) {
    const auto& row = ema.rows[r];
    EmaObservation obs;
    obs.participant_id = row[0];
    if (!known_participants.count(obs.participant_id))
      diag.add(ema_path, r + 1, "participant_id",
               "'" + obs.participant_id + "' has no baseline entry");
    obs.alarm_time = row[1];
    auto minutes = time_of_day_minutes(obs.alarm_time);
    if (!minutes) {
      diag.add(ema_path, r + 1, "alarm_time",
               "'" + row[1] + "' is not YYYY-MM-DDTHH:MM");
    } else if (*minutes < kDayStartMinutes || *minutes > kDayEndMinutes) {
      diag.add(ema_path, r + 1, "alarm_time",
               "'" + row[1] + "' outside the 09:00-20:00 study window");
    }
    bool bad = false;
    for (int i = 0; i < kAffectItems; ++i) {
      const std::string field = i < 5 ? "pa" + std::to_string(i + 1)
                                      : "na" + std::to_string(i - 4);
      obs.affect_items[i] = ranged_int(row[2 + i], 1, 5, &bad);
      if (bad)
        diag.add(ema_path, r + 1, field, "'" + row[2 + i] + "' not in 1..5");
    }
    obs.greenness_self = ranged_int(row[12], 1, 6, &bad);
    if (bad)
      diag.add(ema_path, r + 1, "greenness_self",
               "'" + row[12] + "' not in 1..6");
    if (!row[13].empty()) obs.photo_id = row[13];
    dataset.observations.push_back(std::move(obs));
  }

  diag.raise_if_any();

  std::map<std::string, int> obs_count;
  for (const auto& obs : dataset.observations) ++obs_count[obs.participant_id];
  for (const auto& b : dataset.baselines) {
    auto it = obs_count.find(b.participant_id);
    const int n = it == obs_count.end() ? 0 : it->second;
    if (n < 2) dataset.excluded_participants.insert(b.participant_id);
  }
  return dataset;
}

void write_dataset(const StudyDataset& dataset, const std::string& ema_path,
                   const std::string& baseline_path) {
  csv::Table ema;
  ema.header.assign(std::begin(kEmaHeader), std::end(kEmaHeader));
  for (const auto& obs : dataset.observations) {
    std::vector<std::string> row;
    row.push_back(obs.participant_id);
    row.push_back(obs.alarm_time);
    for (int i = 0; i < kAffectItems; ++i)
      row.push_back(obs.affect_items[i] ? std::to_string(*obs.affect_items[i])
                                        : "");
    row.push_back(obs.greenness_self ? std::to_string(*obs.greenness_self)
                                     : "");
    row.push_back(obs.photo_id.value_or(""));
    ema.rows.push_back(std::move(row));
  }
  csv::Table base;
  base.header.assign(std::begin(kBaselineHeader), std::end(kBaselineHeader));
  for (const auto& b : dataset.baselines) {
    std::vector<std::string> row;
    row.push_back(b.participant_id);
    row.push_back(b.age ? std::to_string(*b.age) : "");
    row.push_back(b.sex);
    for (int i = 0; i < kPssItems; ++i)
      row.push_back(b.pss_items[i] ? std::to_string(*b.pss_items[i]) : "");
    base.rows.push_back(std::move(row));
  }
  csv::write_file(ema_path, ema);
  csv::write_file(baseline_path, base);
}

AffectScores derive_affect(const EmaObservation& obs) {
  AffectScores scores;
  double pa = 0.0, na = 0.0;
  bool pa_complete = true, na_complete = true;
  for (int i = 0; i < 5; ++i) {
    if (obs.affect_items[i]) pa += *obs.affect_items[i];
    else pa_complete = false;
    if (obs.affect_items[5 + i]) na += *obs.affect_items[5 + i];
    else na_complete = false;
  }
  if (pa_complete) scores.positive = pa / 5.0;
  if (na_complete) scores.negative = na / 5.0;
  return scores;
}

std::optional<double> score_pss(const ParticipantBaseline& baseline) {
  double sum = 0.0;
  for (const auto& item : baseline.pss_items) {
    if (!item) return std::nullopt;
    sum += *item;
  }
  return sum / kPssItems;
}

CenteredPredictor person_center(
    const std::vector<std::string>& participant_ids,
    const std::vector<std::optional<double>>& values) {
  if (participant_ids.size() != values.size())
    throw ConfigError("person_center: ids and values differ in length");
  CenteredPredictor out;
  out.state.resize(values.size());
  out.trait_row.resize(values.size());

  std::map<std::string, std::pair<double, int>> sums;  // sum, count
  std::set<std::string> seen;
  for (size_t i = 0; i < values.size(); ++i) {
    seen.insert(participant_ids[i]);
    if (values[i]) {
      auto& agg = sums[participant_ids[i]];
      agg.first += *values[i];
      agg.second += 1;
    }
  }
  for (const auto& [id, agg] : sums) out.trait[id] = agg.first / agg.second;
  for (const auto& id : seen)
    if (!sums.count(id)) out.dropped_participants.push_back(id);

  for (size_t i = 0; i < values.size(); ++i) {
    auto it = out.trait.find(participant_ids[i]);
    if (it == out.trait.end()) continue;  // participant dropped
    out.trait_row[i] = it->second;
    if (values[i]) out.state[i] = *values[i] - it->second;
  }
  return out;
}

std::vector<double> generate_alarm_schedule(int day_start_minutes,
                                            int day_end_minutes, int n,
                                            int min_gap_minutes, Rng& rng) {
  if (n < 1) throw ConfigError("alarm schedule: n must be >= 1");
  const double window = day_end_minutes - day_start_minutes;
  const double required = static_cast<double>(n - 1) * min_gap_minutes;
  if (window < required)
    throw ConfigError("alarm schedule: window of " + std::to_string(window) +
                      " min cannot hold " + std::to_string(n) +
                      " alarms with gaps >= " + std::to_string(min_gap_minutes));
  std::vector<double> points(n);
  const double shrunk = window - required;
  for (auto& p : points) p = rng.uniform() * shrunk;
  std::sort(points.begin(), points.end());
  for (int i = 0; i < n; ++i)
    points[i] += day_start_minutes + static_cast<double>(i) * min_gap_minutes;
  return points;
}

std::vector<double> generate_alarm_schedule(int day_start_minutes,
                                            int day_end_minutes, int n,
                                            int min_gap_minutes,
                                            std::uint64_t seed) {
  Rng rng(seed);
  return generate_alarm_schedule(day_start_minutes, day_end_minutes, n,
                                 min_gap_minutes, rng);
}

namespace {

std::string participant_label(int index, int total) {
  size_t width = 1;
  for (int v = total; v >= 10; v /= 10) ++width;
  std::string digits = std::to_string(index + 1);
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return "P" + digits;
}

int clamp_int(int v, int lo, int hi) { return std::min(hi, std::max(lo, v)); }

// Study calendar starting 2025-03-01; leap handling irrelevant for 2025.
void study_date(int day_offset, int* year, int* month, int* day) {
  static const int lengths[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  *year = 2025;
  *month = 3;
  *day = 1 + day_offset;
  while (*day > lengths[*month - 1]) {
    *day -= lengths[*month - 1];
    if (++*month > 12) {
      *month = 1;
      ++*year;
    }
  }
}

}  // namespace

SimulatedStudy simulate_study(const SimulationConfig& config) {
  if (config.n_participants < 1) throw ConfigError("simulate: n_participants must be >= 1");
  if (config.days < 1) throw ConfigError("simulate: days must be >= 1");
  if (config.alarms_per_day < 1) throw ConfigError("simulate: alarms_per_day must be >= 1");
  if (config.tau00_true < 0 || config.sigma2_true < 0)
    throw ConfigError("simulate: variances must be >= 0");
  if (config.beta_true.empty()) throw ConfigError("simulate: beta_true is empty");

  Rng rng(config.seed);
  SimulatedStudy sim;
  sim.dataset.provenance = "simulate_study(seed=" + std::to_string(config.seed) + ")";
  sim.truth.beta = config.beta_true;
  sim.truth.tau00 = config.tau00_true;
  sim.truth.sigma2 = config.sigma2_true;
  const size_t n_extra = config.beta_true.size() >= 2 ? config.beta_true.size() - 2 : 0;
  sim.truth.x_columns.resize(config.beta_true.size() - 1);

  const double sd_b = std::sqrt(config.tau00_true);
  const double sd_e = std::sqrt(config.sigma2_true);

  for (int p = 0; p < config.n_participants; ++p) {
    const std::string pid = participant_label(p, config.n_participants);
    ParticipantBaseline baseline;
    baseline.participant_id = pid;
    baseline.age = rng.uniform_int(18, 65);
    baseline.sex = rng.uniform() < 0.5 ? "female" : "male";
    for (auto& item : baseline.pss_items) item = rng.uniform_int(1, 5);
    sim.dataset.baselines.push_back(std::move(baseline));

    const double b_i = sd_b > 0 ? rng.normal(0.0, sd_b) : 0.0;
    sim.truth.random_intercepts.push_back(b_i);

    const double pa_latent = rng.uniform(2.0, 4.0);
    const double na_latent = rng.uniform(1.0, 2.0);

    for (int d = 0; d < config.days; ++d) {
      auto schedule = generate_alarm_schedule(
          kDayStartMinutes, kDayEndMinutes, config.alarms_per_day,
          kMinAlarmGapMinutes, rng);
      int year = 0, month = 0, day = 0;
      study_date(d, &year, &month, &day);
      for (int a = 0; a < config.alarms_per_day; ++a) {
        EmaObservation obs;
        obs.participant_id = pid;
        obs.alarm_time = format_alarm_time(
            year, month, day, static_cast<int>(std::floor(schedule[a])));
        for (int i = 0; i < 5; ++i) {
          obs.affect_items[i] =
              clamp_int(static_cast<int>(std::lround(pa_latent + rng.normal(0.0, 0.7))), 1, 5);
          obs.affect_items[5 + i] =
              clamp_int(static_cast<int>(std::lround(na_latent + rng.normal(0.0, 0.5))), 1, 5);
        }
        const int greenness = rng.uniform_int(1, 6);
        obs.greenness_self = greenness;
        const std::string photo =
            pid + "_d" + std::to_string(d + 1) + "_a" + std::to_string(a + 1);
        obs.photo_id = photo;

        double mean = config.beta_true[0];
        if (config.beta_true.size() >= 2) {
          mean += config.beta_true[1] * greenness;
          sim.truth.x_columns[0].push_back(greenness);
        }
        for (size_t k = 0; k < n_extra; ++k) {
          const double x = rng.normal();
          mean += config.beta_true[2 + k] * x;
          sim.truth.x_columns[1 + k].push_back(x);
        }
        const double y = mean + b_i + (sd_e > 0 ? rng.normal(0.0, sd_e) : 0.0);
        sim.truth.participant.push_back(pid);
        sim.truth.photo_id.push_back(photo);
        sim.truth.y.push_back(y);
        sim.dataset.observations.push_back(std::move(obs));
      }
    }
  }

  std::map<std::string, int> obs_count;
  for (const auto& obs : sim.dataset.observations) ++obs_count[obs.participant_id];
  for (const auto& b : sim.dataset.baselines)
    if (obs_count[b.participant_id] < 2)
      sim.dataset.excluded_participants.insert(b.participant_id);
  return sim;
}

std::optional<int> time_of_day_minutes(const std::string& iso_local) {
  // YYYY-MM-DDTHH:MM, optionally with :SS which is ignored.
  if (iso_local.size() < 16) return std::nullopt;
  const auto digit = [&](size_t i) { return iso_local[i] >= '0' && iso_local[i] <= '9'; };
  for (size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u, 11u, 12u, 14u, 15u})
    if (!digit(i)) return std::nullopt;
  if (iso_local[4] != '-' || iso_local[7] != '-' || iso_local[10] != 'T' ||
      iso_local[13] != ':')
    return std::nullopt;
  const int hour = (iso_local[11] - '0') * 10 + (iso_local[12] - '0');
  const int minute = (iso_local[14] - '0') * 10 + (iso_local[15] - '0');
  if (hour > 23 || minute > 59) return std::nullopt;
  return hour * 60 + minute;
}

std::string format_alarm_time(int year, int month, int day,
                              int minutes_of_day) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d", year, month, day,
                minutes_of_day / 60, minutes_of_day % 60);
  return buf;
}

}  // namespace exposome::core
