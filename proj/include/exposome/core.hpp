#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "exposome/rng.hpp"

namespace exposome::core {

inline constexpr int kAffectItems = 10;  // first 5 positive, last 5 negative
inline constexpr int kPssItems = 10;
inline constexpr int kDayStartMinutes = 9 * 60;   // 09:00
inline constexpr int kDayEndMinutes = 20 * 60;    // 20:00
inline constexpr int kMinAlarmGapMinutes = 30;

// One alarm's self-report. alarm_time is ISO-8601 local, minute resolution
// ("YYYY-MM-DDTHH:MM"); the analyses only ever use the time-of-day window.
struct EmaObservation {
  std::string participant_id;
  std::string alarm_time;
  std::array<std::optional<int>, kAffectItems> affect_items{};  // each 1..5
  std::optional<int> greenness_self;                            // 1..6
  std::optional<std::string> photo_id;  // photo may be skipped
};

struct ParticipantBaseline {
  std::string participant_id;
  std::optional<int> age;
  std::string sex;
  std::array<std::optional<int>, kPssItems> pss_items{};  // each 1..5
};

struct StudyDataset {
  std::vector<EmaObservation> observations;
  std::vector<ParticipantBaseline> baselines;
  std::string provenance;
  // Participants with fewer than 2 observations: retained in storage,
  // excluded from model fits by default.
  std::set<std::string> excluded_participants;

  bool is_excluded(const std::string& participant_id) const {
    return excluded_participants.count(participant_id) > 0;
  }
  const ParticipantBaseline* baseline_for(const std::string& participant_id) const;
};

// Person-mean decomposition of a repeated measure. state[i] + trait of the
// observation's participant reconstructs the raw value exactly.
struct CenteredPredictor {
  std::vector<std::optional<double>> state;      // aligned with input rows
  std::vector<std::optional<double>> trait_row;  // participant mean per row
  std::map<std::string, double> trait;           // per participant
  std::vector<std::string> dropped_participants;  // zero non-missing values
};

struct AffectScores {
  std::optional<double> positive;
  std::optional<double> negative;
};

struct SimulationConfig {
  int n_participants = 20;
  int days = 7;
  int alarms_per_day = 7;
  double tau00_true = 1.0;    // between-participant intercept variance
  double sigma2_true = 1.0;   // residual variance
  // Coefficients on [1, greenness_self, extra N(0,1) predictors...].
  std::vector<double> beta_true = {2.0, 0.5};
  std::uint64_t seed = 1;
  bool write_photos = false;  // used by the CLI simulate stage
};

// The simulator's generative record: everything needed to check an estimator
// against the truth without re-deriving it from the dataset files.
struct SimulatedTruth {
  std::vector<double> beta;
  double tau00 = 0.0;
  double sigma2 = 0.0;
  std::vector<double> random_intercepts;        // per participant
  std::vector<std::string> participant;         // per row
  std::vector<std::string> photo_id;            // per row
  std::vector<double> y;                        // per row
  std::vector<std::vector<double>> x_columns;   // non-intercept predictors
};

struct SimulatedStudy {
  StudyDataset dataset;
  SimulatedTruth truth;
};

// --- file ingestion ---------------------------------------------------------

// Reads ema.csv (participant_id,alarm_time,pa1..pa5,na1..na5,greenness_self,
// photo_id) and baseline.csv (participant_id,age,sex,pss1..pss10). Empty cell
// = missing. Range violations and malformed rows raise IoError naming the
// file, 1-based data line and field; all offending rows are listed.
StudyDataset load_dataset(const std::string& ema_path,
                          const std::string& baseline_path);

// Inverse of load_dataset for round-trip checks and the simulator.
void write_dataset(const StudyDataset& dataset, const std::string& ema_path,
                   const std::string& baseline_path);

// --- derived scales ---------------------------------------------------------

// Subscale = arithmetic mean of its 5 items; any missing item leaves that
// subscale missing.
AffectScores derive_affect(const EmaObservation& obs);

// Mean of the 10 PSS items (export is pre-scored; reverse-coding upstream).
std::optional<double> score_pss(const ParticipantBaseline& baseline);

// --- centering --------------------------------------------------------------

CenteredPredictor person_center(
    const std::vector<std::string>& participant_ids,
    const std::vector<std::optional<double>>& values);

// --- alarm schedule ---------------------------------------------------------

// n sorted timestamps (minutes since midnight) in [day_start, day_end] with
// consecutive gaps >= min_gap, uniform over the feasible region: n sorted
// uniforms on the window shrunk by (n-1)*min_gap, re-inflated by i*min_gap.
// Throws ConfigError when (day_end - day_start) < (n-1)*min_gap.
std::vector<double> generate_alarm_schedule(int day_start_minutes,
                                            int day_end_minutes, int n,
                                            int min_gap_minutes, Rng& rng);
std::vector<double> generate_alarm_schedule(int day_start_minutes,
                                            int day_end_minutes, int n,
                                            int min_gap_minutes,
                                            std::uint64_t seed);

// --- simulator --------------------------------------------------------------

// Generates an EMA-shaped dataset plus a known-truth model frame:
// y_it = beta0 + beta1 * greenness_it + sum_k beta_k x_k,it + b_i + eps_it,
// b_i ~ N(0, tau00), eps ~ N(0, sigma2). Deterministic under fixed seed.
SimulatedStudy simulate_study(const SimulationConfig& config);

// --- time helpers -----------------------------------------------------------

// "YYYY-MM-DDTHH:MM" -> minutes since midnight, or nullopt when malformed.
std::optional<int> time_of_day_minutes(const std::string& iso_local);
std::string format_alarm_time(int year, int month, int day, int minutes_of_day);

}  // namespace exposome::core
