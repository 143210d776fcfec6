#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "exposome/llm.hpp"
#include "exposome/stats.hpp"

namespace exposome::rater {

struct ScaleSpec {
  double lo = 1.0;
  double hi = 10.0;
  std::string lo_anchor = "not at all";
  std::string hi_anchor = "extremely";
  bool is_binary() const { return lo == 1.0 && hi == 2.0; }
};

// Default continuous scale plus the binary 1|2 presence scale.
ScaleSpec continuous_scale(const std::string& lo_anchor = "not at all",
                           const std::string& hi_anchor = "extremely");
ScaleSpec binary_scale(const std::string& lo_anchor,
                       const std::string& hi_anchor);

struct RatingPromptSpec {
  std::string feature;
  ScaleSpec scale;
  // Must contain exactly one <feature> slot; <lo>, <hi>, <lo_anchor>,
  // <hi_anchor> are filled in when present.
  std::string instruction_template =
      "Rate this photograph for <feature> on a scale from <lo> (<lo_anchor>) "
      "to <hi> (<hi_anchor>). Also report your confidence from 1 to 10. "
      "Reply as JSON with keys score and confidence.";
  double confidence_lo = 1.0;
  double confidence_hi = 10.0;
};

// Fills the template; throws ConfigError unless exactly one feature slot.
std::string render_prompt(const RatingPromptSpec& spec);

struct RatingRecord {
  std::string photo_id;
  std::string feature;
  std::string model;
  int run = 1;  // 1..k
  double score = 0.0;
  double confidence = 0.0;
};

struct RatingFailure {
  std::string photo_id;
  std::string feature;
  std::string model;
  int run = 1;
  std::string error;
};

struct RateOutcome {
  std::vector<RatingRecord> records;
  std::vector<RatingFailure> failures;
};

// k independent runs, each in its own conversation. Per-run failures are
// recorded; the photo only fails outright when every run fails.
RateOutcome rate_photo(const std::string& photo_id,
                       const std::string& image_bytes,
                       const RatingPromptSpec& spec, llm::Gateway& gateway,
                       const llm::ModelProfile& profile, int k = 5,
                       int max_image_edge = 1024);

struct AggregatedRating {
  std::string photo_id;
  std::string feature;
  std::string model;
  double mean_score = 0.0;
  double mean_confidence = 0.0;
  int run_count = 0;
};

// Arithmetic mean over the successful runs of one (photo, feature, model);
// nullopt when records is empty.
std::optional<AggregatedRating> aggregate(
    const std::vector<RatingRecord>& records);

// Groups records by (photo, feature, model) and aggregates each group;
// output sorted by (photo, feature, model) so reruns are byte-stable.
std::vector<AggregatedRating> aggregate_all(
    const std::vector<RatingRecord>& records);

// Unweighted mean of the per-photo aggregated means of the named continuous
// features; nullopt when any of them is missing for the photo.
std::optional<double> composite_average(
    const std::map<std::string, double>& feature_means,
    const std::vector<std::string>& continuous_features);

// Per-feature Pearson correlation between two models' photo-level
// aggregates, paired on photo_id. Requires >= 3 paired photos.
stats::PearsonResult cross_model_agreement(
    const std::vector<AggregatedRating>& model_a,
    const std::vector<AggregatedRating>& model_b, const std::string& feature);

// --- files -------------------------------------------------------------------

// ratings.csv: photo_id,feature,model,run,score,confidence
void write_ratings_csv(const std::string& path,
                       const std::vector<RatingRecord>& records);
std::vector<RatingRecord> read_ratings_csv(const std::string& path);

// aggregates.csv: photo_id,feature,model,mean_score,mean_confidence,n_runs
void write_aggregates_csv(const std::string& path,
                          const std::vector<AggregatedRating>& aggregates);
std::vector<AggregatedRating> read_aggregates_csv(const std::string& path);

// --- campaign ------------------------------------------------------------------

struct CampaignPhoto {
  std::string photo_id;
  std::string file_path;
};

struct CampaignConfig {
  std::vector<CampaignPhoto> photos;
  std::vector<RatingPromptSpec> specs;
  llm::ModelProfile profile;
  int runs = 5;
  int jobs = 1;
  int max_image_edge = 1024;
  std::string state_dir;       // partial rows + completed-pair markers
  std::string ratings_path;    // final sorted ratings.csv
  std::string aggregates_path; // final aggregates.csv
  std::string failures_path;   // optional failures.csv ("" = skip)
};

struct CampaignReport {
  std::size_t pairs_total = 0;
  std::size_t pairs_completed_previously = 0;
  std::size_t pairs_rated_now = 0;
  std::size_t failures = 0;
};

// Incremental, resumable rating campaign over (photo, feature) pairs.
// Completed pairs persist in the state dir and are skipped on resume; final
// outputs are rewritten sorted, so an interrupted-then-resumed campaign ends
// byte-identical to an uninterrupted one.
CampaignReport run_campaign(const CampaignConfig& config, llm::Gateway& gateway);

}  // namespace exposome::rater
