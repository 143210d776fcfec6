#include "exposome/rater.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "exposome/csv.hpp"
#include "exposome/image.hpp"

namespace exposome::rater {

namespace fs = std::filesystem;

ScaleSpec continuous_scale(const std::string& lo_anchor,
                           const std::string& hi_anchor) {
  return {1.0, 10.0, lo_anchor, hi_anchor};
}

ScaleSpec binary_scale(const std::string& lo_anchor,
                       const std::string& hi_anchor) {
  return {1.0, 2.0, lo_anchor, hi_anchor};
}

namespace {

std::string replace_all(std::string text, const std::string& slot,
                        const std::string& value) {
  size_t at = 0;
  while ((at = text.find(slot, at)) != std::string::npos) {
    text.replace(at, slot.size(), value);
    at += value.size();
  }
  return text;
}

std::string format_number(double v) {
  if (v == static_cast<long>(v)) return std::to_string(static_cast<long>(v));
  return csv::format_double(v);
}

}  // namespace

std::string render_prompt(const RatingPromptSpec& spec) {
  if (spec.feature.empty()) throw ConfigError("rating spec: empty feature");
  if (spec.scale.hi <= spec.scale.lo)
    throw ConfigError("rating spec: scale bounds not well-ordered for " +
                      spec.feature);
  size_t slots = 0;
  for (size_t at = spec.instruction_template.find("<feature>");
       at != std::string::npos;
       at = spec.instruction_template.find("<feature>", at + 1))
    ++slots;
  if (slots != 1)
    throw ConfigError("rating spec: template must contain exactly one "
                      "<feature> slot (found " + std::to_string(slots) + ")");
  std::string prompt = spec.instruction_template;
  prompt = replace_all(prompt, "<feature>", spec.feature);
  prompt = replace_all(prompt, "<lo>", format_number(spec.scale.lo));
  prompt = replace_all(prompt, "<hi>", format_number(spec.scale.hi));
  prompt = replace_all(prompt, "<lo_anchor>", spec.scale.lo_anchor);
  prompt = replace_all(prompt, "<hi_anchor>", spec.scale.hi_anchor);
  return prompt;
}

RateOutcome rate_photo(const std::string& photo_id,
                       const std::string& image_bytes,
                       const RatingPromptSpec& spec, llm::Gateway& gateway,
                       const llm::ModelProfile& profile, int k,
                       int max_image_edge) {
  if (k < 1) throw ConfigError("rate_photo: k must be >= 1");
  llm::ChatRequest request;
  request.system =
      "You rate photographs on visual environmental features and always "
      "reply with a single JSON object.";
  request.user = render_prompt(spec);
  request.image = llm::make_image_payload(image_bytes, max_image_edge);
  request.profile = profile;

  const llm::Schema schema = {
      {"score", spec.scale.lo, spec.scale.hi},
      {"confidence", spec.confidence_lo, spec.confidence_hi}};

  RateOutcome outcome;
  for (int run = 1; run <= k; ++run) {
    // Each run is its own conversation; nothing carries over.
    try {
      const llm::CompletionResult result =
          gateway.complete_structured(request, schema);
      RatingRecord record;
      record.photo_id = photo_id;
      record.feature = spec.feature;
      record.model = profile.model;
      record.run = run;
      record.score = (*result.parsed)["score"].get<double>();
      record.confidence = (*result.parsed)["confidence"].get<double>();
      outcome.records.push_back(std::move(record));
    } catch (const Error& e) {
      outcome.failures.push_back(
          {photo_id, spec.feature, profile.model, run, e.what()});
    }
  }
  return outcome;
}

std::optional<AggregatedRating> aggregate(
    const std::vector<RatingRecord>& records) {
  if (records.empty()) return std::nullopt;
  AggregatedRating agg;
  agg.photo_id = records.front().photo_id;
  agg.feature = records.front().feature;
  agg.model = records.front().model;
  double score_sum = 0.0, conf_sum = 0.0;
  for (const auto& r : records) {
    if (r.photo_id != agg.photo_id || r.feature != agg.feature ||
        r.model != agg.model)
      throw ConfigError("aggregate: mixed (photo, feature, model) keys");
    score_sum += r.score;
    conf_sum += r.confidence;
  }
  agg.run_count = static_cast<int>(records.size());
  agg.mean_score = score_sum / agg.run_count;
  agg.mean_confidence = conf_sum / agg.run_count;
  return agg;
}

std::vector<AggregatedRating> aggregate_all(
    const std::vector<RatingRecord>& records) {
  std::map<std::tuple<std::string, std::string, std::string>,
           std::vector<RatingRecord>>
      groups;
  for (const auto& r : records)
    groups[{r.photo_id, r.feature, r.model}].push_back(r);
  std::vector<AggregatedRating> out;
  out.reserve(groups.size());
  for (const auto& [key, group] : groups)
    if (auto agg = aggregate(group)) out.push_back(*agg);
  return out;  // map order = sorted by (photo, feature, model)
}

std::optional<double> composite_average(
    const std::map<std::string, double>& feature_means,
    const std::vector<std::string>& continuous_features) {
  if (continuous_features.empty())
    throw ConfigError("composite_average: no features named");
  double sum = 0.0;
  for (const auto& feature : continuous_features) {
    auto it = feature_means.find(feature);
    if (it == feature_means.end()) return std::nullopt;
    sum += it->second;
  }
  return sum / static_cast<double>(continuous_features.size());
}

stats::PearsonResult cross_model_agreement(
    const std::vector<AggregatedRating>& model_a,
    const std::vector<AggregatedRating>& model_b, const std::string& feature) {
  std::map<std::string, double> a_by_photo;
  for (const auto& agg : model_a)
    if (agg.feature == feature) a_by_photo[agg.photo_id] = agg.mean_score;
  std::vector<double> xs, ys;
  for (const auto& agg : model_b) {
    if (agg.feature != feature) continue;
    auto it = a_by_photo.find(agg.photo_id);
    if (it == a_by_photo.end()) continue;
    xs.push_back(it->second);
    ys.push_back(agg.mean_score);
  }
  return stats::pearson(xs, ys);
}

// --- files ---------------------------------------------------------------------

namespace {
const std::vector<std::string> kRatingsHeader = {
    "photo_id", "feature", "model", "run", "score", "confidence"};
const std::vector<std::string> kAggregatesHeader = {
    "photo_id", "feature", "model", "mean_score", "mean_confidence", "n_runs"};
}  // namespace

void write_ratings_csv(const std::string& path,
                       const std::vector<RatingRecord>& records) {
  csv::Table table;
  table.header = kRatingsHeader;
  for (const auto& r : records)
    table.rows.push_back({r.photo_id, r.feature, r.model, std::to_string(r.run),
                          csv::format_double(r.score),
                          csv::format_double(r.confidence)});
  csv::write_file(path, table);
}

std::vector<RatingRecord> read_ratings_csv(const std::string& path) {
  const csv::Table table = csv::read_file(path);
  if (table.header != kRatingsHeader)
    throw IoError(path + ": unexpected ratings header");
  std::vector<RatingRecord> out;
  for (const auto& row : table.rows) {
    RatingRecord r;
    r.photo_id = row[0];
    r.feature = row[1];
    r.model = row[2];
    const auto run = csv::parse_int(row[3]);
    const auto score = csv::parse_double(row[4]);
    const auto confidence = csv::parse_double(row[5]);
    if (!run || !score || !confidence)
      throw IoError(path + ": malformed ratings row for photo " + r.photo_id);
    r.run = *run;
    r.score = *score;
    r.confidence = *confidence;
    out.push_back(std::move(r));
  }
  return out;
}

void write_aggregates_csv(const std::string& path,
                          const std::vector<AggregatedRating>& aggregates) {
  csv::Table table;
  table.header = kAggregatesHeader;
  for (const auto& a : aggregates)
    table.rows.push_back({a.photo_id, a.feature, a.model,
                          csv::format_double(a.mean_score),
                          csv::format_double(a.mean_confidence),
                          std::to_string(a.run_count)});
  csv::write_file(path, table);
}

std::vector<AggregatedRating> read_aggregates_csv(const std::string& path) {
  const csv::Table table = csv::read_file(path);
  if (table.header != kAggregatesHeader)
    throw IoError(path + ": unexpected aggregates header");
  std::vector<AggregatedRating> out;
  for (const auto& row : table.rows) {
    AggregatedRating a;
    a.photo_id = row[0];
    a.feature = row[1];
    a.model = row[2];
    const auto mean_score = csv::parse_double(row[3]);
    const auto mean_conf = csv::parse_double(row[4]);
    const auto n_runs = csv::parse_int(row[5]);
    if (!mean_score || !mean_conf || !n_runs)
      throw IoError(path + ": malformed aggregates row for photo " + a.photo_id);
    a.mean_score = *mean_score;
    a.mean_confidence = *mean_conf;
    a.run_count = *n_runs;
    out.push_back(std::move(a));
  }
  return out;
}

// --- campaign ------------------------------------------------------------------

namespace {

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open photo file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string pair_key(const std::string& photo_id, const std::string& feature) {
  return photo_id + "\x1f" + feature;
}

}  // namespace

CampaignReport run_campaign(const CampaignConfig& config, llm::Gateway& gateway) {
  if (config.runs < 1) throw ConfigError("campaign: runs must be >= 1");
  if (config.state_dir.empty()) throw ConfigError("campaign: state_dir not set");
  fs::create_directories(config.state_dir);
  const fs::path partial_path = fs::path(config.state_dir) / "ratings.partial.csv";
  const fs::path failures_partial =
      fs::path(config.state_dir) / "failures.partial.csv";
  const fs::path done_path = fs::path(config.state_dir) / "pairs.done";

  // Resume: completed-pair markers, then the partial rows that belong to a
  // completed pair. Rows without a marker (interrupted mid-pair, possibly a
  // torn final line) are discarded and the pair is rated again.
  std::set<std::string> done;
  if (fs::exists(done_path)) {
    std::ifstream in(done_path);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) done.insert(line);
  }
  std::vector<RatingRecord> records;
  if (fs::exists(partial_path)) {
    std::ifstream in(partial_path, std::ios::binary);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (first) {
        first = false;
        continue;  // header
      }
      std::vector<std::string> cells;
      std::stringstream row(line);
      std::string cell;
      while (std::getline(row, cell, ',')) cells.push_back(cell);
      if (cells.size() != 6) continue;  // torn tail line
      const auto run = csv::parse_int(cells[3]);
      const auto score = csv::parse_double(cells[4]);
      const auto confidence = csv::parse_double(cells[5]);
      if (!run || !score || !confidence) continue;
      if (!done.count(pair_key(cells[0], cells[1]))) continue;
      records.push_back({cells[0], cells[1], cells[2], *run, *score, *confidence});
    }
  }

  struct Pair {
    const CampaignPhoto* photo;
    const RatingPromptSpec* spec;
  };
  std::vector<Pair> todo;
  CampaignReport report;
  for (const auto& photo : config.photos)
    for (const auto& spec : config.specs) {
      ++report.pairs_total;
      if (done.count(pair_key(photo.photo_id, spec.feature))) {
        ++report.pairs_completed_previously;
        continue;
      }
      todo.push_back({&photo, &spec});
    }

  std::mutex state_mutex;
  std::ofstream partial_out(partial_path, std::ios::app);
  if (!partial_out) throw IoError("cannot open " + partial_path.string());
  if (fs::file_size(partial_path) == 0) {
    csv::Table empty;
    empty.header = kRatingsHeader;
    partial_out << csv::format(empty);
    partial_out.flush();
  }
  std::ofstream failures_out(failures_partial, std::ios::app);
  std::ofstream done_out(done_path, std::ios::app);
  std::vector<RatingFailure> failures;

  std::atomic<size_t> next{0};
  std::atomic<bool> aborted{false};
  std::string abort_reason;
  const int workers =
      std::max(1, std::min<int>(config.jobs, static_cast<int>(todo.size())));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (!aborted.load()) {
        const size_t i = next.fetch_add(1);
        if (i >= todo.size()) return;
        const Pair& pair = todo[i];
        RateOutcome outcome;
        try {
          const std::string bytes = read_file_bytes(pair.photo->file_path);
          outcome = rate_photo(pair.photo->photo_id, bytes, *pair.spec, gateway,
                               config.profile, config.runs,
                               config.max_image_edge);
        } catch (const Error& e) {
          std::lock_guard lock(state_mutex);
          failures.push_back({pair.photo->photo_id, pair.spec->feature,
                              config.profile.model, 0, e.what()});
          // Pair intentionally left incomplete; a resumed campaign retries it.
          continue;
        }
        if (outcome.records.empty() && !outcome.failures.empty() &&
            outcome.failures.size() == static_cast<size_t>(config.runs)) {
          // Every run failed: likely the endpoint, pause the campaign.
          std::lock_guard lock(state_mutex);
          if (!aborted.exchange(true))
            abort_reason = "all " + std::to_string(config.runs) +
                           " runs failed for photo " + pair.photo->photo_id +
                           " feature '" + pair.spec->feature +
                           "': " + outcome.failures.front().error;
          return;
        }
        std::lock_guard lock(state_mutex);
        for (const auto& rec : outcome.records) {
          records.push_back(rec);
          partial_out << rec.photo_id << ',' << rec.feature << ',' << rec.model
                      << ',' << rec.run << ',' << csv::format_double(rec.score)
                      << ',' << csv::format_double(rec.confidence) << '\n';
        }
        for (const auto& f : outcome.failures) {
          failures.push_back(f);
          failures_out << f.photo_id << ',' << f.feature << ',' << f.run << ','
                       << f.error << '\n';
        }
        partial_out.flush();
        done_out << pair_key(pair.photo->photo_id, pair.spec->feature) << '\n';
        done_out.flush();
        ++report.pairs_rated_now;
      }
    });
  }
  for (auto& t : pool) t.join();
  if (aborted.load())
    throw UpstreamError("campaign paused with resumable state: " + abort_reason);

  // Deterministic finals regardless of worker completion order.
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.photo_id, a.feature, a.model, a.run) <
           std::tie(b.photo_id, b.feature, b.model, b.run);
  });
  write_ratings_csv(config.ratings_path, records);
  write_aggregates_csv(config.aggregates_path, aggregate_all(records));
  if (!config.failures_path.empty()) {
    csv::Table table;
    table.header = {"photo_id", "feature", "model", "run", "error"};
    std::sort(failures.begin(), failures.end(), [](const auto& a, const auto& b) {
      return std::tie(a.photo_id, a.feature, a.run) <
             std::tie(b.photo_id, b.feature, b.run);
    });
    for (const auto& f : failures)
      table.rows.push_back({f.photo_id, f.feature, f.model,
                            std::to_string(f.run), f.error});
    csv::write_file(config.failures_path, table);
  }
  report.failures = failures.size();
  return report;
}

}  // namespace exposome::rater
