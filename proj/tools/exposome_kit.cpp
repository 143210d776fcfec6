// exposome-kit: command-line entry points for every pipeline stage.
//
// exposome-kit {mine|extract|condense|cluster|assemble|rate|analyze|screen|
//               simulate} --config run.toml [--from-checkpoint STEP]
//               [--jobs N] [--seed S]
//
// Exit codes: 0 success, 2 config error, 3 upstream/IO error, 4 statistical
// degeneracy.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "exposome/config.hpp"
#include "exposome/core.hpp"
#include "exposome/csv.hpp"
#include "exposome/epmc.hpp"
#include "exposome/image.hpp"
#include "exposome/llm.hpp"
#include "exposome/pipeline.hpp"
#include "exposome/rater.hpp"
#include "exposome/reliability.hpp"
#include "exposome/report.hpp"
#include "exposome/screening.hpp"
#include "exposome/stats.hpp"
#include "exposome/vocab.hpp"

namespace fs = std::filesystem;
using namespace exposome;
using nlohmann::json;

namespace {

struct CliArgs {
  std::string config_path;
  std::string from_checkpoint;
  std::string features = "greenness";  // rate: greenness | catalog
  int jobs_override = 0;
  long long seed_override = -1;
};

struct Context {
  config::RunConfig cfg;
  fs::path out;

  fs::path pipeline_dir() const { return out / "pipeline"; }
  fs::path ratings_dir() const { return out / "ratings"; }
  fs::path analyze_dir() const { return out / "analyze"; }
  fs::path screen_dir() const { return out / "screen"; }
  fs::path sim_dir() const { return out / "sim"; }
  std::string ledger_path() const {
    return (pipeline_dir() / "ledger.csv").string();
  }
};

Context make_context(const CliArgs& args) {
  Context ctx;
  ctx.cfg = config::load_run_config(args.config_path);
  if (args.jobs_override > 0) ctx.cfg.jobs = args.jobs_override;
  if (args.seed_override >= 0) {
    ctx.cfg.seed = static_cast<std::uint64_t>(args.seed_override);
    ctx.cfg.simulate.seed = ctx.cfg.seed;
  }
  ctx.out = ctx.cfg.output_dir;
  fs::create_directories(ctx.out);
  return ctx;
}

llm::Gateway gateway_for(const Context& ctx, const llm::ModelProfile& profile) {
  llm::GatewayOptions options;
  options.retry = ctx.cfg.retry;
  options.max_in_flight = ctx.cfg.max_in_flight;
  options.requests_per_second = ctx.cfg.requests_per_second;
  options.audit_log_path = (ctx.out / "audit.jsonl").string();
  options.jitter_seed = ctx.cfg.seed;
  return llm::Gateway(llm::make_transport(profile.endpoint), options);
}

std::string now_iso_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

class StepTimer {
 public:
  StepTimer() : start_(std::chrono::steady_clock::now()) {}
  long elapsed_ms() const {
    return static_cast<long>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::steady_clock::now() - start_)
                                 .count());
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void ledger(const Context& ctx, const std::string& step, long in, long out,
            long wall_ms) {
  fs::create_directories(ctx.pipeline_dir());
  pipeline::append_ledger(ctx.ledger_path(),
                          {step, in, out, wall_ms, now_iso_utc()});
  std::cout << "ledger: " << step << " in=" << in << " out=" << out << " ("
            << wall_ms << " ms)\n";
}

void require_checkpoint(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path))
    throw IoError("expected checkpoint " + path.string() + "; run '" +
                  producer + "' first");
}

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name)
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

// Eligible observation rows joined with affect and greenness predictors.
struct AnalysisFrame {
  std::vector<std::string> participant;
  std::vector<std::string> photo;
  std::vector<std::optional<double>> green_trait, green_state;
  std::vector<std::optional<double>> pa_trait, pa_state;
  std::vector<std::optional<double>> na_trait, na_state;
  std::map<std::string, double> pss;  // per participant
  std::size_t eligible_participants = 0;
};

AnalysisFrame build_frame(const core::StudyDataset& dataset) {
  AnalysisFrame frame;
  std::vector<std::optional<double>> green_raw, pa_raw, na_raw;
  std::set<std::string> participants;
  for (const auto& obs : dataset.observations) {
    if (dataset.is_excluded(obs.participant_id)) continue;
    if (!obs.photo_id) continue;
    const auto affect = core::derive_affect(obs);
    frame.participant.push_back(obs.participant_id);
    frame.photo.push_back(*obs.photo_id);
    participants.insert(obs.participant_id);
    green_raw.push_back(obs.greenness_self
                            ? std::optional<double>(*obs.greenness_self)
                            : std::nullopt);
    pa_raw.push_back(affect.positive);
    na_raw.push_back(affect.negative);
  }
  frame.eligible_participants = participants.size();
  const auto green = core::person_center(frame.participant, green_raw);
  const auto pa = core::person_center(frame.participant, pa_raw);
  const auto na = core::person_center(frame.participant, na_raw);
  frame.green_trait = green.trait_row;
  frame.green_state = green.state;
  frame.pa_trait = pa.trait_row;
  frame.pa_state = pa.state;
  frame.na_trait = na.trait_row;
  frame.na_state = na.state;
  for (const auto& baseline : dataset.baselines) {
    if (dataset.is_excluded(baseline.participant_id)) continue;
    if (auto score = core::score_pss(baseline))
      frame.pss[baseline.participant_id] = *score;
  }
  return frame;
}

const std::vector<std::string> kContinuousGreennessFeatures = {
    "greenness", "nature score", "plant presence", "natural light exposure"};
const char* kBinaryGreennessFeature = "inside/outside";
const char* kCompositeFeature = "average score";

std::vector<rater::RatingPromptSpec> greenness_specs(const Context& ctx) {
  std::vector<rater::RatingPromptSpec> specs;
  for (const auto& feature : kContinuousGreennessFeatures) {
    rater::RatingPromptSpec spec;
    spec.feature = feature;
    spec.scale = rater::continuous_scale();
    specs.push_back(spec);
  }
  rater::RatingPromptSpec binary;
  binary.feature = kBinaryGreennessFeature;
  binary.scale = rater::binary_scale("inside", "outside");
  specs.push_back(binary);
  for (auto& spec : specs) {
    // Config may flip additional features onto the binary presence scale and
    // swap in the study's own prompt wording.
    auto it = ctx.cfg.feature_scales.find(spec.feature);
    if (it != ctx.cfg.feature_scales.end() && it->second == "binary" &&
        spec.feature != kBinaryGreennessFeature)
      spec.scale = rater::binary_scale("absent", "present");
    if (!ctx.cfg.rating_template.empty())
      spec.instruction_template = ctx.cfg.rating_template;
  }
  return specs;
}

// Adds per-photo composite rows (mean of the four continuous features).
void append_composites(std::vector<rater::AggregatedRating>& aggregates,
                       const std::string& model) {
  std::map<std::string, std::map<std::string, double>> by_photo;
  for (const auto& agg : aggregates)
    if (agg.model == model) by_photo[agg.photo_id][agg.feature] = agg.mean_score;
  std::vector<rater::AggregatedRating> composites;
  for (const auto& [photo, means] : by_photo) {
    const auto composite =
        rater::composite_average(means, kContinuousGreennessFeatures);
    if (!composite) continue;
    composites.push_back({photo, kCompositeFeature, model, *composite, 0.0, 0});
  }
  aggregates.insert(aggregates.end(), composites.begin(), composites.end());
}

// --- commands -------------------------------------------------------------------

int cmd_simulate(const Context& ctx) {
  const auto sim = core::simulate_study(ctx.cfg.simulate);
  const fs::path dir = ctx.sim_dir();
  fs::create_directories(dir);
  core::write_dataset(sim.dataset, (dir / "ema.csv").string(),
                      (dir / "baseline.csv").string());

  json truth;
  truth["beta"] = sim.truth.beta;
  truth["tau00"] = sim.truth.tau00;
  truth["sigma2"] = sim.truth.sigma2;
  truth["random_intercepts"] = sim.truth.random_intercepts;
  truth["participant"] = sim.truth.participant;
  truth["photo_id"] = sim.truth.photo_id;
  truth["y"] = sim.truth.y;
  truth["x_columns"] = sim.truth.x_columns;
  csv::write_file_atomic((dir / "truth.json").string(), truth.dump(2) + "\n");

  // The generated outcome doubles as a synthetic indicator keyed by photo:
  // analyze/screen consume it through the same join as real ratings.
  std::vector<rater::AggregatedRating> aggregates;
  for (size_t i = 0; i < sim.truth.y.size(); ++i)
    aggregates.push_back({sim.truth.photo_id[i], "sim indicator", "simulated",
                          sim.truth.y[i], 10.0, 1});
  std::sort(aggregates.begin(), aggregates.end(),
            [](const auto& a, const auto& b) { return a.photo_id < b.photo_id; });
  rater::write_aggregates_csv((dir / "aggregates.csv").string(), aggregates);

  if (ctx.cfg.simulate.write_photos) {
    fs::create_directories(dir / "photos");
    for (const auto& obs : sim.dataset.observations) {
      if (!obs.photo_id) continue;
      const std::uint64_t h = llm::fnv1a64(*obs.photo_id);
      std::vector<std::uint8_t> rgb(8 * 8 * 3);
      for (size_t i = 0; i < rgb.size(); ++i)
        rgb[i] = static_cast<std::uint8_t>((h >> (i % 48)) & 0xFF);
      csv::write_file_atomic((dir / "photos" / (*obs.photo_id + ".png")).string(),
                             llm::encode_png_rgb(8, 8, rgb));
    }
  }
  std::cout << "simulated " << sim.dataset.observations.size()
            << " observations for " << ctx.cfg.simulate.n_participants
            << " participants into " << dir.string() << "\n";
  return 0;
}

int cmd_mine(const Context& ctx) {
  StepTimer timer;
  epmc::MinerOptions options;
  options.cache_dir = ctx.cfg.cache_dir;
  options.retry = ctx.cfg.retry;
  epmc::EpmcClient client(options);
  const std::string query = epmc::build_query(ctx.cfg.query);
  std::cout << "query: " << query << "\n";
  const auto records = client.search(query);
  std::cout << "search hits: " << records.size() << "\n";

  std::vector<epmc::PubRecord> with_fulltext;
  for (const auto& rec : records)
    if (rec.has_fulltext) with_fulltext.push_back(rec);

  std::vector<json> corpus;
  std::vector<json> errors;
  client.fetch_fulltexts(
      with_fulltext,
      [&](const epmc::PubRecord& rec, const std::string& text) {
        corpus.push_back({{"epmc_id", rec.epmc_id},
                          {"source", rec.source},
                          {"title", rec.title},
                          {"text", text}});
      },
      [&](const epmc::PubRecord& rec, const std::string& what) {
        errors.push_back({{"epmc_id", rec.epmc_id}, {"error", what}});
      });
  std::sort(corpus.begin(), corpus.end(), [](const json& a, const json& b) {
    return a["epmc_id"].get<std::string>() < b["epmc_id"].get<std::string>();
  });
  fs::create_directories(ctx.pipeline_dir());
  pipeline::write_ndjson((ctx.pipeline_dir() / "corpus.ndjson").string(), corpus);
  if (!errors.empty())
    pipeline::write_ndjson((ctx.pipeline_dir() / "mine_errors.ndjson").string(),
                           errors);
  ledger(ctx, "mine", static_cast<long>(records.size()),
         static_cast<long>(corpus.size()), timer.elapsed_ms());
  return 0;
}

int cmd_extract(const Context& ctx) {
  StepTimer timer;
  const fs::path corpus_path = ctx.pipeline_dir() / "corpus.ndjson";
  require_checkpoint(corpus_path, "mine");
  const auto corpus = pipeline::read_ndjson(corpus_path.string());

  llm::ModelProfile profile = ctx.cfg.miner;
  profile.temperature = ctx.cfg.extract_temperature;
  llm::Gateway gateway = gateway_for(ctx, profile);

  std::vector<std::vector<json>> findings_per_pub(corpus.size());
  std::vector<json> pub_rows(corpus.size());
  std::vector<json> errors;
  std::mutex error_mutex;
  std::atomic<size_t> next{0};
  const int workers = std::max(1, std::min<int>(ctx.cfg.jobs,
                                                static_cast<int>(corpus.size())));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      while (true) {
        const size_t i = next.fetch_add(1);
        if (i >= corpus.size()) return;
        const std::string id = corpus[i].value("epmc_id", "");
        const std::string text = corpus[i].value("text", "");
        try {
          const auto findings =
              pipeline::extract_findings(id, text, gateway, profile);
          for (const auto& f : findings)
            findings_per_pub[i].push_back(
                {{"epmc_id", f.epmc_id},
                 {"context", f.context_phrase},
                 {"outcome", vocab::to_string(f.outcome)},
                 {"direction", vocab::to_string(f.direction)},
                 {"evidence", f.evidence}});
          pub_rows[i] = {{"epmc_id", id}, {"n_findings", findings.size()}};
        } catch (const Error& e) {
          std::lock_guard lock(error_mutex);
          errors.push_back({{"epmc_id", id}, {"error", e.what()}});
          pub_rows[i] = {{"epmc_id", id}, {"n_findings", 0}, {"failed", true}};
        }
      }
    });
  for (auto& t : pool) t.join();

  std::vector<json> findings;
  for (const auto& per_pub : findings_per_pub)
    findings.insert(findings.end(), per_pub.begin(), per_pub.end());
  pipeline::write_ndjson((ctx.pipeline_dir() / "findings.ndjson").string(),
                         findings);
  pipeline::write_ndjson((ctx.pipeline_dir() / "extract_pubs.ndjson").string(),
                         pub_rows);
  if (!errors.empty())
    pipeline::write_ndjson(
        (ctx.pipeline_dir() / "extract_errors.ndjson").string(), errors);
  ledger(ctx, "extract", static_cast<long>(corpus.size()),
         static_cast<long>(findings.size()), timer.elapsed_ms());
  return 0;
}

int cmd_condense(const Context& ctx) {
  StepTimer timer;
  const fs::path findings_path = ctx.pipeline_dir() / "findings.ndjson";
  require_checkpoint(findings_path, "extract");
  const auto findings = pipeline::read_ndjson(findings_path.string());

  llm::ModelProfile profile = ctx.cfg.miner;
  profile.temperature = ctx.cfg.condense_temperature;
  llm::Gateway gateway = gateway_for(ctx, profile);

  // Unique phrases only; identical phrases share one verdict.
  std::vector<std::string> phrases;
  std::set<std::string> seen;
  for (const auto& f : findings) {
    const std::string phrase = f.value("context", "");
    if (!phrase.empty() && seen.insert(phrase).second) phrases.push_back(phrase);
  }
  std::map<std::string, std::optional<std::string>> labels;
  std::mutex label_mutex;
  std::atomic<size_t> next{0};
  const int workers = std::max(1, std::min<int>(ctx.cfg.jobs,
                                                static_cast<int>(phrases.size())));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      while (true) {
        const size_t i = next.fetch_add(1);
        if (i >= phrases.size()) return;
        const auto label = pipeline::condense(phrases[i], gateway, profile);
        std::lock_guard lock(label_mutex);
        labels[phrases[i]] = label;
      }
    });
  for (auto& t : pool) t.join();

  std::vector<json> condensed;
  long with_label = 0;
  for (const auto& f : findings) {
    json row = f;
    const auto it = labels.find(f.value("context", ""));
    if (it != labels.end() && it->second) {
      row["category"] = *it->second;
      ++with_label;
    } else {
      row["category"] = nullptr;
    }
    condensed.push_back(std::move(row));
  }
  pipeline::write_ndjson((ctx.pipeline_dir() / "condensed.ndjson").string(),
                         condensed);
  ledger(ctx, "condense", static_cast<long>(findings.size()), with_label,
         timer.elapsed_ms());
  return 0;
}

int cmd_cluster(const Context& ctx) {
  StepTimer timer;
  const fs::path condensed_path = ctx.pipeline_dir() / "condensed.ndjson";
  require_checkpoint(condensed_path, "condense");
  const auto rows = pipeline::read_ndjson(condensed_path.string());

  std::vector<pipeline::CondensedFinding> findings;
  for (const auto& row : rows) findings.push_back(pipeline::finding_from_json(row));
  const auto parts = pipeline::partition(findings);

  std::vector<json> partitioned;
  long partition_total = 0;
  for (size_t d = 0; d < parts.size(); ++d)
    for (const auto& f : parts[d]) {
      json row = pipeline::finding_to_json(f);
      row["dataset"] = pipeline::partition_name(d);
      partitioned.push_back(std::move(row));
      ++partition_total;
    }
  pipeline::write_ndjson((ctx.pipeline_dir() / "partitioned.ndjson").string(),
                         partitioned);
  ledger(ctx, "partition", partition_total, partition_total,
         timer.elapsed_ms());

  llm::ModelProfile profile = ctx.cfg.miner;
  profile.temperature = ctx.cfg.cluster_temperature;
  llm::Gateway gateway = gateway_for(ctx, profile);

  StepTimer cluster_timer;
  std::vector<json> mapping_rows;
  long clusters_total = 0;
  long categories_total = 0;
  for (size_t d = 0; d < parts.size(); ++d) {
    std::vector<std::string> categories;
    std::set<std::string> unique;
    for (const auto& f : parts[d])
      if (f.category && unique.insert(*f.category).second)
        categories.push_back(*f.category);
    categories_total += static_cast<long>(categories.size());
    if (categories.empty()) continue;
    const auto clusters =
        pipeline::cluster_categories(categories, gateway, profile);
    clusters_total += static_cast<long>(clusters.size());
    for (const auto& cluster : clusters)
      for (const auto& member : cluster.members)
        mapping_rows.push_back({{"dataset", pipeline::partition_name(d)},
                                {"category", member},
                                {"cluster", cluster.label}});
  }
  pipeline::write_ndjson((ctx.pipeline_dir() / "cluster_map.ndjson").string(),
                         mapping_rows);
  ledger(ctx, "cluster", categories_total, clusters_total,
         cluster_timer.elapsed_ms());
  return 0;
}

int cmd_assemble(const Context& ctx) {
  StepTimer timer;
  const fs::path partitioned_path = ctx.pipeline_dir() / "partitioned.ndjson";
  const fs::path mapping_path = ctx.pipeline_dir() / "cluster_map.ndjson";
  require_checkpoint(partitioned_path, "cluster");
  require_checkpoint(mapping_path, "cluster");

  pipeline::Partition parts;
  std::map<std::string, size_t> name_to_index;
  for (size_t d = 0; d < 7; ++d) name_to_index[pipeline::partition_name(d)] = d;
  for (const auto& row : pipeline::read_ndjson(partitioned_path.string())) {
    const auto it = name_to_index.find(row.value("dataset", ""));
    if (it == name_to_index.end())
      throw IoError("partitioned.ndjson has an unknown dataset tag: " +
                    row.value("dataset", std::string("?")));
    parts[it->second].push_back(pipeline::finding_from_json(row));
  }
  std::array<std::map<std::string, std::string>, 7> mapping;
  std::array<std::set<std::string>, 7> clusters_per_dataset;
  for (const auto& row : pipeline::read_ndjson(mapping_path.string())) {
    const auto it = name_to_index.find(row.value("dataset", ""));
    if (it == name_to_index.end()) continue;
    mapping[it->second][row.value("category", "")] = row.value("cluster", "");
    clusters_per_dataset[it->second].insert(row.value("cluster", ""));
  }

  long clusters_nonnull = 0;
  for (size_t d = 0; d < 7; ++d)
    if (d != pipeline::kNullPartition)
      clusters_nonnull += static_cast<long>(clusters_per_dataset[d].size());

  const auto effects = pipeline::assemble_effects(parts, mapping);
  pipeline::write_effects_json((ctx.pipeline_dir() / "effects.json").string(),
                               effects);
  ledger(ctx, "assemble", clusters_nonnull, static_cast<long>(effects.size()),
         timer.elapsed_ms());

  StepTimer merge_timer;
  const auto unique = pipeline::merge_unique(effects);
  json unique_json = json::array();
  for (const auto& u : unique)
    unique_json.push_back({{"category", u.category}, {"effects", u.effect_ids}});
  csv::write_file_atomic((ctx.pipeline_dir() / "unique.json").string(),
                         unique_json.dump(2) + "\n");
  ledger(ctx, "merge", static_cast<long>(effects.size()),
         static_cast<long>(unique.size()), merge_timer.elapsed_ms());
  std::cout << "effects: " << effects.size()
            << ", unique categories: " << unique.size() << "\n";
  return 0;
}

std::vector<rater::CampaignPhoto> discover_photos(
    const Context& ctx, const core::StudyDataset& dataset) {
  if (ctx.cfg.photos_dir.empty())
    throw ConfigError("paths.photos_dir is not set");
  if (!fs::exists(ctx.cfg.photos_dir))
    throw IoError("photos directory does not exist: " + ctx.cfg.photos_dir);
  std::vector<rater::CampaignPhoto> photos;
  std::set<std::string> seen;
  for (const auto& obs : dataset.observations) {
    if (!obs.photo_id || !seen.insert(*obs.photo_id).second) continue;
    for (const char* ext : {".png", ".jpg", ".jpeg"}) {
      const fs::path path = fs::path(ctx.cfg.photos_dir) / (*obs.photo_id + ext);
      if (fs::exists(path)) {
        photos.push_back({*obs.photo_id, path.string()});
        break;
      }
    }
  }
  std::sort(photos.begin(), photos.end(),
            [](const auto& a, const auto& b) { return a.photo_id < b.photo_id; });
  return photos;
}

int cmd_rate(const Context& ctx, const std::string& feature_set) {
  const auto dataset = core::load_dataset(ctx.cfg.ema_csv, ctx.cfg.baseline_csv);
  const auto photos = discover_photos(ctx, dataset);
  if (photos.empty()) throw IoError("no photos found for any observation");

  std::vector<rater::RatingPromptSpec> specs;
  int runs = ctx.cfg.runs_greenness;
  if (feature_set == "greenness") {
    specs = greenness_specs(ctx);
  } else if (feature_set == "catalog") {
    const std::string catalog_path =
        !ctx.cfg.features_catalog.empty()
            ? ctx.cfg.features_catalog
            : (ctx.pipeline_dir() / "effects.json").string();
    if (!fs::exists(catalog_path))
      throw IoError("expected effects catalog " + catalog_path +
                    "; run 'assemble' first or set paths.features_catalog");
    const auto effects = pipeline::read_effects_json(catalog_path);
    std::set<std::string> unique;
    for (const auto& effect : effects)
      unique.insert(pipeline::normalize_category(effect.category));
    for (const auto& category : unique) {
      rater::RatingPromptSpec spec;
      spec.feature = category;
      const auto scale_it = ctx.cfg.feature_scales.find(category);
      spec.scale = scale_it != ctx.cfg.feature_scales.end() &&
                           scale_it->second == "binary"
                       ? rater::binary_scale("absent", "present")
                       : rater::continuous_scale();
      if (!ctx.cfg.rating_template.empty())
        spec.instruction_template = ctx.cfg.rating_template;
      specs.push_back(spec);
    }
    runs = ctx.cfg.runs_catalog;
  } else {
    throw ConfigError("unknown feature set '" + feature_set +
                      "' (greenness or catalog)");
  }
  if (specs.empty()) throw ConfigError("no rating features resolved");

  const auto campaign = [&](const llm::ModelProfile& profile,
                            const std::string& suffix) {
    rater::CampaignConfig config;
    config.photos = photos;
    config.specs = specs;
    config.profile = profile;
    config.runs = runs;
    config.jobs = ctx.cfg.jobs;
    config.max_image_edge = ctx.cfg.max_image_edge;
    config.state_dir = (ctx.ratings_dir() / ("state" + suffix)).string();
    config.ratings_path =
        (ctx.ratings_dir() / ("ratings" + suffix + ".csv")).string();
    config.aggregates_path =
        (ctx.ratings_dir() / ("aggregates" + suffix + ".csv")).string();
    config.failures_path =
        (ctx.ratings_dir() / ("failures" + suffix + ".csv")).string();
    llm::Gateway gateway = gateway_for(ctx, profile);
    const auto report = rater::run_campaign(config, gateway);
    std::cout << "model " << profile.model << ": " << report.pairs_total
              << " pairs (" << report.pairs_completed_previously
              << " resumed, " << report.pairs_rated_now << " rated, "
              << report.failures << " failed runs)\n";
  };
  campaign(ctx.cfg.rater_a, "");
  if (ctx.cfg.rater_b) campaign(*ctx.cfg.rater_b, "_b");
  return 0;
}

struct IndicatorFit {
  std::string indicator;
  stats::LmmFit fit;
};

std::vector<IndicatorFit> fit_indicator_models(
    const AnalysisFrame& frame,
    const std::map<std::string, std::map<std::string, double>>& scores,
    const std::vector<std::string>& indicators, bool affect_predictors,
    bool grand_center_traits) {
  std::vector<IndicatorFit> fits;
  for (const auto& indicator : indicators) {
    const auto& by_photo = scores.at(indicator);
    stats::LmmSpec spec;
    std::vector<std::string> participants;
    for (size_t i = 0; i < frame.photo.size(); ++i) {
      const auto it = by_photo.find(frame.photo[i]);
      if (it == by_photo.end()) continue;
      if (affect_predictors) {
        if (!frame.pa_trait[i] || !frame.pa_state[i] || !frame.na_trait[i] ||
            !frame.na_state[i])
          continue;
      } else {
        if (!frame.green_trait[i] || !frame.green_state[i]) continue;
      }
      spec.y.push_back(it->second);
      if (spec.x_cols.empty()) spec.x_cols.resize(affect_predictors ? 5 : 3);
      size_t c = 0;
      spec.x_cols[c++].push_back(1.0);
      if (affect_predictors) {
        spec.x_cols[c++].push_back(*frame.pa_trait[i]);
        spec.x_cols[c++].push_back(*frame.pa_state[i]);
        spec.x_cols[c++].push_back(*frame.na_trait[i]);
        spec.x_cols[c++].push_back(*frame.na_state[i]);
      } else {
        spec.x_cols[c++].push_back(*frame.green_trait[i]);
        spec.x_cols[c++].push_back(*frame.green_state[i]);
      }
      participants.push_back(frame.participant[i]);
    }
    if (spec.y.size() < 8) continue;  // indicator too sparse to model
    if (grand_center_traits) {
      // Trait columns: 1 (and 3 for the affect set). Shifts only the intercept.
      for (size_t col : affect_predictors ? std::vector<size_t>{1, 3}
                                          : std::vector<size_t>{1}) {
        double mean = 0.0;
        for (double v : spec.x_cols[col]) mean += v;
        mean /= static_cast<double>(spec.x_cols[col].size());
        for (double& v : spec.x_cols[col]) v -= mean;
      }
    }
    std::size_t n_groups = 0;
    spec.group = stats::make_group_index(participants, &n_groups);
    if (n_groups < 2)
      throw DegenerateError("analyze: fewer than 2 eligible participants for " +
                            indicator);
    spec.x_names =
        affect_predictors
            ? std::vector<std::string>{"(intercept)", "Positive affect trait",
                                       "Positive affect state",
                                       "Negative affect trait",
                                       "Negative affect state"}
            : std::vector<std::string>{"(intercept)",
                                       "Subjective greenness trait",
                                       "Subjective greenness state"};
    fits.push_back({indicator, stats::fit_random_intercept(spec)});
  }
  return fits;
}

int cmd_analyze(const Context& ctx) {
  const auto dataset = core::load_dataset(ctx.cfg.ema_csv, ctx.cfg.baseline_csv);
  const AnalysisFrame frame = build_frame(dataset);
  if (frame.eligible_participants < 2)
    throw DegenerateError("analyze: fewer than 2 eligible participants");

  const fs::path aggregates_path =
      !ctx.cfg.aggregates_csv.empty() ? fs::path(ctx.cfg.aggregates_csv)
                                      : ctx.ratings_dir() / "aggregates.csv";
  require_checkpoint(aggregates_path, "rate");
  auto aggregates = rater::read_aggregates_csv(aggregates_path.string());
  if (aggregates.empty()) throw IoError("aggregates.csv is empty");
  std::string model = aggregates.front().model;
  for (const auto& agg : aggregates)
    if (agg.model == ctx.cfg.rater_a.model) {
      model = ctx.cfg.rater_a.model;
      break;
    }
  append_composites(aggregates, model);

  std::map<std::string, std::map<std::string, double>> scores;
  for (const auto& agg : aggregates)
    if (agg.model == model) scores[agg.feature][agg.photo_id] = agg.mean_score;
  std::vector<std::string> indicators;
  for (const auto& [feature, by_photo] : scores) indicators.push_back(feature);

  const fs::path dir = ctx.analyze_dir();
  fs::create_directories(dir);

  // Model tables: indicator ~ subjective greenness, indicator ~ affect.
  for (const bool affect : {false, true}) {
    const std::string set_name = affect ? "affect" : "greenness";
    const auto fits = fit_indicator_models(frame, scores, indicators, affect,
                                           ctx.cfg.grand_center_traits);
    if (fits.empty()) continue;
    std::vector<report::FitColumn> columns;
    for (const auto& fit : fits) {
      columns.push_back({fit.indicator, fit.fit});
      csv::write_file_atomic(
          (dir / ("fit_" + sanitize(fit.indicator) + "_" + set_name + ".json"))
              .string(),
          report::fit_to_json(fit.fit));
    }
    const std::string title =
        affect ? "Indicators predicted by affect (trait and state)"
               : "Indicators predicted by subjective greenness";
    csv::write_file_atomic((dir / ("table_" + set_name + ".md")).string(),
                           report::markdown_model_table(title, columns));
    report::write_model_table_csv(
        (dir / ("table_" + set_name + ".csv")).string(), columns);
  }

  // Trait-level correlations against chronic stress.
  csv::Table correlations;
  correlations.header = {"indicator", "r", "p", "n"};
  std::vector<std::string> corr_labels;
  std::vector<double> corr_values;
  for (const auto& indicator : indicators) {
    const auto& by_photo = scores.at(indicator);
    std::map<std::string, std::pair<double, int>> sums;
    for (size_t i = 0; i < frame.photo.size(); ++i) {
      const auto it = by_photo.find(frame.photo[i]);
      if (it == by_photo.end()) continue;
      auto& acc = sums[frame.participant[i]];
      acc.first += it->second;
      acc.second += 1;
    }
    std::vector<double> xs, ys;
    for (const auto& [pid, acc] : sums) {
      const auto it = frame.pss.find(pid);
      if (it == frame.pss.end()) continue;
      xs.push_back(acc.first / acc.second);
      ys.push_back(it->second);
    }
    if (xs.size() < 3) continue;
    const auto r = stats::pearson(xs, ys);
    if (!r.defined) continue;
    correlations.rows.push_back({indicator, csv::format_double(r.r),
                                 csv::format_double(r.p), std::to_string(r.n)});
    corr_labels.push_back(indicator);
    corr_values.push_back(r.r);
  }
  csv::write_file((dir / "correlations.csv").string(), correlations);
  if (!corr_labels.empty())
    csv::write_file_atomic(
        (dir / "fig2a_trait_correlations.svg").string(),
        report::svg_bar_chart("Trait correlations with perceived stress",
                              corr_labels, corr_values, "Pearson r"));

  // Cross-model agreement when a replication model was rated.
  const fs::path aggregates_b_path = ctx.ratings_dir() / "aggregates_b.csv";
  if (fs::exists(aggregates_b_path)) {
    auto aggregates_b = rater::read_aggregates_csv(aggregates_b_path.string());
    if (!aggregates_b.empty()) {
      const std::string model_b = aggregates_b.front().model;
      append_composites(aggregates_b, model_b);
      csv::Table agreement;
      agreement.header = {"feature", "r", "p", "n"};
      for (const auto& indicator : indicators) {
        std::map<std::string, double> b_by_photo;
        for (const auto& agg : aggregates_b)
          if (agg.model == model_b && agg.feature == indicator)
            b_by_photo[agg.photo_id] = agg.mean_score;
        std::vector<double> xs, ys;
        for (const auto& [photo, score] : scores.at(indicator)) {
          const auto it = b_by_photo.find(photo);
          if (it == b_by_photo.end()) continue;
          xs.push_back(score);
          ys.push_back(it->second);
        }
        if (xs.size() < 3) continue;
        const auto r = stats::pearson(xs, ys);
        if (!r.defined) continue;
        agreement.rows.push_back({indicator, csv::format_double(r.r),
                                  csv::format_double(r.p),
                                  std::to_string(r.n)});
        csv::write_file_atomic(
            (dir / ("fig2b_" + sanitize(indicator) + ".svg")).string(),
            report::svg_scatter("Cross-model agreement: " + indicator, xs, ys,
                                model, model_b, r.r));
      }
      csv::write_file((dir / "agreement.csv").string(), agreement);
    }
  }

  // Run-level reliability (runs as items) when multi-run ratings exist.
  const fs::path ratings_path = ctx.ratings_dir() / "ratings.csv";
  if (fs::exists(ratings_path)) {
    const auto records = rater::read_ratings_csv(ratings_path.string());
    int max_run = 0;
    for (const auto& rec : records) max_run = std::max(max_run, rec.run);
    if (max_run >= 2) {
      // photo -> (participant, time index) via each participant's alarm order.
      std::map<std::string, std::vector<std::string>> photos_by_participant;
      for (const auto& obs : dataset.observations) {
        if (!obs.photo_id || dataset.is_excluded(obs.participant_id)) continue;
        photos_by_participant[obs.participant_id].push_back(*obs.photo_id);
      }
      std::map<std::string, std::pair<size_t, size_t>> photo_cell;
      size_t max_times = 0, person_index = 0;
      for (const auto& [pid, photo_list] : photos_by_participant) {
        for (size_t t = 0; t < photo_list.size(); ++t)
          photo_cell[photo_list[t]] = {person_index, t};
        max_times = std::max(max_times, photo_list.size());
        ++person_index;
      }
      csv::Table reliability;
      reliability.header = {"feature", "model", "r_cn", "r_krn",
                            "missing_fraction", "unbalanced_warning"};
      std::set<std::string> features;
      for (const auto& rec : records)
        if (rec.model == model) features.insert(rec.feature);
      const double nan = std::numeric_limits<double>::quiet_NaN();
      for (const auto& feature : features) {
        std::vector<std::vector<std::vector<double>>> cube(
            person_index, std::vector<std::vector<double>>(
                              max_times, std::vector<double>(max_run, nan)));
        for (const auto& rec : records) {
          if (rec.model != model || rec.feature != feature) continue;
          const auto it = photo_cell.find(rec.photo_id);
          if (it == photo_cell.end()) continue;
          cube[it->second.first][it->second.second][rec.run - 1] = rec.score;
        }
        try {
          const auto rel = stats::multilevel_reliability(cube);
          reliability.rows.push_back(
              {feature, model, csv::format_double(rel.r_cn),
               csv::format_double(rel.r_krn),
               csv::format_double(rel.missing_fraction),
               rel.unbalanced_warning ? "1" : "0"});
        } catch (const DegenerateError&) {
          // Not enough structure for this feature; skipped.
        }
      }
      csv::write_file((dir / "reliability.csv").string(), reliability);
    }
  }
  std::cout << "analysis written to " << dir.string() << "\n";
  return 0;
}

int cmd_screen(const Context& ctx) {
  const auto dataset = core::load_dataset(ctx.cfg.ema_csv, ctx.cfg.baseline_csv);
  const std::string catalog_path =
      !ctx.cfg.features_catalog.empty()
          ? ctx.cfg.features_catalog
          : (ctx.pipeline_dir() / "effects.json").string();
  if (!fs::exists(catalog_path))
    throw IoError("expected effects catalog " + catalog_path +
                  "; run 'assemble' first or set paths.features_catalog");
  const auto catalog = pipeline::read_effects_json(catalog_path);
  if (catalog.empty()) throw ConfigError("effects catalog is empty");

  const fs::path aggregates_path =
      !ctx.cfg.aggregates_csv.empty() ? fs::path(ctx.cfg.aggregates_csv)
                                      : ctx.ratings_dir() / "aggregates.csv";
  require_checkpoint(aggregates_path, "rate");
  const auto aggregates = rater::read_aggregates_csv(aggregates_path.string());

  stats::ScreeningOptions options;
  options.alpha = ctx.cfg.alpha;
  options.jobs = ctx.cfg.jobs;
  const auto summary = stats::screen_features(dataset, aggregates, catalog,
                                              options);

  const fs::path dir = ctx.screen_dir();
  fs::create_directories(dir);
  stats::write_screening_csv((dir / "screening.csv").string(), summary.rows);
  csv::write_file_atomic((dir / "summary.md").string(),
                         report::markdown_screening_summary(summary));

  std::vector<std::string> categories;
  std::vector<double> hits, misses;
  for (const auto& cell : summary.cells) {
    if (cell.key == "overall") continue;
    categories.push_back(cell.key);
    hits.push_back(cell.n_hit);
    misses.push_back(cell.n_tested - cell.n_hit);
  }
  if (!categories.empty())
    csv::write_file_atomic(
        (dir / "fig3_detections.svg").string(),
        report::svg_stacked_counts(
            "Literature-expected detections at p < 0.05", categories,
            {"hits", "misses"}, {hits, misses}));
  for (const auto& cell : summary.cells)
    std::cout << cell.key << ": " << cell.n_hit << "/" << cell.n_tested
              << " hits (rate " << cell.hit_rate << ", exceedance p "
              << cell.exceedance_p << ")\n";
  return 0;
}

const std::vector<std::string> kPipelineOrder = {"mine", "extract", "condense",
                                                 "cluster", "assemble"};

int run_pipeline_command(const Context& ctx, const std::string& target,
                         const std::string& from_checkpoint) {
  const auto index_of = [&](const std::string& name) {
    const auto it = std::find(kPipelineOrder.begin(), kPipelineOrder.end(), name);
    if (it == kPipelineOrder.end())
      throw ConfigError("unknown pipeline step '" + name + "'");
    return static_cast<size_t>(it - kPipelineOrder.begin());
  };
  const size_t target_index = index_of(target);
  size_t start_index = target_index;
  if (!from_checkpoint.empty()) {
    start_index = index_of(from_checkpoint);
    if (start_index > target_index)
      throw ConfigError("--from-checkpoint " + from_checkpoint +
                        " is after '" + target + "'");
  }
  for (size_t i = start_index; i <= target_index; ++i) {
    const std::string& step = kPipelineOrder[i];
    int rc = 0;
    if (step == "mine") rc = cmd_mine(ctx);
    else if (step == "extract") rc = cmd_extract(ctx);
    else if (step == "condense") rc = cmd_condense(ctx);
    else if (step == "cluster") rc = cmd_cluster(ctx);
    else if (step == "assemble") rc = cmd_assemble(ctx);
    if (rc != 0) return rc;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"exposome-kit: visual-exposome mining, rating, and analysis"};
  app.require_subcommand(1);

  CliArgs args;
  const auto add_common = [&](CLI::App* sub, bool pipeline_step) {
    sub->add_option("--config", args.config_path, "run configuration (TOML)")
        ->required();
    sub->add_option("--jobs", args.jobs_override, "parallelism bound");
    sub->add_option("--seed", args.seed_override, "seed override");
    if (pipeline_step)
      sub->add_option("--from-checkpoint", args.from_checkpoint,
                      "start the pipeline at this earlier step");
  };

  for (const char* name : {"mine", "extract", "condense", "cluster", "assemble"})
    add_common(app.add_subcommand(name, std::string("pipeline step: ") + name),
               true);
  auto* rate = app.add_subcommand("rate", "rate photographs through the VLM");
  add_common(rate, false);
  rate->add_option("--features", args.features,
                   "feature set: greenness or catalog");
  add_common(app.add_subcommand("analyze", "fit models and emit tables/plots"),
             false);
  add_common(app.add_subcommand("screen", "screen the literature catalog"),
             false);
  add_common(app.add_subcommand("simulate", "generate a synthetic study"),
             false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const Context ctx = make_context(args);
    if (command == "simulate") return cmd_simulate(ctx);
    if (command == "rate") return cmd_rate(ctx, args.features);
    if (command == "analyze") return cmd_analyze(ctx);
    if (command == "screen") return cmd_screen(ctx);
    return run_pipeline_command(ctx, command, args.from_checkpoint);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DegenerateError& e) {
    std::cerr << "statistical degeneracy: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
