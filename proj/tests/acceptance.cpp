// Acceptance suite: one line per criterion, nonzero exit when any fails.
// Criterion 9 needs prepared study data (EXPOSOME_OSF_DIR) and is reported
// as SKIP when that directory is not present.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "exposome/core.hpp"
#include "exposome/csv.hpp"
#include "exposome/llm.hpp"
#include "exposome/pipeline.hpp"
#include "exposome/rater.hpp"
#include "exposome/reliability.hpp"
#include "exposome/rng.hpp"
#include "exposome/screening.hpp"
#include "exposome/stats.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;
using namespace exposome;
using nlohmann::json;

namespace {

struct Criterion {
  std::string name;
  std::function<bool(std::string&)> run;  // fills a detail string
  bool optional = false;
};

double seconds_since(const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

// --- 1. REML oracle equivalence ------------------------------------------------

bool reml_oracle_equivalence(std::string& detail) {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(20250301);
  double worst_sigma = 0.0, worst_tau = 0.0, worst_grid = 0.0;
  int done = 0;
  while (done < 25) {
    const int g = 5 + rng.uniform_int(0, 45);
    const int n = 2 + rng.uniform_int(0, 28);
    std::vector<std::vector<double>> groups(g, std::vector<double>(n));
    for (auto& group : groups) {
      const double b = rng.normal(0.0, std::sqrt(2.0));
      for (auto& v : group) v = 3.0 + b + rng.normal(0.0, 1.0);
    }
    const auto oracle = testutil::balanced_anova(groups);
    if (!oracle.interior) continue;  // the criterion targets interior solutions
    ++done;
    const auto spec = testutil::spec_from_groups(groups);
    const auto fit = stats::fit_random_intercept(spec);
    worst_sigma = std::max(worst_sigma,
                           std::abs(fit.sigma2 - oracle.msw) / oracle.msw);
    worst_tau = std::max(worst_tau,
                         std::abs(fit.tau00 - oracle.tau00) / oracle.tau00);

    // 1e5-point grid: log-spaced across the realistic theta span for these
    // designs, plus the boundary.
    const stats::RemlObjective objective(spec);
    double grid_min = objective(0.0);
    for (int i = 0; i < 100000; ++i) {
      const double theta = std::pow(10.0, -2.0 + 4.0 * i / 99999.0);
      grid_min = std::min(grid_min, objective(theta));
    }
    worst_grid = std::max(worst_grid, std::abs(grid_min - fit.reml_deviance));
  }
  const double elapsed = seconds_since(start);
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "rel err sigma2 %.2e, tau00 %.2e; |grid-opt| %.2e; %.1f s",
                worst_sigma, worst_tau, worst_grid, elapsed);
  detail = buf;
  return worst_sigma < 1e-6 && worst_tau < 1e-6 && worst_grid < 1e-6 &&
         elapsed < 10.0;
}

// --- 2. parameter recovery -------------------------------------------------------

bool parameter_recovery(std::string& detail) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<double> tau_err, sigma_err;
  int covered = 0;
  const int seeds = 100;
  for (int seed = 1; seed <= seeds; ++seed) {
    core::SimulationConfig config;
    config.n_participants = 100;
    config.days = 5;
    config.alarms_per_day = 5;
    config.tau00_true = 1.0;
    config.sigma2_true = 4.0;
    config.beta_true = {2.0, 0.5};
    config.seed = 7000 + seed;
    const auto sim = core::simulate_study(config);
    stats::LmmSpec spec;
    spec.y = sim.truth.y;
    std::size_t n_groups = 0;
    spec.group = stats::make_group_index(sim.truth.participant, &n_groups);
    spec.x_cols = {std::vector<double>(spec.y.size(), 1.0),
                   sim.truth.x_columns[0]};
    const auto fit = stats::fit_random_intercept(spec);
    tau_err.push_back(std::abs(fit.tau00 - 1.0));
    sigma_err.push_back(std::abs(fit.sigma2 - 4.0));
    if (fit.ci_lo[1] <= 0.5 && 0.5 <= fit.ci_hi[1]) ++covered;
  }
  const double med_tau = testutil::median(tau_err);
  const double med_sigma = testutil::median(sigma_err);
  const double coverage = 100.0 * covered / seeds;
  const double elapsed = seconds_since(start);
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "median |tau-1| %.3f, |sigma2-4| %.3f, CI coverage %.0f%%; %.1f s",
                med_tau, med_sigma, coverage, elapsed);
  detail = buf;
  return med_tau < 0.2 && med_sigma < 0.3 && coverage >= 90.0 &&
         coverage <= 99.0 && elapsed < 60.0;
}

// --- 3. null calibration ---------------------------------------------------------

bool null_calibration(std::string& detail) {
  const auto start = std::chrono::steady_clock::now();
  // (a) p-value uniformity of the slope under beta1 = 0.
  std::vector<double> p_values;
  for (int seed = 1; seed <= 1000; ++seed) {
    Rng rng(40000 + seed);
    stats::LmmSpec spec;
    std::vector<double> x_col;
    for (int grp = 0; grp < 30; ++grp) {
      const double b = rng.normal(0.0, 1.0);
      for (int obs = 0; obs < 10; ++obs) {
        const double x = rng.normal();
        spec.y.push_back(2.0 + b + rng.normal(0.0, 1.5));
        spec.group.push_back(grp);
        x_col.push_back(x);
      }
    }
    spec.x_cols = {std::vector<double>(spec.y.size(), 1.0), x_col};
    const auto fit = stats::fit_random_intercept(spec);
    p_values.push_back(fit.p_value[1]);
  }
  const double ks = testutil::ks_uniform(p_values);

  // (b) screening on 400 features independent of the outcomes.
  core::SimulationConfig config;
  config.n_participants = 40;
  config.days = 2;
  config.alarms_per_day = 5;
  config.seed = 555;
  const auto sim = core::simulate_study(config);
  std::vector<rater::AggregatedRating> aggregates;
  std::vector<pipeline::LiteratureEffect> catalog;
  Rng feature_rng(808);
  for (int f = 0; f < 400; ++f) {
    const std::string name = "null feature " + std::to_string(f);
    for (const auto& obs : sim.dataset.observations)
      aggregates.push_back({*obs.photo_id, name, "stub", // independent noise
                            feature_rng.uniform(1.0, 10.0), 9.0, 1});
    const auto outcome = f % 3 == 0   ? vocab::Outcome::stress
                         : f % 3 == 1 ? vocab::Outcome::positive_affect
                                      : vocab::Outcome::negative_affect;
    const auto direction = f % 2 ? vocab::Direction::increase
                                 : vocab::Direction::decrease;
    catalog.push_back({name, outcome, direction, 3, {"A", "B", "C"}});
  }
  stats::ScreeningOptions options;
  options.jobs = 2;
  const auto summary =
      stats::screen_features(sim.dataset, aggregates, catalog, options);
  double sig_rate = 0.0, hit_rate = 0.0;
  int tested = 0;
  for (const auto& cell : summary.cells)
    if (cell.key == "overall") {
      sig_rate = cell.significance_rate;
      hit_rate = cell.hit_rate;
      tested = cell.n_tested;
    }
  const double elapsed = seconds_since(start);
  char buf[240];
  std::snprintf(buf, sizeof buf,
                "KS %.4f; null significance rate %.3f (directed hit rate "
                "%.3f) over %d tests; %.1f s",
                ks, sig_rate, hit_rate, tested, elapsed);
  detail = buf;
  return ks < 0.05 && sig_rate >= 0.02 && sig_rate <= 0.09 && elapsed < 300.0;
}

// --- 4. ICC consistency with the published values --------------------------------

bool icc_consistency(std::string& detail) {
  char a[16], b[16];
  std::snprintf(a, sizeof a, "%.2f", stats::icc(3.59, 0.76));
  std::snprintf(b, sizeof b, "%.2f", stats::icc(6.35, 1.47));
  detail = "icc(0.76|3.59) -> " + std::string(a) + ", icc(1.47|6.35) -> " + b;
  return std::string(a) == "0.17" && std::string(b) == "0.19";
}

// --- 5. reliability formulas ------------------------------------------------------

bool reliability_formulas(std::string& detail) {
  // Direct-formula oracle first.
  const double r_cn_expected = 1.0 / (1.0 + 1.0 / 5.0);              // 0.8333
  const double r_krn_expected = 1.0 / (1.0 + 1.0 / 49.0 + 1.0 / 245.0);  // 0.9761

  Rng rng(31415);
  const int np = 500, nt = 49, ni = 5;
  std::vector<double> person(np), person_time;
  std::vector<std::vector<std::vector<double>>> data(
      np, std::vector<std::vector<double>>(nt, std::vector<double>(ni)));
  for (int p = 0; p < np; ++p) {
    const double a = rng.normal();
    for (int t = 0; t < nt; ++t) {
      const double ab = rng.normal();
      for (int i = 0; i < ni; ++i)
        data[p][t][i] = 10.0 + a + ab + rng.normal();
    }
  }
  const auto result = stats::multilevel_reliability(data);
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "R_Cn %.4f (oracle %.4f), R_KRn %.4f (oracle %.4f)",
                result.r_cn, r_cn_expected, result.r_krn, r_krn_expected);
  detail = buf;
  return std::abs(result.r_cn - r_cn_expected) <= 0.03 &&
         std::abs(result.r_krn - r_krn_expected) <= 0.02;
}

// --- 6. pipeline count ledger on the engineered 50-document corpus ---------------

struct StubCorpus {
  std::vector<std::pair<std::string, std::string>> docs;  // id, text
};

// Every branch is planted: survivors with >= 3 distinct pubs, categories with
// exactly 2, a within-publication duplicate, a null-direction bucket, a
// condense non-response, a re-prompted over-long label, and a cluster-driven
// merge that lifts a category over the 3-study bar.
StubCorpus build_planted_corpus() {
  StubCorpus corpus;
  std::map<std::string, std::string> texts;
  const auto add = [&](const std::string& doc, const std::string& phrase,
                       const std::string& outcome, const std::string& direction) {
    texts[doc] += "FINDING: " + phrase + " | " + outcome + " | " + direction + "\n";
  };
  // survives: forest light (PA increase, pubs D01 D02 D03)
  add("D01", "Forest Light exposure", "positive affect", "increase");
  add("D02", "Forest Light exposure", "positive affect", "increase");
  add("D03", "Forest Light exposure", "positive affect", "increase");
  // dropped at the 3-study bar: water view (2 pubs)
  add("D04", "Water View scenery", "positive affect", "increase");
  add("D05", "Water View scenery", "positive affect", "increase");
  // condense non-response
  add("D15", "unintelligible visual blob", "positive affect", "increase");
  // over-long first label, fixed on the re-prompt: verbose forest (3 pubs)
  add("D22", "verbose forest trail detail", "positive affect", "decrease");
  add("D23", "verbose forest trail detail", "positive affect", "decrease");
  add("D24", "verbose forest trail detail", "positive affect", "decrease");
  // survives: traffic noise (NA increase, 4 pubs)
  add("D06", "Traffic Noise din", "negative affect", "increase");
  add("D07", "Traffic Noise din", "negative affect", "increase");
  add("D08", "Traffic Noise din", "negative affect", "increase");
  add("D09", "Traffic Noise din", "negative affect", "increase");
  // cluster-driven merge: river walk + river stroll -> 3 distinct pubs
  add("D16", "River Walk path", "negative affect", "decrease");
  add("D17", "River Walk path", "negative affect", "decrease");
  add("D18", "River Stroll path", "negative affect", "decrease");
  // survives: forest light again under stress decrease (D01 supports both)
  add("D01", "Forest Light exposure", "stress", "decrease");
  add("D10", "Forest Light exposure", "stress", "decrease");
  add("D11", "Forest Light exposure", "stress", "decrease");
  // duplicate publication counted once -> only 2 distinct -> dropped
  add("D12", "Crowd Density pack", "stress", "increase");
  add("D12", "Crowd Density pack", "stress", "increase");
  add("D13", "Crowd Density pack", "stress", "increase");
  // null-direction bucket
  add("D14", "Office Plants greenery", "positive affect", "null");
  add("D19", "Office Plants greenery", "positive affect", "null");
  add("D20", "Office Plants greenery", "positive affect", "null");

  std::set<std::string> with_findings;
  for (const auto& [doc, text] : texts) with_findings.insert(doc);
  for (int i = 1; i <= 50; ++i) {
    char id[8];
    std::snprintf(id, sizeof id, "D%02d", i);
    std::string text = "Article:\nStudy body for " + std::string(id) + ".\n";
    if (texts.count(id)) text += texts[id];
    corpus.docs.push_back({id, text});
  }
  return corpus;
}

bool pipeline_count_ledger(std::string& detail) {
  const auto start = std::chrono::steady_clock::now();
  const StubCorpus corpus = build_planted_corpus();

  llm::GatewayOptions options;
  options.sleep_ms = [](int) {};
  llm::Gateway gateway(llm::make_transport("stub://auto"), options);
  llm::ModelProfile extract_profile;
  extract_profile.endpoint = "stub://auto";
  extract_profile.model = "stub";
  extract_profile.temperature = 0.1;
  llm::ModelProfile zero_profile = extract_profile;
  zero_profile.temperature = 0.0;

  std::vector<pipeline::CondensedFinding> condensed;
  long findings_total = 0, pubs_with_zero = 0;
  pipeline::CondenseMemo memo;
  for (const auto& [doc, text] : corpus.docs) {
    const auto findings =
        pipeline::extract_findings(doc, text, gateway, extract_profile);
    if (findings.empty()) ++pubs_with_zero;
    findings_total += static_cast<long>(findings.size());
    for (const auto& finding : findings) {
      pipeline::CondensedFinding cf;
      cf.finding = finding;
      cf.category = pipeline::condense(finding.context_phrase, gateway,
                                       zero_profile, &memo);
      condensed.push_back(std::move(cf));
    }
  }
  long condensed_count = 0;
  for (const auto& cf : condensed)
    if (cf.category) ++condensed_count;

  const auto parts = pipeline::partition(condensed);
  long partition_sum = 0;
  for (const auto& part : parts) partition_sum += static_cast<long>(part.size());
  const std::vector<long> expected_sizes = {5, 3, 4, 3, 3, 3, 3};
  bool sizes_exact = true;
  for (size_t d = 0; d < 7; ++d)
    sizes_exact = sizes_exact &&
                  static_cast<long>(parts[d].size()) == expected_sizes[d];

  std::array<std::map<std::string, std::string>, 7> mapping;
  long clusters_total = 0;
  for (size_t d = 0; d < 7; ++d) {
    std::set<std::string> unique;
    std::vector<std::string> categories;
    for (const auto& f : parts[d])
      if (f.category && unique.insert(*f.category).second)
        categories.push_back(*f.category);
    if (categories.empty()) continue;
    const auto clusters =
        pipeline::cluster_categories(categories, gateway, zero_profile);
    clusters_total += static_cast<long>(clusters.size());
    for (const auto& cluster : clusters)
      for (const auto& member : cluster.members)
        mapping[d][member] = cluster.label;
  }

  const auto effects = pipeline::assemble_effects(parts, mapping);
  const auto unique = pipeline::merge_unique(effects);

  std::set<std::string> effect_keys;
  for (const auto& e : effects)
    effect_keys.insert(e.category + "|" + vocab::to_string(e.outcome) + "|" +
                       vocab::to_string(e.direction) + "|" +
                       std::to_string(e.study_count));
  const std::set<std::string> expected_effects = {
      "forest light|positive_affect|increase|3",
      "verbose forest|positive_affect|decrease|3",
      "traffic noise|negative_affect|increase|4",
      "river walk|negative_affect|decrease|3",
      "forest light|stress|decrease|3"};
  bool dropped_ok = true;
  for (const auto& e : effects)
    if (e.category == "water view" || e.category == "crowd density")
      dropped_ok = false;

  // monotone shrinkage through the reduction chain
  const bool monotone = findings_total >= condensed_count &&
                        condensed_count >= partition_sum + 1 - 1 &&
                        partition_sum >= clusters_total &&
                        clusters_total >= static_cast<long>(effects.size()) &&
                        effects.size() >= unique.size();

  size_t forest_light_links = 0;
  for (const auto& u : unique)
    if (u.category == "forest light") forest_light_links = u.effect_ids.size();

  const double elapsed = seconds_since(start);
  char buf[300];
  std::snprintf(buf, sizeof buf,
                "findings %ld, condensed %ld, partitions %ld %s, clusters %ld, "
                "effects %zu, unique %zu, zero-finding pubs %ld; %.1f s",
                findings_total, condensed_count, partition_sum,
                sizes_exact ? "(exact)" : "(WRONG)", clusters_total,
                effects.size(), unique.size(), pubs_with_zero, elapsed);
  detail = buf;
  return findings_total == 25 && condensed_count == 24 && partition_sum == 24 &&
         sizes_exact && clusters_total == 8 && effects.size() == 5 &&
         effect_keys == expected_effects && dropped_ok && unique.size() == 4 &&
         forest_light_links == 2 && pubs_with_zero == 27 && monotone &&
         elapsed < 5.0;
}

// --- 7. aggregation fidelity ------------------------------------------------------

bool aggregation_fidelity(std::string& detail) {
  const auto start = std::chrono::steady_clock::now();
  testutil::TempDir dir("acceptance_agg");
  // Hand-computed block: photo A greenness runs (3,3,3,3,3) -> 3;
  // photo B (1,2,3,4,5) -> 3; photo C (2,4,6,8,10) -> 6.
  std::vector<rater::RatingRecord> records;
  const double a_runs[5] = {3, 3, 3, 3, 3};
  const double b_runs[5] = {1, 2, 3, 4, 5};
  const double c_runs[5] = {2, 4, 6, 8, 10};
  for (int r = 0; r < 5; ++r) {
    records.push_back({"A", "greenness", "m", r + 1, a_runs[r], 8});
    records.push_back({"B", "greenness", "m", r + 1, b_runs[r], 9});
    records.push_back({"C", "greenness", "m", r + 1, c_runs[r], 10});
  }
  rater::write_ratings_csv(dir.file("ratings.csv"), records);
  const auto loaded = rater::read_ratings_csv(dir.file("ratings.csv"));
  const auto aggregates = rater::aggregate_all(loaded);
  bool exact = aggregates.size() == 3;
  double dataset_mean = 0.0;
  for (const auto& agg : aggregates) {
    dataset_mean += agg.mean_score;
    if (agg.photo_id == "A") exact = exact && agg.mean_score == 3.0 && agg.mean_confidence == 8.0;
    if (agg.photo_id == "B") exact = exact && agg.mean_score == 3.0;
    if (agg.photo_id == "C") exact = exact && agg.mean_score == 6.0;
    exact = exact && agg.run_count == 5;
  }
  dataset_mean /= 3.0;
  exact = exact && dataset_mean == 4.0;  // (3 + 3 + 6) / 3

  // 1e5 fuzzed records: no aggregate may leave its declared scale.
  Rng rng(271828);
  std::vector<rater::RatingRecord> fuzz;
  fuzz.reserve(100000);
  for (int i = 0; i < 100000; ++i) {
    const bool binary = rng.uniform() < 0.25;
    fuzz.push_back({"p" + std::to_string(rng.uniform_int(0, 1500)),
                    binary ? "inside/outside" : "feature " + std::to_string(rng.uniform_int(0, 30)),
                    "m", rng.uniform_int(1, 5),
                    binary ? static_cast<double>(rng.uniform_int(1, 2))
                           : rng.uniform(1.0, 10.0),
                    rng.uniform(1.0, 10.0)});
  }
  bool bounds_ok = true;
  for (const auto& agg : rater::aggregate_all(fuzz)) {
    const double hi = agg.feature == "inside/outside" ? 2.0 : 10.0;
    bounds_ok = bounds_ok && agg.mean_score >= 1.0 && agg.mean_score <= hi &&
                agg.mean_confidence >= 1.0 && agg.mean_confidence <= 10.0;
  }
  const double elapsed = seconds_since(start);
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "hand-computed means exact: %s; 1e5-record bounds: %s; %.1f s",
                exact ? "yes" : "NO", bounds_ok ? "held" : "VIOLATED", elapsed);
  detail = buf;
  return exact && bounds_ok;
}

// --- 8. CLI determinism ------------------------------------------------------------

int run_cli(const std::string& args) {
  const char* kit = std::getenv("EXPOSOME_KIT_BIN");
  if (!kit) return -1;
  const std::string command = std::string(kit) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_determinism_config(const std::string& path, const std::string& out) {
  testutil::write_text(
      path,
      "[paths]\n"
      "ema_csv = \"" + out + "/sim/ema.csv\"\n"
      "baseline_csv = \"" + out + "/sim/baseline.csv\"\n"
      "photos_dir = \"" + out + "/sim/photos\"\n"
      "output_dir = \"" + out + "\"\n"
      "[miner]\nendpoint = \"stub://auto\"\nmodel = \"stub-llm\"\n"
      "[rater]\nendpoint = \"stub://auto\"\nmodel = \"stub-vlm\"\n"
      "runs_greenness = 2\n"
      "[simulate]\nn_participants = 5\ndays = 2\nalarms_per_day = 3\n"
      "tau00 = 1.0\nsigma2 = 1.0\nbeta = [2.0, 0.5]\nwrite_photos = true\n"
      "[run]\nseed = 77\njobs = 2\n");
}

// Data outputs must be byte-identical; the ledger and the audit log carry
// timestamps by design, and the campaign state dir is scratch.
bool path_excluded(const fs::path& rel) {
  const std::string s = rel.generic_string();
  return s == "pipeline/ledger.csv" || s == "audit.jsonl" ||
         s.rfind("ratings/state", 0) == 0;
}

bool cli_determinism(std::string& detail) {
  const auto start = std::chrono::steady_clock::now();
  if (!std::getenv("EXPOSOME_KIT_BIN")) {
    detail = "EXPOSOME_KIT_BIN not set";
    return false;
  }
  testutil::TempDir dir("acceptance_det");
  const StubCorpus corpus = build_planted_corpus();

  std::vector<fs::path> outs;
  for (const char* run : {"run1", "run2"}) {
    const fs::path out = dir.path() / run;
    outs.push_back(out);
    const std::string config = dir.file(std::string(run) + ".toml");
    write_determinism_config(config, out.string());
    if (run_cli("simulate --config " + config) != 0) {
      detail = "simulate failed";
      return false;
    }
    std::vector<json> docs;
    for (const auto& [doc, text] : corpus.docs)
      docs.push_back({{"epmc_id", doc}, {"source", "MED"}, {"title", "t"},
                      {"text", text}});
    pipeline::write_ndjson((out / "pipeline" / "corpus.ndjson").string(), docs);
    for (const char* stage : {"extract", "condense", "cluster", "assemble",
                              "rate", "rate --features catalog"}) {
      // The second rate call resumes the greenness campaign's state dir and
      // adds the catalog features; both must land identically across runs.
      if (run_cli(std::string(stage) + " --config " + config) != 0) {
        detail = std::string(stage) + " failed";
        return false;
      }
    }
    if (run_cli("analyze --config " + config) != 0) {
      detail = "analyze failed";
      return false;
    }
    if (run_cli("screen --config " + config) != 0) {
      detail = "screen failed";
      return false;
    }
  }

  // Compare the two trees file for file.
  std::map<std::string, fs::path> first_files;
  size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(outs[0])) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), outs[0]);
    if (path_excluded(rel)) continue;
    first_files[rel.generic_string()] = entry.path();
  }
  for (const auto& entry : fs::recursive_directory_iterator(outs[1])) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), outs[1]);
    if (path_excluded(rel)) continue;
    const auto it = first_files.find(rel.generic_string());
    if (it == first_files.end()) {
      detail = "file only in run2: " + rel.generic_string();
      return false;
    }
    if (testutil::read_text(it->second.string()) !=
        testutil::read_text(entry.path().string())) {
      detail = "byte difference in " + rel.generic_string();
      return false;
    }
    first_files.erase(it);
    ++compared;
  }
  if (!first_files.empty()) {
    detail = "file only in run1: " + first_files.begin()->first;
    return false;
  }
  const double elapsed = seconds_since(start);
  char buf[120];
  std::snprintf(buf, sizeof buf, "%zu data files byte-identical; %.1f s",
                compared, elapsed);
  detail = buf;
  return compared > 20;
}

// --- 9. optional OSF reproduction ---------------------------------------------------

bool osf_reproduction(std::string& detail) {
  const char* osf_dir = std::getenv("EXPOSOME_OSF_DIR");
  if (!osf_dir || !*osf_dir) {
    detail = "set EXPOSOME_OSF_DIR to a directory holding ema.csv, "
             "baseline.csv, aggregates.csv from the study export";
    return false;  // caller reports SKIP, not FAIL
  }
  const fs::path dir(osf_dir);
  const auto dataset = core::load_dataset((dir / "ema.csv").string(),
                                          (dir / "baseline.csv").string());
  const auto aggregates =
      rater::read_aggregates_csv((dir / "aggregates.csv").string());

  // Per-photo greenness ratings joined to the self-reports.
  std::map<std::string, double> greenness_scores, nature_scores;
  for (const auto& agg : aggregates) {
    if (agg.feature == "greenness") greenness_scores[agg.photo_id] = agg.mean_score;
    if (agg.feature == "nature score") nature_scores[agg.photo_id] = agg.mean_score;
  }
  std::vector<std::string> participants;
  std::vector<std::optional<double>> green_raw, pa_raw;
  std::vector<double> y;
  for (const auto& obs : dataset.observations) {
    if (dataset.is_excluded(obs.participant_id) || !obs.photo_id) continue;
    const auto it = greenness_scores.find(*obs.photo_id);
    if (it == greenness_scores.end()) continue;
    participants.push_back(obs.participant_id);
    y.push_back(it->second);
    green_raw.push_back(obs.greenness_self
                            ? std::optional<double>(*obs.greenness_self)
                            : std::nullopt);
    pa_raw.push_back(core::derive_affect(obs).positive);
  }
  const auto green = core::person_center(participants, green_raw);
  const auto pa = core::person_center(participants, pa_raw);

  const auto fit_two = [&](const core::CenteredPredictor& predictor) {
    stats::LmmSpec spec;
    std::vector<std::string> keep;
    for (size_t i = 0; i < y.size(); ++i) {
      if (!predictor.trait_row[i] || !predictor.state[i]) continue;
      spec.y.push_back(y[i]);
      if (spec.x_cols.empty()) spec.x_cols.resize(3);
      spec.x_cols[0].push_back(1.0);
      spec.x_cols[1].push_back(*predictor.trait_row[i]);
      spec.x_cols[2].push_back(*predictor.state[i]);
      keep.push_back(participants[i]);
    }
    std::size_t n_groups = 0;
    spec.group = stats::make_group_index(keep, &n_groups);
    return stats::fit_random_intercept(spec);
  };
  const auto green_fit = fit_two(green);
  const auto pa_fit = fit_two(pa);

  // Trait correlations with the PSS.
  std::map<std::string, double> pss;
  std::vector<std::vector<double>> pss_items;
  for (const auto& baseline : dataset.baselines) {
    if (dataset.is_excluded(baseline.participant_id)) continue;
    if (auto score = core::score_pss(baseline))
      pss[baseline.participant_id] = *score;
    std::vector<double> row;
    bool complete = true;
    for (const auto& item : baseline.pss_items) {
      if (!item) complete = false;
      else row.push_back(*item);
    }
    if (complete) pss_items.push_back(row);
  }
  const auto trait_r = [&](const std::map<std::string, double>& scores) {
    std::map<std::string, std::pair<double, int>> sums;
    for (const auto& obs : dataset.observations) {
      if (dataset.is_excluded(obs.participant_id) || !obs.photo_id) continue;
      const auto it = scores.find(*obs.photo_id);
      if (it == scores.end()) continue;
      auto& acc = sums[obs.participant_id];
      acc.first += it->second;
      acc.second += 1;
    }
    std::vector<double> xs, ys;
    for (const auto& [pid, acc] : sums) {
      const auto it = pss.find(pid);
      if (it == pss.end()) continue;
      xs.push_back(acc.first / acc.second);
      ys.push_back(it->second);
    }
    return stats::pearson(xs, ys);
  };
  const auto r_green = trait_r(greenness_scores);
  const auto r_nature = trait_r(nature_scores);
  const auto alpha = stats::cronbach_alpha(pss_items);

  const double state_slope = green_fit.beta[2];
  const double pa_trait_slope = pa_fit.beta[1];
  char buf[340];
  std::snprintf(buf, sizeof buf,
                "greenness state slope %.3f (target [1.20,1.31], df %.1f); PA "
                "trait slope %.3f (0.62+-0.1); r_pss %.3f/-0.21 %.3f/-0.23; "
                "alpha %.3f/0.88",
                state_slope, green_fit.satterthwaite_df[2], pa_trait_slope,
                r_green.r, r_nature.r, alpha.value_or(0.0));
  detail = buf;
  return state_slope >= 1.20 && state_slope <= 1.31 &&
         std::abs(pa_trait_slope - 0.62) <= 0.1 &&
         std::abs(r_green.r - (-0.21)) <= 0.03 &&
         std::abs(r_nature.r - (-0.23)) <= 0.03 && alpha.has_value() &&
         std::abs(*alpha - 0.88) <= 0.02;
}

}  // namespace

int main(int argc, char** argv) {
  // When launched outside ctest, locate the CLI next to this binary.
  if (!std::getenv("EXPOSOME_KIT_BIN") && argc >= 1) {
    const fs::path guess =
        fs::path(argv[0]).parent_path().parent_path() / "tools" / "exposome-kit";
    std::error_code ec;
    if (fs::exists(guess, ec))
      setenv("EXPOSOME_KIT_BIN", fs::absolute(guess).string().c_str(), 0);
  }
  std::vector<Criterion> criteria = {
      {"reml-oracle-equivalence", reml_oracle_equivalence, false},
      {"parameter-recovery", parameter_recovery, false},
      {"null-p-value-calibration", null_calibration, false},
      {"icc-published-values", icc_consistency, false},
      {"reliability-formulas", reliability_formulas, false},
      {"pipeline-count-ledger", pipeline_count_ledger, false},
      {"aggregation-fidelity", aggregation_fidelity, false},
      {"cli-determinism", cli_determinism, false},
      {"osf-table1-reproduction", osf_reproduction, true},
  };
  int only = 0;
  if (argc > 2 && std::string(argv[1]) == "--only") only = std::atoi(argv[2]);

  int passed = 0, failed = 0, skipped = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<int>(i) + 1 != only) continue;
    const auto& criterion = criteria[i];
    if (criterion.optional && !std::getenv("EXPOSOME_OSF_DIR")) {
      std::string detail;
      criterion.run(detail);
      std::cout << "[SKIP] " << i + 1 << ". " << criterion.name << ": "
                << detail << "\n";
      ++skipped;
      continue;
    }
    std::string detail;
    bool ok = false;
    try {
      ok = criterion.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << i + 1 << ". "
              << criterion.name << ": " << detail << "\n";
    ok ? ++passed : ++failed;
  }
  std::cout << "RESULT: " << passed << " passed, " << failed << " failed, "
            << skipped << " skipped\n";
  return failed == 0 ? 0 : 1;
}
