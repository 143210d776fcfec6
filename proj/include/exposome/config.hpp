#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "exposome/core.hpp"
#include "exposome/epmc.hpp"
#include "exposome/llm.hpp"

namespace exposome::config {

// TOML subset: [section] headers, key = value with strings, integers,
// floats, booleans and flat arrays, # comments. Keys are addressed as
// "section.key".
class Toml {
 public:
  static Toml parse(const std::string& text, const std::string& origin = "<string>");
  static Toml parse_file(const std::string& path);

  bool has(const std::string& key) const;
  std::optional<std::string> get_string(const std::string& key) const;
  std::optional<std::int64_t> get_int(const std::string& key) const;
  std::optional<double> get_double(const std::string& key) const;
  std::optional<bool> get_bool(const std::string& key) const;
  std::optional<std::vector<std::string>> get_string_array(
      const std::string& key) const;
  std::optional<std::vector<double>> get_double_array(
      const std::string& key) const;

  std::vector<std::string> keys_in(const std::string& section) const;

 private:
  struct Value {
    enum class Kind { string, integer, floating, boolean, array } kind;
    std::string str;
    std::int64_t integer = 0;
    double floating = 0.0;
    bool boolean = false;
    std::vector<Value> array;
  };
  std::map<std::string, Value> values_;
};

struct RunConfig {
  // [paths]
  std::string ema_csv;
  std::string baseline_csv;
  std::string photos_dir;
  std::string output_dir = "out";
  std::string cache_dir = "epmc_cache";
  std::string features_catalog;  // effects.json for rate/screen
  std::string aggregates_csv;    // override for analyze/screen input

  // [miner] endpoint + per-stage temperature profiles
  llm::ModelProfile miner;
  double extract_temperature = 0.1;
  double condense_temperature = 0.0;
  double cluster_temperature = 0.0;

  // [rater] / [rater_b]
  llm::ModelProfile rater_a;
  std::optional<llm::ModelProfile> rater_b;
  int runs_greenness = 5;
  int runs_catalog = 1;
  int max_image_edge = 1024;
  std::map<std::string, std::string> feature_scales;  // feature -> "binary"
  std::string rating_template;  // empty = built-in default

  // [query]
  epmc::SearchQuery query;

  // [gateway]
  llm::RetryPolicy retry;
  int max_in_flight = 16;
  double requests_per_second = 0.0;

  // [screening]
  double alpha = 0.05;

  // [analyze]
  bool grand_center_traits = false;

  // [simulate]
  core::SimulationConfig simulate;

  // general
  std::uint64_t seed = 1;
  int jobs = 1;
};

// Loads and validates a run.toml. Env overrides: EXPOSOME_LLM_ENDPOINT,
// EXPOSOME_VLM_ENDPOINT, EXPOSOME_API_KEY (both profiles), EPMC_BASE_URL is
// consumed by the miner itself.
RunConfig load_run_config(const std::string& path);

}  // namespace exposome::config
