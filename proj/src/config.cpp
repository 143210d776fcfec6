#include "exposome/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "exposome/errors.hpp"

namespace exposome::config {

namespace {

std::string trim(const std::string& s) {
  const size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

// Strips a trailing comment that is not inside a string literal.
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '"') in_string = !in_string;
    if (c == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

}  // namespace

Toml Toml::parse(const std::string& text, const std::string& origin) {
  Toml toml;
  std::istringstream in(text);
  std::string line;
  std::string section;
  size_t line_no = 0;

  const auto fail = [&](const std::string& what) -> void {
    throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + what);
  };

  const std::function<Value(const std::string&)> parse_value =
      [&](const std::string& raw) -> Value {
    Value v;
    const std::string t = trim(raw);
    if (t.empty()) fail("empty value");
    if (t.front() == '"') {
      if (t.size() < 2 || t.back() != '"') fail("unterminated string");
      v.kind = Value::Kind::string;
      std::string out;
      for (size_t i = 1; i + 1 < t.size(); ++i) {
        if (t[i] == '\\' && i + 2 < t.size() + 1) {
          const char n = t[i + 1];
          if (n == 'n') { out.push_back('\n'); ++i; continue; }
          if (n == 't') { out.push_back('\t'); ++i; continue; }
          if (n == '"') { out.push_back('"'); ++i; continue; }
          if (n == '\\') { out.push_back('\\'); ++i; continue; }
        }
        out.push_back(t[i]);
      }
      v.str = out;
      return v;
    }
    if (t.front() == '[') {
      if (t.back() != ']') fail("unterminated array");
      v.kind = Value::Kind::array;
      const std::string inner = t.substr(1, t.size() - 2);
      std::string item;
      bool in_string = false;
      for (char c : inner) {
        if (c == '"') in_string = !in_string;
        if (c == ',' && !in_string) {
          if (!trim(item).empty()) v.array.push_back(parse_value(item));
          item.clear();
        } else {
          item.push_back(c);
        }
      }
      if (!trim(item).empty()) v.array.push_back(parse_value(item));
      return v;
    }
    if (t == "true" || t == "false") {
      v.kind = Value::Kind::boolean;
      v.boolean = t == "true";
      return v;
    }
    // Numeric: integer unless it smells of a float.
    const bool floating = t.find_first_of(".eE") != std::string::npos &&
                          t.find_first_not_of("+-0123456789.eE") == std::string::npos;
    char* end = nullptr;
    if (!floating) {
      const long long parsed = std::strtoll(t.c_str(), &end, 10);
      if (end && *end == '\0') {
        v.kind = Value::Kind::integer;
        v.integer = parsed;
        return v;
      }
    }
    const double parsed = std::strtod(t.c_str(), &end);
    if (!end || *end != '\0') fail("cannot parse value '" + t + "'");
    v.kind = Value::Kind::floating;
    v.floating = parsed;
    return v;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string stripped = trim(strip_comment(line));
    if (stripped.empty()) continue;
    if (stripped.front() == '[') {
      if (stripped.back() != ']') fail("unterminated section header");
      section = trim(stripped.substr(1, stripped.size() - 2));
      if (section.empty()) fail("empty section name");
      continue;
    }
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(stripped.substr(0, eq));
    if (key.empty()) fail("empty key");
    const std::string full_key = section.empty() ? key : section + "." + key;
    if (toml.values_.count(full_key)) fail("duplicate key '" + full_key + "'");
    toml.values_[full_key] = parse_value(stripped.substr(eq + 1));
  }
  return toml;
}

Toml Toml::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

bool Toml::has(const std::string& key) const { return values_.count(key) > 0; }

std::optional<std::string> Toml::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  if (it->second.kind != Value::Kind::string)
    throw ConfigError("config key '" + key + "' is not a string");
  return it->second.str;
}

std::optional<std::int64_t> Toml::get_int(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  if (it->second.kind != Value::Kind::integer)
    throw ConfigError("config key '" + key + "' is not an integer");
  return it->second.integer;
}

std::optional<double> Toml::get_double(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  if (it->second.kind == Value::Kind::integer)
    return static_cast<double>(it->second.integer);
  if (it->second.kind != Value::Kind::floating)
    throw ConfigError("config key '" + key + "' is not a number");
  return it->second.floating;
}

std::optional<bool> Toml::get_bool(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  if (it->second.kind != Value::Kind::boolean)
    throw ConfigError("config key '" + key + "' is not a boolean");
  return it->second.boolean;
}

std::optional<std::vector<std::string>> Toml::get_string_array(
    const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  if (it->second.kind != Value::Kind::array)
    throw ConfigError("config key '" + key + "' is not an array");
  std::vector<std::string> out;
  for (const auto& v : it->second.array) {
    if (v.kind != Value::Kind::string)
      throw ConfigError("config key '" + key + "' holds a non-string element");
    out.push_back(v.str);
  }
  return out;
}

std::optional<std::vector<double>> Toml::get_double_array(
    const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  if (it->second.kind != Value::Kind::array)
    throw ConfigError("config key '" + key + "' is not an array");
  std::vector<double> out;
  for (const auto& v : it->second.array) {
    if (v.kind == Value::Kind::integer) out.push_back(static_cast<double>(v.integer));
    else if (v.kind == Value::Kind::floating) out.push_back(v.floating);
    else throw ConfigError("config key '" + key + "' holds a non-numeric element");
  }
  return out;
}

std::vector<std::string> Toml::keys_in(const std::string& section) const {
  std::vector<std::string> out;
  const std::string prefix = section + ".";
  for (const auto& [key, value] : values_)
    if (key.rfind(prefix, 0) == 0) out.push_back(key.substr(prefix.size()));
  return out;
}

namespace {

llm::ModelProfile profile_from(const Toml& toml, const std::string& section,
                               double default_temperature) {
  llm::ModelProfile profile;
  profile.endpoint = toml.get_string(section + ".endpoint").value_or("");
  profile.model = toml.get_string(section + ".model").value_or("");
  profile.api_key = toml.get_string(section + ".api_key").value_or("");
  profile.temperature =
      toml.get_double(section + ".temperature").value_or(default_temperature);
  profile.max_tokens = static_cast<int>(
      toml.get_int(section + ".max_tokens").value_or(1024));
  profile.timeout_seconds = static_cast<int>(
      toml.get_int(section + ".timeout_seconds").value_or(120));
  if (profile.temperature < 0)
    throw ConfigError(section + ".temperature must be >= 0");
  return profile;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  const Toml toml = Toml::parse_file(path);
  RunConfig cfg;

  cfg.ema_csv = toml.get_string("paths.ema_csv").value_or("");
  cfg.baseline_csv = toml.get_string("paths.baseline_csv").value_or("");
  cfg.photos_dir = toml.get_string("paths.photos_dir").value_or("");
  cfg.output_dir = toml.get_string("paths.output_dir").value_or("out");
  cfg.cache_dir = toml.get_string("paths.cache_dir").value_or("epmc_cache");
  cfg.features_catalog = toml.get_string("paths.features_catalog").value_or("");
  cfg.aggregates_csv = toml.get_string("paths.aggregates_csv").value_or("");

  cfg.miner = profile_from(toml, "miner", 0.1);
  cfg.extract_temperature =
      toml.get_double("miner.extract_temperature").value_or(0.1);
  cfg.condense_temperature =
      toml.get_double("miner.condense_temperature").value_or(0.0);
  cfg.cluster_temperature =
      toml.get_double("miner.cluster_temperature").value_or(0.0);

  cfg.rater_a = profile_from(toml, "rater", 0.6);
  if (toml.has("rater_b.endpoint"))
    cfg.rater_b = profile_from(toml, "rater_b", 0.7);
  cfg.runs_greenness =
      static_cast<int>(toml.get_int("rater.runs_greenness").value_or(5));
  cfg.runs_catalog =
      static_cast<int>(toml.get_int("rater.runs_catalog").value_or(1));
  cfg.max_image_edge =
      static_cast<int>(toml.get_int("rater.max_image_edge").value_or(1024));
  if (cfg.runs_greenness < 1 || cfg.runs_catalog < 1)
    throw ConfigError("rater run counts must be >= 1");

  if (auto scales = toml.get_string_array("rater.binary_features"))
    for (const auto& feature : *scales) cfg.feature_scales[feature] = "binary";
  cfg.rating_template = toml.get_string("rater.prompt_template").value_or("");

  if (auto terms = toml.get_string_array("query.mandatory"))
    cfg.query.mandatory_terms = *terms;
  if (auto terms = toml.get_string_array("query.outcomes"))
    cfg.query.outcome_terms = *terms;
  if (auto terms = toml.get_string_array("query.contexts"))
    cfg.query.context_terms = *terms;
  cfg.query.open_access_only =
      toml.get_bool("query.open_access_only").value_or(true);
  cfg.query.extra_filter = toml.get_string("query.extra_filter").value_or("");
  if (cfg.query.mandatory_terms.empty())
    throw ConfigError("query.mandatory must be non-empty");

  cfg.retry.max_attempts =
      static_cast<int>(toml.get_int("gateway.max_attempts").value_or(5));
  cfg.retry.base_delay_ms =
      static_cast<int>(toml.get_int("gateway.base_delay_ms").value_or(500));
  cfg.retry.factor = toml.get_double("gateway.factor").value_or(2.0);
  cfg.retry.max_delay_ms =
      static_cast<int>(toml.get_int("gateway.max_delay_ms").value_or(8000));
  cfg.retry.jitter = toml.get_double("gateway.jitter").value_or(0.1);
  cfg.max_in_flight =
      static_cast<int>(toml.get_int("gateway.max_in_flight").value_or(16));
  cfg.requests_per_second =
      toml.get_double("gateway.requests_per_second").value_or(0.0);

  cfg.alpha = toml.get_double("screening.alpha").value_or(0.05);
  cfg.grand_center_traits =
      toml.get_bool("analyze.grand_center_traits").value_or(false);
  if (cfg.alpha <= 0 || cfg.alpha >= 1)
    throw ConfigError("screening.alpha must be in (0, 1)");

  cfg.simulate.n_participants =
      static_cast<int>(toml.get_int("simulate.n_participants").value_or(20));
  cfg.simulate.days = static_cast<int>(toml.get_int("simulate.days").value_or(7));
  cfg.simulate.alarms_per_day =
      static_cast<int>(toml.get_int("simulate.alarms_per_day").value_or(7));
  cfg.simulate.tau00_true = toml.get_double("simulate.tau00").value_or(1.0);
  cfg.simulate.sigma2_true = toml.get_double("simulate.sigma2").value_or(1.0);
  if (auto beta = toml.get_double_array("simulate.beta")) {
    if (beta->empty()) throw ConfigError("simulate.beta must be non-empty");
    cfg.simulate.beta_true = *beta;
  }
  cfg.simulate.write_photos =
      toml.get_bool("simulate.write_photos").value_or(false);

  cfg.seed = static_cast<std::uint64_t>(toml.get_int("run.seed").value_or(1));
  cfg.simulate.seed = cfg.seed;
  cfg.jobs = static_cast<int>(toml.get_int("run.jobs").value_or(1));
  if (cfg.jobs < 1) throw ConfigError("run.jobs must be >= 1");

  // Environment overrides for endpoint credentials.
  if (const char* env = std::getenv("EXPOSOME_LLM_ENDPOINT"); env && *env)
    cfg.miner.endpoint = env;
  if (const char* env = std::getenv("EXPOSOME_VLM_ENDPOINT"); env && *env)
    cfg.rater_a.endpoint = env;
  if (const char* env = std::getenv("EXPOSOME_API_KEY"); env && *env) {
    cfg.miner.api_key = env;
    cfg.rater_a.api_key = env;
    if (cfg.rater_b) cfg.rater_b->api_key = env;
  }
  return cfg;
}

}  // namespace exposome::config
