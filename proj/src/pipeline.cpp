#include "exposome/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "exposome/csv.hpp"
#include "exposome/errors.hpp"

namespace exposome::pipeline {

using nlohmann::json;

namespace {

std::string default_extract_prompt(const std::string& fulltext) {
  return
      "Identify every contextual or environmental feature in the article "
      "below that the study links to positive affect, negative affect, or "
      "stress. Reply with a JSON array; each element must be an object with "
      "keys context (short phrase), outcome (positive_affect, "
      "negative_affect, or stress), direction (increase, decrease, or null "
      "when the study found no significant association), and evidence (a "
      "short supporting quote). Reply with [] when the article reports no "
      "such findings.\n\nArticle:\n" + fulltext;
}

std::string default_condense_prompt(const std::string& phrase) {
  return
      "Condense the contextual feature description below into a category of "
      "one or two words, lowercase. Reply as JSON: {\"category\": \"...\"}."
      "\n\nPhrase: " + phrase;
}

std::string default_cluster_prompt(const std::vector<std::string>& categories) {
  std::string prompt =
      "Cluster conceptually similar categories into broader groups. Every "
      "category must appear in exactly one cluster. Reply as JSON: "
      "{\"clusters\": [{\"label\": \"...\", \"members\": [\"...\"]}]}."
      "\n\nCategories:\n";
  for (const auto& c : categories) prompt += "- " + c + "\n";
  return prompt;
}

std::size_t word_count(const std::string& s) {
  std::istringstream in(s);
  std::string tok;
  std::size_t n = 0;
  while (in >> tok) ++n;
  return n;
}

std::string lowercase_trim(const std::string& s) {
  std::string out;
  for (char c : s)
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  const size_t b = out.find_first_not_of(" \t\n\r");
  if (b == std::string::npos) return "";
  const size_t e = out.find_last_not_of(" \t\n\r");
  return out.substr(b, e - b + 1);
}

}  // namespace

std::size_t partition_index(Outcome outcome, Direction direction) {
  if (direction == Direction::null_direction) return kNullPartition;
  const std::size_t o = outcome == Outcome::positive_affect   ? 0
                        : outcome == Outcome::negative_affect ? 1
                                                              : 2;
  return o * 2 + (direction == Direction::increase ? 0 : 1);
}

std::string partition_name(std::size_t index) {
  static const char* names[7] = {
      "positive_affect_increase", "positive_affect_decrease",
      "negative_affect_increase", "negative_affect_decrease",
      "stress_increase",          "stress_decrease",
      "null_direction"};
  return names[index];
}

std::vector<ExtractedFinding> extract_findings(
    const std::string& epmc_id, const std::string& fulltext,
    llm::Gateway& gateway, const llm::ModelProfile& profile,
    const std::map<std::string, std::string>& extra_synonyms) {
  if (fulltext.empty())
    throw ConfigError("extract_findings: empty fulltext for " + epmc_id);
  llm::ChatRequest request;
  request.system =
      "You extract structured findings about contextual features and mental "
      "health from scientific articles.";
  request.user = default_extract_prompt(fulltext);
  request.profile = profile;

  llm::CompletionResult reply;
  try {
    reply = gateway.complete(request);
  } catch (const Error& e) {
    throw UpstreamError("extract (" + epmc_id + "): " + e.what());
  }
  auto parsed = llm::extract_first_json(reply.text);
  if (!parsed || !parsed->is_array())
    throw llm::ParseError("extract (" + epmc_id + "): reply is not a JSON array",
                          reply.text);

  const auto normalize_word = [&](std::string raw) {
    const std::string key = lowercase_trim(raw);
    auto it = extra_synonyms.find(key);
    return it != extra_synonyms.end() ? it->second : raw;
  };

  std::vector<ExtractedFinding> findings;
  for (const auto& item : *parsed) {
    if (!item.is_object()) continue;
    ExtractedFinding f;
    f.epmc_id = epmc_id;
    f.context_phrase = item.value("context", "");
    f.evidence = item.value("evidence", "");
    if (f.context_phrase.empty()) continue;
    const auto outcome = vocab::parse_outcome(normalize_word(item.value("outcome", "")));
    const auto direction =
        vocab::parse_direction(normalize_word(item.value("direction", "")));
    if (!outcome || !direction) continue;  // off-vocabulary finding dropped
    f.outcome = *outcome;
    f.direction = *direction;
    findings.push_back(std::move(f));
  }
  return findings;
}

bool CondenseMemo::contains(const std::string& phrase) const {
  return memo_.count(phrase) > 0;
}

std::optional<std::string> CondenseMemo::get(const std::string& phrase) const {
  auto it = memo_.find(phrase);
  return it == memo_.end() ? std::nullopt : it->second;
}

void CondenseMemo::store(const std::string& phrase,
                         const std::optional<std::string>& label) {
  memo_[phrase] = label;
}

std::optional<std::string> condense(const std::string& phrase,
                                    llm::Gateway& gateway,
                                    const llm::ModelProfile& profile,
                                    CondenseMemo* memo) {
  if (phrase.empty()) throw ConfigError("condense: empty phrase");
  // Memoized including non-responses: identical phrase, identical label.
  if (memo && memo->contains(phrase)) return memo->get(phrase);

  llm::ChatRequest request;
  request.system = "You map contextual feature descriptions onto terse category labels.";
  request.user = default_condense_prompt(phrase);
  request.profile = profile;

  const auto parse_label = [](const std::string& text) -> std::optional<std::string> {
    auto parsed = llm::extract_first_json(text);
    if (!parsed || !parsed->is_object() || !parsed->contains("category") ||
        !(*parsed)["category"].is_string())
      return std::nullopt;
    const std::string candidate = lowercase_trim((*parsed)["category"]);
    if (candidate.empty() || word_count(candidate) > 2) return std::nullopt;
    return candidate;
  };

  std::optional<std::string> label;
  try {
    label = parse_label(gateway.complete(request).text);
    if (!label) {
      // One corrective re-prompt enforcing the word limit, then missing.
      llm::ChatRequest retry = request;
      retry.user = request.user +
                   "\n\nPrevious reply was not valid (category must be one or "
                   "two lowercase words). Reply as JSON {\"category\": "
                   "\"...\"} and nothing else.";
      label = parse_label(gateway.complete(retry).text);
    }
  } catch (const Error&) {
    label = std::nullopt;  // non-response recorded as missing
  }
  if (memo) memo->store(phrase, label);
  return label;
}

Partition partition(const std::vector<CondensedFinding>& findings) {
  Partition out;
  for (const auto& f : findings) {
    if (!f.category) continue;  // non-responses removed before this step
    out[partition_index(f.finding.outcome, f.finding.direction)].push_back(f);
  }
  return out;
}

std::vector<Cluster> cluster_categories(const std::vector<std::string>& categories,
                                        llm::Gateway& gateway,
                                        const llm::ModelProfile& profile,
                                        std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("cluster: batch_size must be > 0");
  std::vector<std::string> unique;
  std::set<std::string> seen;
  for (const auto& c : categories)
    if (seen.insert(c).second) unique.push_back(c);
  std::sort(unique.begin(), unique.end());

  // label -> members, merged across batches by identical normalized label.
  std::map<std::string, std::vector<std::string>> merged;
  std::map<std::string, std::string> assignment;  // category -> cluster label

  for (std::size_t start = 0; start < unique.size(); start += batch_size) {
    const std::size_t end = std::min(unique.size(), start + batch_size);
    const std::vector<std::string> batch(unique.begin() + start,
                                         unique.begin() + end);
    llm::ChatRequest request;
    request.system = "You cluster terse category labels into broader groups.";
    request.user = default_cluster_prompt(batch);
    request.profile = profile;

    nlohmann::json clusters = nlohmann::json::array();
    try {
      const llm::CompletionResult reply = gateway.complete(request);
      auto parsed = llm::extract_first_json(reply.text);
      if (parsed && parsed->contains("clusters") && (*parsed)["clusters"].is_array())
        clusters = (*parsed)["clusters"];
    } catch (const Error&) {
      clusters = nlohmann::json::array();  // whole batch falls back to singletons
    }

    const std::set<std::string> batch_set(batch.begin(), batch.end());
    for (const auto& c : clusters) {
      const std::string label = normalize_category(c.value("label", ""));
      if (label.empty()) continue;
      for (const auto& m : c.value("members", nlohmann::json::array())) {
        if (!m.is_string()) continue;
        const std::string member = m.get<std::string>();
        // Only accept members that belong to this batch and are unassigned.
        if (!batch_set.count(member) || assignment.count(member)) continue;
        assignment[member] = label;
        merged[label].push_back(member);
      }
    }
    for (const auto& member : batch)
      if (!assignment.count(member)) {
        const std::string label = normalize_category(member);
        assignment[member] = label;
        merged[label].push_back(member);
      }
  }

  std::vector<Cluster> out;
  out.reserve(merged.size());
  for (auto& [label, members] : merged) {
    std::sort(members.begin(), members.end());
    out.push_back({label, std::move(members)});
  }
  return out;
}

std::vector<LiteratureEffect> assemble_effects(
    const Partition& partitioned,
    const std::array<std::map<std::string, std::string>, 7>& category_to_cluster,
    int min_studies) {
  // (category, outcome, direction) -> distinct supporting publications.
  std::map<std::tuple<std::string, int, int>, std::set<std::string>> support;
  for (std::size_t d = 0; d < 7; ++d) {
    if (d == kNullPartition) continue;  // excluded before this step
    for (const auto& f : partitioned[d]) {
      if (!f.category) continue;
      const auto& mapping = category_to_cluster[d];
      auto it = mapping.find(*f.category);
      const std::string label =
          it != mapping.end() ? it->second : normalize_category(*f.category);
      support[{label, static_cast<int>(f.finding.outcome),
               static_cast<int>(f.finding.direction)}]
          .insert(f.finding.epmc_id);
    }
  }
  std::vector<LiteratureEffect> out;
  for (const auto& [key, pubs] : support) {
    if (static_cast<int>(pubs.size()) < min_studies) continue;
    LiteratureEffect e;
    e.category = std::get<0>(key);
    e.outcome = static_cast<Outcome>(std::get<1>(key));
    e.direction = static_cast<Direction>(std::get<2>(key));
    e.study_count = static_cast<int>(pubs.size());
    e.pubs.assign(pubs.begin(), pubs.end());
    out.push_back(std::move(e));
  }
  return out;
}

std::string normalize_category(const std::string& raw) {
  std::string out;
  bool pending_space = false;
  for (char c : raw) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::vector<UniqueCategory> merge_unique(
    const std::vector<LiteratureEffect>& effects) {
  std::map<std::string, std::vector<std::size_t>> by_category;
  for (std::size_t i = 0; i < effects.size(); ++i)
    by_category[normalize_category(effects[i].category)].push_back(i);
  std::vector<UniqueCategory> out;
  out.reserve(by_category.size());
  for (auto& [category, ids] : by_category) out.push_back({category, std::move(ids)});
  return out;
}

// --- checkpoints ---------------------------------------------------------------

void write_ndjson(const std::string& path, const std::vector<json>& records) {
  std::string content;
  for (const auto& rec : records) {
    content += rec.dump();
    content.push_back('\n');
  }
  csv::write_file_atomic(path, content);
}

std::vector<json> read_ndjson(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing checkpoint file: " + path);
  std::vector<json> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded())
      throw IoError(path + ":" + std::to_string(line_no) + ": invalid JSON line");
    out.push_back(std::move(rec));
  }
  return out;
}

json finding_to_json(const CondensedFinding& f) {
  json j;
  j["epmc_id"] = f.finding.epmc_id;
  j["context"] = f.finding.context_phrase;
  j["outcome"] = vocab::to_string(f.finding.outcome);
  j["direction"] = vocab::to_string(f.finding.direction);
  j["evidence"] = f.finding.evidence;
  if (f.category) j["category"] = *f.category;
  else j["category"] = nullptr;
  return j;
}

CondensedFinding finding_from_json(const json& j) {
  CondensedFinding f;
  f.finding.epmc_id = j.value("epmc_id", "");
  f.finding.context_phrase = j.value("context", "");
  f.finding.evidence = j.value("evidence", "");
  const auto outcome = vocab::parse_outcome(j.value("outcome", ""));
  const auto direction = vocab::parse_direction(j.value("direction", ""));
  if (!outcome || !direction)
    throw IoError("checkpoint finding with invalid vocabulary: " + j.dump());
  f.finding.outcome = *outcome;
  f.finding.direction = *direction;
  if (j.contains("category") && j["category"].is_string())
    f.category = j["category"].get<std::string>();
  return f;
}

json effect_to_json(const LiteratureEffect& e) {
  return json{{"category", e.category},
              {"outcome", vocab::to_string(e.outcome)},
              {"direction", vocab::to_string(e.direction)},
              {"study_count", e.study_count},
              {"pubs", e.pubs}};
}

LiteratureEffect effect_from_json(const json& j) {
  LiteratureEffect e;
  e.category = j.value("category", "");
  const auto outcome = vocab::parse_outcome(j.value("outcome", ""));
  const auto direction = vocab::parse_direction(j.value("direction", ""));
  if (e.category.empty() || !outcome || !direction ||
      *direction == Direction::null_direction)
    throw IoError("invalid effect record: " + j.dump());
  e.outcome = *outcome;
  e.direction = *direction;
  e.study_count = j.value("study_count", 0);
  for (const auto& p : j.value("pubs", json::array()))
    e.pubs.push_back(p.get<std::string>());
  if (e.study_count != static_cast<int>(e.pubs.size()))
    throw IoError("effect study_count disagrees with pubs: " + j.dump());
  return e;
}

void write_effects_json(const std::string& path,
                        const std::vector<LiteratureEffect>& effects) {
  json arr = json::array();
  for (const auto& e : effects) arr.push_back(effect_to_json(e));
  csv::write_file_atomic(path, arr.dump(2) + "\n");
}

std::vector<LiteratureEffect> read_effects_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing effects catalog: " + path);
  json arr = json::parse(in, nullptr, false);
  if (arr.is_discarded() || !arr.is_array())
    throw IoError("effects catalog is not a JSON array: " + path);
  std::vector<LiteratureEffect> out;
  for (const auto& j : arr) out.push_back(effect_from_json(j));
  return out;
}

void append_ledger(const std::string& path, const LedgerRow& row) {
  const bool fresh = !std::ifstream(path).good();
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to ledger " + path);
  if (fresh) out << "step,input_count,output_count,wall_ms,timestamp\n";
  out << row.step << ',' << row.input_count << ',' << row.output_count << ','
      << row.wall_ms << ',' << row.timestamp << '\n';
}

std::vector<LedgerRow> read_ledger(const std::string& path) {
  const csv::Table table = csv::read_file(path);
  std::vector<LedgerRow> rows;
  for (const auto& r : table.rows) {
    LedgerRow row;
    row.step = r[0];
    row.input_count = std::stol(r[1]);
    row.output_count = std::stol(r[2]);
    row.wall_ms = std::stol(r[3]);
    row.timestamp = r[4];
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace exposome::pipeline
