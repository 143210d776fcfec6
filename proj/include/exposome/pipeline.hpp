#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "exposome/llm.hpp"
#include "exposome/vocab.hpp"

namespace exposome::pipeline {

using vocab::Direction;
using vocab::Outcome;

struct ExtractedFinding {
  std::string epmc_id;
  std::string context_phrase;
  Outcome outcome = Outcome::positive_affect;
  Direction direction = Direction::null_direction;
  std::string evidence;
};

struct CondensedFinding {
  ExtractedFinding finding;
  std::optional<std::string> category;  // <= 2 words; nullopt = non-response
};

struct LiteratureEffect {
  std::string category;
  Outcome outcome = Outcome::positive_affect;
  Direction direction = Direction::increase;  // never null in the catalog
  int study_count = 0;  // distinct supporting publications
  std::vector<std::string> pubs;
};

struct UniqueCategory {
  std::string category;                 // normalized label
  std::vector<std::size_t> effect_ids;  // back-references into the catalog
};

// The 7 step-4 datasets: {increase,decrease} x {PA,NA,stress} plus the
// null-direction bucket at index 6.
inline constexpr std::size_t kNullPartition = 6;
using Partition = std::array<std::vector<CondensedFinding>, 7>;
std::size_t partition_index(Outcome outcome, Direction direction);
std::string partition_name(std::size_t index);

struct PipelineProfiles {
  llm::ModelProfile extract;   // temperature 0.1
  llm::ModelProfile condense;  // temperature 0
  llm::ModelProfile cluster;   // temperature 0
};

// Step 2: schema-valid findings from one publication's full text; an empty
// reply is a valid zero-findings outcome, not an error. Direction/outcome
// wordings are normalized through the vocab tables plus extra_synonyms.
std::vector<ExtractedFinding> extract_findings(
    const std::string& epmc_id, const std::string& fulltext,
    llm::Gateway& gateway, const llm::ModelProfile& profile,
    const std::map<std::string, std::string>& extra_synonyms = {});

// Step 3: a 1-2 word lowercase label for the phrase, memoized by phrase;
// nullopt on a non-response or a label that stays over-long after one
// corrective re-prompt. The memo also caches non-responses.
class CondenseMemo {
 public:
  bool contains(const std::string& phrase) const;
  std::optional<std::string> get(const std::string& phrase) const;
  void store(const std::string& phrase, const std::optional<std::string>& label);

 private:
  std::map<std::string, std::optional<std::string>> memo_;
};
std::optional<std::string> condense(const std::string& phrase,
                                    llm::Gateway& gateway,
                                    const llm::ModelProfile& profile,
                                    CondenseMemo* memo = nullptr);

// Step 4: exhaustive, disjoint split of condensed findings (non-responses
// already removed) into the 7 datasets.
Partition partition(const std::vector<CondensedFinding>& findings);

struct Cluster {
  std::string label;
  std::vector<std::string> members;
};
// Step 5: LLM-grouped categories in batches of <= batch_size with a merge
// pass across batches; every category lands in exactly one cluster and
// anything the model does not assign becomes a singleton.
std::vector<Cluster> cluster_categories(const std::vector<std::string>& categories,
                                        llm::Gateway& gateway,
                                        const llm::ModelProfile& profile,
                                        std::size_t batch_size = 200);

// Step 6 part 1: per-outcome effects with study_count = distinct epmc ids,
// entries under min_studies dropped. The null partition must not be passed
// in here.
std::vector<LiteratureEffect> assemble_effects(
    const Partition& partitioned,
    const std::array<std::map<std::string, std::string>, 7>& category_to_cluster,
    int min_studies = 3);

// Step 6 part 2: case-insensitive, whitespace-normalized dedupe across
// outcomes; each unique category keeps links to all its effects.
std::vector<UniqueCategory> merge_unique(
    const std::vector<LiteratureEffect>& effects);

std::string normalize_category(const std::string& raw);

// --- checkpoints and the count ledger ---------------------------------------

// Newline-delimited JSON, one record per line, written atomically.
void write_ndjson(const std::string& path,
                  const std::vector<nlohmann::json>& records);
std::vector<nlohmann::json> read_ndjson(const std::string& path);

nlohmann::json finding_to_json(const CondensedFinding& f);
CondensedFinding finding_from_json(const nlohmann::json& j);
nlohmann::json effect_to_json(const LiteratureEffect& e);
LiteratureEffect effect_from_json(const nlohmann::json& j);

void write_effects_json(const std::string& path,
                        const std::vector<LiteratureEffect>& effects);
std::vector<LiteratureEffect> read_effects_json(const std::string& path);

struct LedgerRow {
  std::string step;
  long input_count = 0;
  long output_count = 0;
  long wall_ms = 0;
  std::string timestamp;  // ISO-8601 UTC
};
// Appends to ledger.csv (header created on first write).
void append_ledger(const std::string& path, const LedgerRow& row);
std::vector<LedgerRow> read_ledger(const std::string& path);

}  // namespace exposome::pipeline
