#pragma once

#include <atomic>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "exposome/errors.hpp"
#include "exposome/llm.hpp"

namespace exposome::epmc {

struct SearchQuery {
  std::vector<std::string> mandatory_terms = {"Psychology"};
  std::vector<std::string> outcome_terms;
  std::vector<std::string> context_terms;
  bool open_access_only = true;
  // Verbatim extra clause (date or article-type restriction); empty = none.
  std::string extra_filter;
};

// Deterministic: mandatory terms AND-joined, each optional group OR-joined
// in parentheses and AND-combined, OPEN_ACCESS:Y appended when flagged.
std::string build_query(const SearchQuery& query);

struct PubRecord {
  std::string epmc_id;
  std::string title;
  std::string source;  // e.g. "MED", "PMC"
  bool has_fulltext = false;
  std::optional<std::string> fulltext;
};

class NoFulltextError : public UpstreamError {
 public:
  using UpstreamError::UpstreamError;
};
class XmlParseError : public UpstreamError {
 public:
  using UpstreamError::UpstreamError;
};
class CursorLoopError : public UpstreamError {
 public:
  using UpstreamError::UpstreamError;
};

struct MinerOptions {
  // EPMC_BASE_URL overrides (points tests at a replay server).
  std::string base_url = "https://www.ebi.ac.uk";
  std::string cache_dir = "epmc_cache";
  int page_size = 1000;
  llm::RetryPolicy retry{.max_attempts = 5, .base_delay_ms = 500,
                         .factor = 2.0, .max_delay_ms = 8000, .jitter = 0.1};
  int timeout_seconds = 60;
  int max_in_flight_fulltext = 8;
  std::function<void(int)> sleep_ms;  // injectable for tests
};

// REST client with cursorMark pagination and a disk cache. Search state is
// persisted per query hash after every page, so interrupted runs resume from
// the last cursor; full texts are cached one file per publication.
class EpmcClient {
 public:
  explicit EpmcClient(MinerOptions options);

  // All hits for the query, deduplicated across pages. Resumes from a
  // persisted cursor when one exists for this query.
  std::vector<PubRecord> search(const std::string& query);

  // Plain text of the open-access full text (tags stripped, paragraphs
  // preserved). Cached by id; a 404 raises NoFulltextError.
  std::string fetch_fulltext(const std::string& source,
                             const std::string& epmc_id);

  // Bounded-parallel fulltext retrieval; per-record failures land in
  // on_error, successes in on_text. Order of callbacks is not specified;
  // both are invoked under a mutex.
  void fetch_fulltexts(
      const std::vector<PubRecord>& records,
      const std::function<void(const PubRecord&, const std::string&)>& on_text,
      const std::function<void(const PubRecord&, const std::string&)>& on_error);

  // Network round-trips made by this client instance (cache hits skip it).
  long network_calls() const { return network_calls_.load(); }

 private:
  std::string get_with_retry(const std::string& path);
  std::string fulltext_cache_path(const std::string& epmc_id) const;

  MinerOptions options_;
  std::atomic<long> network_calls_{0};
};

// JATS-ish XML -> plain text: math and table markup dropped whole, section/
// paragraph boundaries preserved as newlines, entities decoded. Structural
// breakage raises XmlParseError.
std::string strip_xml_to_text(const std::string& xml);

std::string query_hash(const std::string& query);  // stable cache key

}  // namespace exposome::epmc
