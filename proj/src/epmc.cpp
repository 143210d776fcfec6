#include "exposome/epmc.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "exposome/csv.hpp"
#include "exposome/image.hpp"  // fnv1a64_hex
#include "exposome/rng.hpp"

namespace exposome::epmc {

namespace fs = std::filesystem;
using nlohmann::json;

std::string build_query(const SearchQuery& query) {
  if (query.mandatory_terms.empty())
    throw ConfigError("search query: mandatory_terms must be non-empty");
  const auto quoted = [](const std::string& term) { return "\"" + term + "\""; };
  std::string out;
  for (const auto& term : query.mandatory_terms) {
    if (!out.empty()) out += " AND ";
    out += quoted(term);
  }
  const auto append_group = [&](const std::vector<std::string>& terms) {
    if (terms.empty()) return;
    std::string group;
    for (const auto& term : terms) {
      if (!group.empty()) group += " OR ";
      group += quoted(term);
    }
    out += " AND (" + group + ")";
  };
  append_group(query.outcome_terms);
  append_group(query.context_terms);
  if (!query.extra_filter.empty()) out += " AND (" + query.extra_filter + ")";
  if (query.open_access_only) out += " AND OPEN_ACCESS:Y";
  return out;
}

std::string query_hash(const std::string& query) {
  return llm::fnv1a64_hex(query);
}

EpmcClient::EpmcClient(MinerOptions options) : options_(std::move(options)) {
  if (const char* env = std::getenv("EPMC_BASE_URL"); env && *env)
    options_.base_url = env;
  if (!options_.sleep_ms)
    options_.sleep_ms = [](int ms) {
      std::this_thread::sleep_for(std::chrono::milliseconds(ms));
    };
}

std::string EpmcClient::get_with_retry(const std::string& path) {
  Rng jitter_rng(llm::fnv1a64(path));
  std::string last_error;
  const int max_attempts = std::max(1, options_.retry.max_attempts);
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    httplib::Client client(options_.base_url);
    client.set_connection_timeout(options_.timeout_seconds, 0);
    client.set_read_timeout(options_.timeout_seconds, 0);
    ++network_calls_;
    auto res = client.Get(path);
    if (res && res->status == 404)
      throw NoFulltextError("404 for " + path);
    if (res && res->status >= 400 && res->status < 500)
      throw UpstreamError("http " + std::to_string(res->status) + " for " + path);
    if (res && res->status >= 200 && res->status < 300) return res->body;
    last_error = res ? "http " + std::to_string(res->status)
                     : httplib::to_string(res.error());
    if (attempt < max_attempts)
      options_.sleep_ms(static_cast<int>(
          llm::backoff_delay_ms(options_.retry, attempt, jitter_rng.uniform())));
  }
  throw UpstreamError("retries exhausted for " + path + ": " + last_error);
}

namespace {

std::string url_encode(const std::string& value) {
  std::string out;
  char buf[8];
  for (unsigned char c : value) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      std::snprintf(buf, sizeof buf, "%%%02X", c);
      out += buf;
    }
  }
  return out;
}

std::string sanitize_id(const std::string& id) {
  std::string out;
  for (char c : id)
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

struct SearchState {
  std::string cursor = "*";
  std::vector<json> records;
  std::set<std::string> seen_ids;
  std::set<std::string> seen_cursors;
};

}  // namespace

std::vector<PubRecord> EpmcClient::search(const std::string& query) {
  const std::string qhash = query_hash(query);
  const fs::path state_dir = fs::path(options_.cache_dir) / "search";
  fs::create_directories(state_dir);
  const fs::path state_path = state_dir / (qhash + ".state.json");

  SearchState state;
  if (fs::exists(state_path)) {
    std::ifstream in(state_path);
    json persisted = json::parse(in, nullptr, false);
    if (!persisted.is_discarded() && persisted.value("query", "") == query) {
      state.cursor =
          persisted.value("done", false) ? "" : persisted.value("cursor", "*");
      for (const auto& rec : persisted.value("records", json::array())) {
        state.records.push_back(rec);
        state.seen_ids.insert(rec.value("id", ""));
      }
      for (const auto& c : persisted.value("cursors", json::array()))
        state.seen_cursors.insert(c.get<std::string>());
    }
  }

  while (!state.cursor.empty()) {
    if (state.seen_cursors.count(state.cursor))
      throw CursorLoopError("cursor '" + state.cursor + "' seen twice for query " + query);
    state.seen_cursors.insert(state.cursor);

    const std::string path =
        "/europepmc/webservices/rest/search?query=" + url_encode(query) +
        "&format=json&pageSize=" + std::to_string(options_.page_size) +
        "&cursorMark=" + url_encode(state.cursor);
    const std::string body = get_with_retry(path);
    json page = json::parse(body, nullptr, false);
    if (page.is_discarded())
      throw UpstreamError("search page is not JSON (query " + query + ")");

    const auto results = page.contains("resultList")
                             ? page["resultList"].value("result", json::array())
                             : json::array();
    for (const auto& rec : results) {
      const std::string id = rec.value("id", "");
      if (id.empty() || state.seen_ids.count(id)) continue;
      state.seen_ids.insert(id);
      state.records.push_back(rec);
    }
    const std::string next = page.value("nextCursorMark", "");
    const bool done = next.empty() || next == state.cursor || results.empty();
    state.cursor = done ? "" : next;

    json persisted;
    persisted["query"] = query;
    persisted["cursor"] = state.cursor;
    persisted["done"] = done;
    persisted["records"] = state.records;
    persisted["cursors"] = json::array();
    for (const auto& c : state.seen_cursors) persisted["cursors"].push_back(c);
    csv::write_file_atomic(state_path.string(), persisted.dump());
    if (done) break;
  }

  std::vector<PubRecord> out;
  out.reserve(state.records.size());
  for (const auto& rec : state.records) {
    PubRecord pub;
    pub.epmc_id = rec.value("id", "");
    pub.title = rec.value("title", "");
    pub.source = rec.value("source", "MED");
    pub.has_fulltext = rec.value("isOpenAccess", "N") == "Y" ||
                       rec.value("inEPMC", "N") == "Y";
    out.push_back(std::move(pub));
  }

  // Manifest: query hash -> id list, the offline-replay index.
  json manifest;
  manifest["query"] = query;
  manifest["ids"] = json::array();
  for (const auto& pub : out) manifest["ids"].push_back(pub.epmc_id);
  csv::write_file_atomic((state_dir / (qhash + ".ids.json")).string(),
                         manifest.dump());
  return out;
}

std::string EpmcClient::fulltext_cache_path(const std::string& epmc_id) const {
  return (fs::path(options_.cache_dir) / "fulltext" /
          (sanitize_id(epmc_id) + ".txt"))
      .string();
}

std::string EpmcClient::fetch_fulltext(const std::string& source,
                                       const std::string& epmc_id) {
  const std::string cache_path = fulltext_cache_path(epmc_id);
  if (fs::exists(cache_path)) {
    std::ifstream in(cache_path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
  }
  const std::string path = "/europepmc/webservices/rest/" + url_encode(source) +
                           "/" + url_encode(epmc_id) + "/fullTextXML";
  const std::string xml = get_with_retry(path);
  std::string text;
  try {
    text = strip_xml_to_text(xml);
  } catch (const XmlParseError& e) {
    throw XmlParseError(std::string(e.what()) + " (id " + epmc_id + ")");
  }
  csv::write_file_atomic(cache_path, text);
  return text;
}

void EpmcClient::fetch_fulltexts(
    const std::vector<PubRecord>& records,
    const std::function<void(const PubRecord&, const std::string&)>& on_text,
    const std::function<void(const PubRecord&, const std::string&)>& on_error) {
  std::atomic<size_t> next{0};
  std::mutex sink_mutex;
  const int workers = std::max(1, std::min<int>(options_.max_in_flight_fulltext,
                                                static_cast<int>(records.size())));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const size_t i = next.fetch_add(1);
        if (i >= records.size()) return;
        const PubRecord& rec = records[i];
        try {
          const std::string text = fetch_fulltext(rec.source, rec.epmc_id);
          std::lock_guard lock(sink_mutex);
          on_text(rec, text);
        } catch (const Error& e) {
          std::lock_guard lock(sink_mutex);
          on_error(rec, e.what());
        }
      }
    });
  }
  for (auto& t : pool) t.join();
}

std::string strip_xml_to_text(const std::string& xml) {
  // Elements whose entire content is dropped.
  static const std::set<std::string> kDropWhole = {
      "math", "mml:math", "tex-math", "disp-formula", "inline-formula",
      "table-wrap", "table", "fig", "graphic", "xref-group"};
  // Elements whose close marks a paragraph boundary.
  static const std::set<std::string> kBlock = {"p",       "sec",  "title",
                                               "abstract", "body", "caption",
                                               "list-item"};

  std::string out;
  size_t i = 0;
  std::vector<std::string> open_stack;
  int drop_depth = 0;
  const auto decode_entity = [&](size_t at, size_t semi) {
    const std::string ent = xml.substr(at + 1, semi - at - 1);
    if (ent == "amp") return std::string("&");
    if (ent == "lt") return std::string("<");
    if (ent == "gt") return std::string(">");
    if (ent == "quot") return std::string("\"");
    if (ent == "apos") return std::string("'");
    if (!ent.empty() && ent[0] == '#') {
      const long code = ent[1] == 'x' || ent[1] == 'X'
                            ? std::strtol(ent.c_str() + 2, nullptr, 16)
                            : std::strtol(ent.c_str() + 1, nullptr, 10);
      if (code > 0 && code < 128) return std::string(1, static_cast<char>(code));
      return std::string(" ");
    }
    return std::string(" ");
  };

  while (i < xml.size()) {
    const char c = xml[i];
    if (c == '<') {
      const size_t close = xml.find('>', i);
      if (close == std::string::npos)
        throw XmlParseError("unterminated tag at byte " + std::to_string(i));
      std::string tag = xml.substr(i + 1, close - i - 1);
      i = close + 1;
      if (tag.rfind("!--", 0) == 0 || tag.rfind("?", 0) == 0 ||
          tag.rfind("!", 0) == 0)
        continue;  // comments, PIs, doctype
      const bool self_closing = !tag.empty() && tag.back() == '/';
      if (self_closing) tag.pop_back();
      const bool closing = !tag.empty() && tag.front() == '/';
      if (closing) tag.erase(0, 1);
      const size_t name_end = tag.find_first_of(" \t\r\n");
      std::string name = tag.substr(0, name_end);
      std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) {
        return static_cast<char>(std::tolower(ch));
      });
      if (name.empty()) continue;

      if (closing) {
        if (open_stack.empty())
          throw XmlParseError("unbalanced close tag </" + name + ">");
        // Tolerate interleaved inline tags by popping to the matching name.
        bool found = false;
        for (auto it = open_stack.rbegin(); it != open_stack.rend(); ++it)
          if (*it == name) {
            found = true;
            break;
          }
        if (!found)
          throw XmlParseError("close tag </" + name + "> without opener");
        while (!open_stack.empty()) {
          const std::string top = open_stack.back();
          open_stack.pop_back();
          if (kDropWhole.count(top)) --drop_depth;
          if (top == name) break;
        }
        if (drop_depth == 0 && kBlock.count(name)) {
          if (!out.empty() && out.back() != '\n') out.push_back('\n');
        }
      } else {
        if (!self_closing) {
          open_stack.push_back(name);
          if (kDropWhole.count(name)) ++drop_depth;
        }
      }
      continue;
    }
    if (drop_depth > 0) {
      ++i;
      continue;
    }
    if (c == '&') {
      const size_t semi = xml.find(';', i);
      if (semi != std::string::npos && semi - i <= 8) {
        out += decode_entity(i, semi);
        i = semi + 1;
        continue;
      }
      out.push_back('&');
      ++i;
      continue;
    }
    if (c == '\r') {
      ++i;
      continue;
    }
    out.push_back(c);
    ++i;
  }
  if (!open_stack.empty())
    throw XmlParseError("unclosed tag <" + open_stack.back() + "> at end of document");

  // Collapse runs of blank lines and trim edges.
  std::string collapsed;
  int newlines = 0;
  for (char ch : out) {
    if (ch == '\n') {
      if (++newlines <= 2) collapsed.push_back('\n');
    } else {
      newlines = 0;
      collapsed.push_back(ch);
    }
  }
  const size_t begin = collapsed.find_first_not_of(" \t\n");
  if (begin == std::string::npos) return "";
  const size_t end = collapsed.find_last_not_of(" \t\n");
  return collapsed.substr(begin, end - begin + 1);
}

}  // namespace exposome::epmc
