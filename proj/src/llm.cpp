#include "exposome/llm.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "exposome/image.hpp"
#include "exposome/rng.hpp"

namespace exposome::llm {

using nlohmann::json;

double backoff_delay_ms(const RetryPolicy& policy, int retry_index,
                        double jitter_u) {
  double delay = policy.base_delay_ms;
  for (int i = 1; i < retry_index; ++i) delay *= policy.factor;
  delay = std::min(delay, static_cast<double>(policy.max_delay_ms));
  // Jitter only adds, so the floor base*factor^(k-1) (capped) always holds.
  return delay + policy.jitter * delay * jitter_u;
}

// --- transports ---------------------------------------------------------------

TransportReply HttpTransport::post_chat(const std::string& endpoint,
                                        const std::string& api_key,
                                        const json& body,
                                        int timeout_seconds) {
  TransportReply reply;
  httplib::Client client(endpoint);
  client.set_connection_timeout(timeout_seconds, 0);
  client.set_read_timeout(timeout_seconds, 0);
  client.set_write_timeout(timeout_seconds, 0);
  httplib::Headers headers;
  if (!api_key.empty())
    headers.emplace("Authorization", "Bearer " + api_key);
  auto res = client.Post("/v1/chat/completions", headers, body.dump(),
                         "application/json");
  if (!res) {
    reply.error = httplib::to_string(res.error());
    return reply;
  }
  reply.status = res->status;
  reply.body = res->body;
  return reply;
}

namespace {

std::string openai_body(const std::string& content) {
  json reply = {{"choices", {{{"message", {{"role", "assistant"},
                                            {"content", content}}}}}}};
  return reply.dump();
}

std::string user_text_of(const json& body) {
  std::string text;
  for (const auto& msg : body.value("messages", json::array())) {
    if (msg.value("role", "") != "user") continue;
    const auto& content = msg.at("content");
    if (content.is_string()) {
      text += content.get<std::string>();
    } else if (content.is_array()) {
      for (const auto& part : content) {
        if (part.value("type", "") == "text")
          text += part.value("text", "");
        else if (part.value("type", "") == "image_url")
          text += part.at("image_url").value("url", "");
      }
    }
  }
  return text;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string stub_extract(const std::string& text) {
  // Lines of the form "FINDING: phrase | outcome | direction".
  json findings = json::array();
  for (const auto& line : split_lines(text)) {
    const std::string t = trim(line);
    if (t.rfind("FINDING:", 0) != 0) continue;
    const std::string payload = t.substr(8);
    std::vector<std::string> parts;
    size_t start = 0;
    while (true) {
      const size_t bar = payload.find('|', start);
      if (bar == std::string::npos) {
        parts.push_back(trim(payload.substr(start)));
        break;
      }
      parts.push_back(trim(payload.substr(start, bar - start)));
      start = bar + 1;
    }
    if (parts.size() != 3) continue;
    findings.push_back({{"context", parts[0]},
                        {"outcome", parts[1]},
                        {"direction", parts[2]},
                        {"evidence", parts[0]}});
  }
  return findings.dump();
}

std::string stub_condense(const std::string& text) {
  std::string phrase;
  for (const auto& line : split_lines(text)) {
    const std::string t = trim(line);
    if (t.rfind("Phrase:", 0) == 0) phrase = trim(t.substr(7));
  }
  if (phrase.empty() || phrase.find("unintelligible") != std::string::npos)
    return "I cannot derive a category for this.";
  std::istringstream in(lower(phrase));
  std::vector<std::string> tokens;
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  // "verbose" phrases trigger an over-long first reply; the corrective
  // re-prompt (marked by the gateway) then gets the valid label.
  const bool reprompt = text.find("Previous reply was not valid") != std::string::npos;
  if (!reprompt && phrase.find("verbose") != std::string::npos)
    return json({{"category", "far too many words"}}).dump();
  std::string label = tokens.empty() ? "misc" : tokens[0];
  if (tokens.size() > 1) label += " " + tokens[1];
  return json({{"category", label}}).dump();
}

std::string stub_cluster(const std::string& text) {
  std::vector<std::string> categories;
  bool in_list = false;
  for (const auto& line : split_lines(text)) {
    const std::string t = trim(line);
    if (t.rfind("Categories:", 0) == 0) {
      in_list = true;
      continue;
    }
    if (in_list && t.rfind("- ", 0) == 0) categories.push_back(trim(t.substr(2)));
  }
  // Group by first word; label = shortest member (ties lexicographic).
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& cat : categories) {
    if (cat.find("orphan") != std::string::npos) continue;  // singleton path
    const size_t space = cat.find(' ');
    groups[cat.substr(0, space)].push_back(cat);
  }
  json clusters = json::array();
  for (auto& [key, members] : groups) {
    std::string label = members.front();
    for (const auto& m : members)
      if (m.size() < label.size() || (m.size() == label.size() && m < label))
        label = m;
    clusters.push_back({{"label", label}, {"members", members}});
  }
  return json({{"clusters", clusters}}).dump();
}

std::string stub_rate(const std::string& text) {
  // Scale bounds are read back out of the prompt ("from <lo> (" .. "to <hi> (").
  int lo = 1, hi = 10;
  const auto read_bound = [&](const std::string& key, int fallback) {
    const size_t at = text.find(key);
    if (at == std::string::npos) return fallback;
    return std::atoi(text.c_str() + at + key.size());
  };
  lo = read_bound("from ", lo);
  hi = read_bound(" to ", hi);
  if (hi < lo) std::swap(lo, hi);
  const std::uint64_t h = fnv1a64(text);
  const int score = lo + static_cast<int>(h % static_cast<std::uint64_t>(hi - lo + 1));
  const int confidence = 1 + static_cast<int>((h >> 32) % 10);
  const std::string payload =
      json({{"score", score}, {"confidence", confidence}}).dump();
  // Half the replies arrive fenced with trailing prose; the parser must cope.
  if (h & 1)
    return "```json\n" + payload + "\n```\nConfidence noted above.";
  return "The rating follows. " + payload;
}

}  // namespace

void ScriptedTransport::push_text(const std::string& content) {
  TransportReply r;
  r.status = 200;
  r.body = openai_body(content);
  std::lock_guard lock(mutex_);
  replies_.push_back(std::move(r));
}

void ScriptedTransport::push_reply(int status, const std::string& body) {
  TransportReply r;
  r.status = status;
  r.body = body;
  std::lock_guard lock(mutex_);
  replies_.push_back(std::move(r));
}

void ScriptedTransport::push_network_error(const std::string& what) {
  TransportReply r;
  r.error = what;
  std::lock_guard lock(mutex_);
  replies_.push_back(std::move(r));
}

TransportReply ScriptedTransport::post_chat(const std::string&,
                                            const std::string&,
                                            const json& body, int) {
  std::lock_guard lock(mutex_);
  requests.push_back(body);
  if (replies_.empty()) {
    TransportReply r;
    r.error = "scripted transport exhausted";
    return r;
  }
  TransportReply r = replies_.front();
  replies_.erase(replies_.begin());
  return r;
}

TransportReply StubTransport::post_chat(const std::string&, const std::string&,
                                        const json& body, int) {
  const std::string text = user_text_of(body);
  std::string mode = mode_;
  if (mode == "auto") {
    // One stub endpoint serving every stage, dispatched on prompt shape the
    // way a single real chat endpoint would be.
    if (text.find("Categories:") != std::string::npos) mode = "cluster";
    else if (text.find("Phrase:") != std::string::npos) mode = "condense";
    else if (text.find("Rate this photograph") != std::string::npos) mode = "rate";
    else if (text.find("Article:") != std::string::npos) mode = "extract";
    else mode = "echo";
  }
  TransportReply reply;
  reply.status = 200;
  if (mode == "echo") reply.body = openai_body(text);
  else if (mode == "extract") reply.body = openai_body(stub_extract(text));
  else if (mode == "condense") reply.body = openai_body(stub_condense(text));
  else if (mode == "cluster") reply.body = openai_body(stub_cluster(text));
  else if (mode == "rate") reply.body = openai_body(stub_rate(text));
  else {
    reply.status = 404;
    reply.body = "unknown stub mode: " + mode;
  }
  return reply;
}

std::shared_ptr<Transport> make_transport(const std::string& endpoint) {
  const std::string prefix = "stub://";
  if (endpoint.rfind(prefix, 0) == 0)
    return std::make_shared<StubTransport>(endpoint.substr(prefix.size()));
  return std::make_shared<HttpTransport>();
}

// --- JSON extraction ------------------------------------------------------------

std::optional<json> extract_first_json(const std::string& text) {
  // Prefer fenced blocks, then scan for the first balanced object or array.
  std::string haystack = text;
  const size_t fence = haystack.find("```");
  if (fence != std::string::npos) {
    size_t body_start = haystack.find('\n', fence);
    const size_t fence_end =
        body_start == std::string::npos ? std::string::npos
                                        : haystack.find("```", body_start);
    if (body_start != std::string::npos && fence_end != std::string::npos)
      haystack = haystack.substr(body_start + 1, fence_end - body_start - 1);
  }
  for (size_t i = 0; i < haystack.size(); ++i) {
    const char open = haystack[i];
    if (open != '{' && open != '[') continue;
    const char close = open == '{' ? '}' : ']';
    int depth = 0;
    bool in_string = false;
    for (size_t j = i; j < haystack.size(); ++j) {
      const char c = haystack[j];
      if (in_string) {
        if (c == '\\') ++j;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == open) ++depth;
      else if (c == close && --depth == 0) {
        const std::string candidate = haystack.substr(i, j - i + 1);
        json parsed = json::parse(candidate, nullptr, false);
        if (!parsed.is_discarded()) return parsed;
        break;  // balanced but unparseable; try the next opener
      }
    }
  }
  return std::nullopt;
}

std::string validate_against_schema(const json& record, const Schema& schema) {
  if (!record.is_object()) return "reply is not a JSON object";
  for (const auto& field : schema) {
    if (!record.contains(field.name)) return "missing field '" + field.name + "'";
    const auto& v = record.at(field.name);
    if (!v.is_number()) return "field '" + field.name + "' is not numeric";
    const double x = v.get<double>();
    if (x < field.lo || x > field.hi)
      return "field '" + field.name + "' = " + std::to_string(x) +
             " outside [" + std::to_string(field.lo) + ", " +
             std::to_string(field.hi) + "]";
  }
  return "";
}

ImagePayload make_image_payload(const std::string& bytes, int max_edge) {
  const std::string scaled = downscale_to_max_edge(bytes, max_edge);
  ImagePayload payload;
  payload.media_type = probe_image(scaled).media_type;
  payload.base64 = base64_encode(scaled);
  return payload;
}

// --- gateway --------------------------------------------------------------------

struct Gateway::Impl {
  std::shared_ptr<Transport> transport;
  GatewayOptions options;
  Rng jitter_rng;
  std::mutex jitter_mutex;

  std::mutex limiter_mutex;
  std::condition_variable limiter_cv;
  int in_flight = 0;

  std::mutex throttle_mutex;
  std::chrono::steady_clock::time_point next_slot =
      std::chrono::steady_clock::now();

  std::mutex audit_mutex;

  explicit Impl(std::shared_ptr<Transport> t, GatewayOptions o)
      : transport(std::move(t)), options(std::move(o)),
        jitter_rng(options.jitter_seed) {
    if (!options.sleep_ms)
      options.sleep_ms = [](int ms) {
        std::this_thread::sleep_for(std::chrono::milliseconds(ms));
      };
  }

  double jitter_u() {
    std::lock_guard lock(jitter_mutex);
    return jitter_rng.uniform();
  }

  void acquire() {
    std::unique_lock lock(limiter_mutex);
    limiter_cv.wait(lock, [&] { return in_flight < options.max_in_flight; });
    ++in_flight;
  }

  void release() {
    {
      std::lock_guard lock(limiter_mutex);
      --in_flight;
    }
    limiter_cv.notify_one();
  }

  void throttle() {
    if (options.requests_per_second <= 0.0) return;
    const auto interval = std::chrono::microseconds(
        static_cast<long>(1e6 / options.requests_per_second));
    std::chrono::milliseconds wait_for{0};
    {
      std::lock_guard lock(throttle_mutex);
      const auto now = std::chrono::steady_clock::now();
      if (next_slot < now) next_slot = now;
      wait_for = std::chrono::duration_cast<std::chrono::milliseconds>(
          next_slot - now);
      next_slot += interval;
    }
    if (wait_for.count() > 0)
      options.sleep_ms(static_cast<int>(wait_for.count()));
  }

  void audit(const ChatRequest& request, int attempt, int status, bool ok,
             const std::string& response_or_error) {
    if (options.audit_log_path.empty()) return;
    json entry;
    entry["ts_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    entry["endpoint"] = request.profile.endpoint;
    entry["model"] = request.profile.model;
    entry["temperature"] = request.profile.temperature;
    entry["attempt"] = attempt;
    entry["status"] = status;
    entry["ok"] = ok;
    entry["request"] = {{"system", request.system}, {"user", request.user}};
    if (request.image)
      // The payload itself would bloat the log; a content hash keeps the
      // audit trail verifiable.
      entry["request"]["image_fnv64"] = fnv1a64_hex(request.image->base64);
    entry[ok ? "response" : "error"] = response_or_error;
    std::lock_guard lock(audit_mutex);
    std::ofstream out(options.audit_log_path, std::ios::app);
    out << entry.dump() << "\n";
  }

  json wire_body(const ChatRequest& request) const {
    json messages = json::array();
    if (!request.system.empty())
      messages.push_back({{"role", "system"}, {"content", request.system}});
    if (request.image) {
      const std::string url = "data:" + request.image->media_type +
                              ";base64," + request.image->base64;
      messages.push_back(
          {{"role", "user"},
           {"content",
            {{{"type", "text"}, {"text", request.user}},
             {{"type", "image_url"}, {"image_url", {{"url", url}}}}}}});
    } else {
      messages.push_back({{"role", "user"}, {"content", request.user}});
    }
    return {{"model", request.profile.model},
            {"messages", messages},
            {"temperature", request.profile.temperature},
            {"max_tokens", request.profile.max_tokens}};
  }
};

Gateway::Gateway(std::shared_ptr<Transport> transport, GatewayOptions options)
    : impl_(std::make_unique<Impl>(std::move(transport), std::move(options))) {}

Gateway::~Gateway() = default;

CompletionResult Gateway::complete(const ChatRequest& request) {
  const json body = impl_->wire_body(request);
  const auto started = std::chrono::steady_clock::now();
  const int max_attempts = std::max(1, impl_->options.retry.max_attempts);
  std::string last_error;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    impl_->throttle();
    impl_->acquire();
    TransportReply reply = impl_->transport->post_chat(
        request.profile.endpoint, request.profile.api_key, body,
        request.profile.timeout_seconds);
    impl_->release();

    if (reply.status >= 400 && reply.status < 500) {
      impl_->audit(request, attempt, reply.status, false, reply.body);
      throw HttpStatusError(reply.status, reply.body);
    }
    if (reply.ok()) {
      json parsed = json::parse(reply.body, nullptr, false);
      if (parsed.is_discarded() || !parsed.contains("choices") ||
          parsed["choices"].empty()) {
        impl_->audit(request, attempt, reply.status, false,
                     "unparseable completion body");
        throw UpstreamError("completion body not in chat-completions shape");
      }
      CompletionResult result;
      result.text = parsed["choices"][0]["message"].value("content", "");
      result.attempts = attempt;
      result.latency_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - started)
                              .count();
      impl_->audit(request, attempt, reply.status, true, result.text);
      return result;
    }
    last_error = reply.status != 0
                     ? "http status " + std::to_string(reply.status)
                     : reply.error;
    impl_->audit(request, attempt, reply.status, false, last_error);
    if (attempt < max_attempts) {
      const double delay =
          backoff_delay_ms(impl_->options.retry, attempt, impl_->jitter_u());
      impl_->options.sleep_ms(static_cast<int>(delay));
    }
  }
  throw TransportError("retries exhausted after " +
                       std::to_string(max_attempts) +
                       " attempts: " + last_error);
}

CompletionResult Gateway::complete_structured(const ChatRequest& request,
                                              const Schema& schema) {
  CompletionResult result = complete(request);
  auto parsed = extract_first_json(result.text);
  std::string problem =
      parsed ? validate_against_schema(*parsed, schema) : "no JSON object found";
  if (parsed && problem.empty()) {
    result.parsed = std::move(*parsed);
    return result;
  }

  // One corrective re-prompt, then a typed parse error keeping the raw text.
  ChatRequest retry = request;
  std::string fields;
  for (const auto& f : schema) {
    if (!fields.empty()) fields += ", ";
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s (%g..%g)", f.name.c_str(), f.lo, f.hi);
    fields += buf;
  }
  retry.user = request.user +
               "\n\nPrevious reply was not valid (" + problem +
               "). Reply with a single JSON object containing exactly these "
               "fields: " + fields + ". No other text.";
  CompletionResult second = complete(retry);
  second.attempts += result.attempts;
  parsed = extract_first_json(second.text);
  problem = parsed ? validate_against_schema(*parsed, schema)
                   : "no JSON object found";
  if (parsed && problem.empty()) {
    second.parsed = std::move(*parsed);
    return second;
  }
  throw ParseError("structured output invalid after re-prompt: " + problem,
                   second.text);
}

std::vector<RunOutcome> Gateway::run_repeated(const ChatRequest& request,
                                              int k) {
  if (k < 1) throw ConfigError("run_repeated: k must be >= 1");
  std::vector<RunOutcome> outcomes(k);
  for (int i = 0; i < k; ++i) {
    try {
      outcomes[i].result = complete(request);
    } catch (const Error& e) {
      outcomes[i].error = e.what();
    }
  }
  return outcomes;
}

}  // namespace exposome::llm
