#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "exposome/errors.hpp"

namespace exposome::llm {

struct ModelProfile {
  std::string endpoint;  // "http://host:port", or "stub://<mode>" offline
  std::string model;
  std::string api_key;
  double temperature = 0.0;
  int max_tokens = 1024;
  int timeout_seconds = 120;
};

struct ImagePayload {
  std::string base64;
  std::string media_type;  // validated raster: image/png or image/jpeg
};

struct ChatRequest {
  std::string system;
  std::string user;
  std::optional<ImagePayload> image;
  ModelProfile profile;
};

struct CompletionResult {
  std::string text;
  std::optional<nlohmann::json> parsed;  // set by complete_structured
  std::string parse_diagnostic;
  double latency_ms = 0.0;
  int attempts = 0;
};

// Typed gateway failures.
class TransportError : public UpstreamError {
 public:
  using UpstreamError::UpstreamError;
};
class HttpStatusError : public UpstreamError {
 public:
  HttpStatusError(int status, const std::string& body)
      : UpstreamError("http status " + std::to_string(status) + ": " + body),
        status(status) {}
  int status;
};
class ParseError : public UpstreamError {
 public:
  ParseError(const std::string& msg, std::string raw)
      : UpstreamError(msg), raw_text(std::move(raw)) {}
  std::string raw_text;  // retained for audit
};

struct RetryPolicy {
  int max_attempts = 5;
  int base_delay_ms = 500;
  double factor = 2.0;
  int max_delay_ms = 8000;
  double jitter = 0.1;  // +/- fraction of the computed delay
};

// Delay before the k-th retry (k = 1 for the first retry):
// base * factor^(k-1), capped, then jittered by jitter_u in [0,1).
double backoff_delay_ms(const RetryPolicy& policy, int retry_index,
                        double jitter_u);

struct TransportReply {
  int status = 0;           // 0 = transport-level failure
  std::string body;
  std::string error;        // set when status == 0
  bool ok() const { return status >= 200 && status < 300; }
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual TransportReply post_chat(const std::string& endpoint,
                                   const std::string& api_key,
                                   const nlohmann::json& body,
                                   int timeout_seconds) = 0;
};

// POST {endpoint}/v1/chat/completions via cpp-httplib.
class HttpTransport : public Transport {
 public:
  TransportReply post_chat(const std::string& endpoint,
                           const std::string& api_key,
                           const nlohmann::json& body,
                           int timeout_seconds) override;
};

// Canned reply queue for tests: each call pops the front.
class ScriptedTransport : public Transport {
 public:
  void push_text(const std::string& content);  // 200 with an OpenAI-shaped body
  void push_reply(int status, const std::string& body);
  void push_network_error(const std::string& what);

  TransportReply post_chat(const std::string& endpoint,
                           const std::string& api_key,
                           const nlohmann::json& body,
                           int timeout_seconds) override;

  std::vector<nlohmann::json> requests;  // wire bodies, in call order

 private:
  std::vector<TransportReply> replies_;
  std::mutex mutex_;
};

// Deterministic rule-based stub keyed off request content; lets every CLI
// stage run offline and byte-reproducibly. Modes:
//   stub://auto      - dispatches on prompt shape (one endpoint, all stages)
//   stub://echo      - replies with the user text
//   stub://extract   - parses "FINDING: phrase | outcome | direction" lines
//   stub://condense  - first two words of the "Phrase:" line, lowercased
//   stub://cluster   - groups listed categories by their first word
//   stub://rate      - in-scale score/confidence hashed from prompt+image
class StubTransport : public Transport {
 public:
  explicit StubTransport(std::string mode) : mode_(std::move(mode)) {}
  TransportReply post_chat(const std::string& endpoint,
                           const std::string& api_key,
                           const nlohmann::json& body,
                           int timeout_seconds) override;

 private:
  std::string mode_;
};

// stub://<mode> endpoints get a StubTransport, anything else HttpTransport.
std::shared_ptr<Transport> make_transport(const std::string& endpoint);

// Client-side structured-output schema: named numeric fields with ranges.
struct FieldSpec {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;
};
using Schema = std::vector<FieldSpec>;

struct GatewayOptions {
  RetryPolicy retry;
  int max_in_flight = 16;
  double requests_per_second = 0.0;  // 0 = unthrottled
  std::string audit_log_path;        // empty disables the audit log
  std::function<void(int)> sleep_ms; // injectable for tests
  std::uint64_t jitter_seed = 0;
};

struct RunOutcome {
  std::optional<CompletionResult> result;
  std::string error;  // set when the run failed
  bool ok() const { return result.has_value(); }
};

// Shared handle, safe from many workers: an in-flight limiter plus optional
// request-rate throttle protect the endpoint, and the audit log serializes
// its writes.
class Gateway {
 public:
  Gateway(std::shared_ptr<Transport> transport, GatewayOptions options);
  ~Gateway();

  // One chat completion, with bounded retries and backoff. 4xx statuses are
  // not retried (HttpStatusError); anything else exhausting the retry budget
  // raises TransportError.
  CompletionResult complete(const ChatRequest& request);

  // complete + first-JSON-object extraction + schema validation, with one
  // corrective re-prompt before giving up (ParseError keeps the raw text).
  CompletionResult complete_structured(const ChatRequest& request,
                                       const Schema& schema);

  // k independent calls; per-run failures are embedded, order preserved.
  std::vector<RunOutcome> run_repeated(const ChatRequest& request, int k);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Strips code fences and surrounding prose, returns the first balanced JSON
// object; nullopt when none parses.
std::optional<nlohmann::json> extract_first_json(const std::string& text);

// Schema check; returns an empty string when valid, else the reason.
std::string validate_against_schema(const nlohmann::json& record,
                                    const Schema& schema);

// Validates bytes decode as PNG/JPEG before base64-ing them, downscaling to
// max_edge first (the wire payload stays bounded).
ImagePayload make_image_payload(const std::string& bytes, int max_edge = 1024);

}  // namespace exposome::llm
