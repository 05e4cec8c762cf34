#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "grasp/common.hpp"
#include "grasp/config.hpp"

namespace grasp {

struct ContentPart {
  PromptPart::Kind kind = PromptPart::Kind::text;
  std::string payload;  // text, or a URL / data URL for media

  bool operator==(const ContentPart&) const = default;
};

struct ToolCall {
  std::string id;
  std::string name;
  Value arguments = Value::object();

  bool operator==(const ToolCall&) const = default;
};

struct ChatMessage {
  std::string role;  // system | user | assistant | tool
  std::vector<ContentPart> parts;
  std::string tool_call_id;         // tool messages
  std::vector<ToolCall> tool_calls;  // assistant messages that call tools

  static ChatMessage text(std::string role, std::string text);

  /// Concatenated text parts.
  std::string text() const;
  /// `{role, content}` with content a string when the message is text only.
  Value to_json() const;
  static ChatMessage from_json(const Value& value);

  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  Value parameters = Value::object();
  std::optional<Value> response_schema;
  std::vector<Value> tools;  // wire signatures
  /// Identifies the calling record and node; scripted mocks advance one
  /// script per stream so results do not depend on scheduling.
  std::string stream;
};

struct ChatResponse {
  std::string text;
  std::vector<ToolCall> tool_calls;
  std::string finish_reason = "stop";
  int prompt_tokens = 0;
  int completion_tokens = 0;
  double latency_ms = 0;
  int attempts = 1;
};

enum class ApiStyle { openai_chat, mock };

struct Backoff {
  int initial_ms = 200;
  double multiplier = 2.0;
  int max_ms = 5000;
};

/// Delays before retries 1..n: non-decreasing and capped at max_ms.
std::vector<int> backoff_delays(const Backoff& backoff, int retries);

struct MockStep {
  enum class Kind { text, tool_call, failure };
  Kind kind = Kind::text;
  std::string text;
  ToolCall call;
  int status = 0;
};

struct MockSpec {
  enum class Mode { script, hash };
  /// stream: scripts and hashes advance per request stream; global: one
  /// script position shared by all callers, hashes depend on the prompt only.
  enum class Scope { stream, global };
  Mode mode = Mode::hash;
  Scope scope = Scope::stream;
  std::vector<MockStep> script;  // the last step repeats once exhausted
  int latency_ms = 0;
  std::uint64_t seed = 0;
  int words = 12;
};

struct BackendConfig {
  std::string name;
  ApiStyle api_style = ApiStyle::mock;
  std::string base_url;
  std::string model;     // upstream model id; defaults to name
  std::string auth_env;  // environment variable holding the bearer token
  bool supports_native_schema = false;
  int max_retries = 3;
  Backoff backoff;
  int timeout_ms = 60000;
  std::optional<int> max_in_flight;  // nullopt: unlimited for mock, 32 for HTTP
  Value parameters = Value::object();
  MockSpec mock;
};

/// One attempt against a model server. Throws TransportError.
class ModelClient {
 public:
  explicit ModelClient(BackendConfig config) : config_(std::move(config)) {}
  virtual ~ModelClient() = default;
  virtual ChatResponse send(const ChatRequest& request) = 0;
  const BackendConfig& config() const { return config_; }

 protected:
  BackendConfig config_;
};

/// Deterministic scriptable backend.
class MockClient : public ModelClient {
 public:
  using Responder = std::function<ChatResponse(const ChatRequest&, int call_index)>;

  explicit MockClient(BackendConfig config);
  /// Backend driven by a callback instead of the script.
  MockClient(BackendConfig config, Responder responder);

  ChatResponse send(const ChatRequest& request) override;

  std::int64_t calls() const { return calls_.load(); }
  void set_recording(bool on) { recording_ = on; }
  std::vector<ChatRequest> requests() const;

 private:
  ChatResponse from_step(const MockStep& step);
  ChatResponse hashed(const ChatRequest& request, std::size_t position) const;

  Responder responder_;
  std::atomic<std::int64_t> calls_{0};
  mutable std::mutex mutex_;
  std::map<std::string, std::size_t> positions_;
  bool recording_ = false;
  std::vector<ChatRequest> recorded_;
};

/// OpenAI-compatible `POST {base_url}/chat/completions`.
class HttpClient : public ModelClient {
 public:
  explicit HttpClient(BackendConfig config);
  ChatResponse send(const ChatRequest& request) override;

  /// Request body as sent on the wire.
  static Value request_body(const BackendConfig& config, const ChatRequest& request);
  /// Parses a chat completion response body.
  static ChatResponse parse_response(const Value& body);
};

/// Thrown when retries run out (kind backend_exhausted) or the server
/// rejects the request (kind backend_rejected).
class BackendError : public Error {
 public:
  BackendError(ErrorKind kind, int last_status, int attempts, const std::string& message)
      : Error(kind, message), last_status_(last_status), attempts_(attempts) {}
  int last_status() const noexcept { return last_status_; }
  int attempts() const noexcept { return attempts_; }

 private:
  int last_status_;
  int attempts_;
};

/// Sends with retries: transient failures (no response, 429, 5xx) are
/// retried up to max_retries with exponential backoff.
ChatResponse chat_complete(ModelClient& client, const ChatRequest& request);

struct StructuredResult {
  Value value;
  int schema_retries = 0;
  int attempts = 0;  // transport attempts over all schema rounds
};

class StructuredOutputError : public Error {
 public:
  StructuredOutputError(const std::string& message, std::string last_failure, int attempts)
      : Error(ErrorKind::structured_output, message), last_failure_(std::move(last_failure)), attempts_(attempts) {}
  const std::string& last_failure() const { return last_failure_; }
  int attempts() const noexcept { return attempts_; }

 private:
  std::string last_failure_;
  int attempts_;
};

inline constexpr int kDefaultSchemaRetries = 2;

/// Requests JSON matching `fields`, re-asking with the validation error on
/// failure up to `schema_retries` times.
StructuredResult complete_structured(ModelClient& client, ChatRequest request, const std::vector<FieldDef>& fields,
                                     int schema_retries = kDefaultSchemaRetries);

/// `data:<mime>;base64,...` for a media reference: a media-ref object, a
/// local path, an http(s) URL, or an existing data URL (returned unchanged).
/// Relative paths resolve against `base_dir`. Throws Error{media_load}.
std::string encode_media(const Value& ref, const std::filesystem::path& base_dir = {});

/// MIME type from leading bytes; empty when unrecognized.
std::string sniff_mime(std::string_view bytes);

/// Named backends with per-backend in-flight limits.
class ModelPool {
 public:
  void add(std::unique_ptr<ModelClient> client);
  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  std::vector<std::string> names() const;
  ModelClient& client(const std::string& name);

  /// Runs `fn` while holding one in-flight slot of `name`.
  template <typename Fn>
  auto with_slot(const std::string& name, Fn&& fn) {
    Entry& entry = lookup(name);
    Slot slot(entry);
    return fn(*entry.client);
  }

  /// Total requests sent to mock backends.
  std::int64_t mock_calls() const;

 private:
  struct Entry {
    std::unique_ptr<ModelClient> client;
    int limit = 0;  // 0: unlimited
    int in_flight = 0;
    std::mutex mutex;
    std::condition_variable cv;
  };
  struct Slot {
    explicit Slot(Entry& e);
    ~Slot();
    Entry& entry;
  };
  Entry& lookup(const std::string& name);

  std::map<std::string, std::unique_ptr<Entry>> entries_;
};

/// Parses a models file (map of backend name -> settings).
std::map<std::string, BackendConfig> parse_models(std::string_view yaml_text);
std::map<std::string, BackendConfig> load_models(const std::filesystem::path& path);

ModelPool make_pool(const std::map<std::string, BackendConfig>& configs);

}  // namespace grasp
