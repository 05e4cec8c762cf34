#include "grasp/backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "grasp/dataio.hpp"
#include "grasp/json_schema.hpp"

namespace fs = std::filesystem;

namespace grasp {

// ---------------------------------------------------------------------------
// messages
// ---------------------------------------------------------------------------

ChatMessage ChatMessage::text(std::string role, std::string text) {
  ChatMessage m;
  m.role = std::move(role);
  m.parts.push_back({PromptPart::Kind::text, std::move(text)});
  return m;
}

std::string ChatMessage::text() const {
  std::string out;
  for (const auto& p : parts) {
    if (p.kind == PromptPart::Kind::text) out += p.payload;
  }
  return out;
}

Value ChatMessage::to_json() const {
  Value out = Value::object();
  out["role"] = role;
  const bool text_only = std::all_of(parts.begin(), parts.end(),
                                     [](const ContentPart& p) { return p.kind == PromptPart::Kind::text; });
  if (text_only && parts.size() <= 1) {
    out["content"] = text();
  } else {
    Value content = Value::array();
    for (const auto& p : parts) {
      switch (p.kind) {
        case PromptPart::Kind::text: content.push_back({{"type", "text"}, {"text", p.payload}}); break;
        case PromptPart::Kind::image_url:
          content.push_back({{"type", "image_url"}, {"image_url", {{"url", p.payload}}}});
          break;
        case PromptPart::Kind::audio_url:
          content.push_back({{"type", "audio_url"}, {"audio_url", {{"url", p.payload}}}});
          break;
      }
    }
    out["content"] = std::move(content);
  }
  if (!tool_call_id.empty()) out["tool_call_id"] = tool_call_id;
  if (!tool_calls.empty()) {
    Value calls = Value::array();
    for (const auto& c : tool_calls) {
      calls.push_back({{"id", c.id},
                       {"type", "function"},
                       {"function", {{"name", c.name}, {"arguments", c.arguments.dump()}}}});
    }
    out["tool_calls"] = std::move(calls);
  }
  return out;
}

ChatMessage ChatMessage::from_json(const Value& value) {
  ChatMessage m;
  m.role = value.value("role", "");
  const Value content = value.value("content", Value());
  if (content.is_string()) {
    m.parts.push_back({PromptPart::Kind::text, content.get<std::string>()});
  } else if (content.is_array()) {
    for (const auto& part : content) {
      const std::string type = part.value("type", "text");
      if (type == "image_url") {
        m.parts.push_back({PromptPart::Kind::image_url, part.at("image_url").value("url", "")});
      } else if (type == "audio_url") {
        m.parts.push_back({PromptPart::Kind::audio_url, part.at("audio_url").value("url", "")});
      } else {
        m.parts.push_back({PromptPart::Kind::text, part.value("text", "")});
      }
    }
  }
  m.tool_call_id = value.value("tool_call_id", "");
  if (value.contains("tool_calls") && value.at("tool_calls").is_array()) {
    for (const auto& c : value.at("tool_calls")) {
      ToolCall call;
      call.id = c.value("id", "");
      const Value fn = c.value("function", Value::object());
      call.name = fn.value("name", "");
      const Value args = fn.value("arguments", Value("{}"));
      call.arguments = args.is_string() ? Value::parse(args.get<std::string>(), nullptr, false) : args;
      if (call.arguments.is_discarded()) call.arguments = Value::object();
      m.tool_calls.push_back(std::move(call));
    }
  }
  return m;
}

std::vector<int> backoff_delays(const Backoff& backoff, int retries) {
  std::vector<int> delays;
  double next = std::max(0, backoff.initial_ms);
  const double multiplier = std::max(1.0, backoff.multiplier);
  for (int i = 0; i < retries; ++i) {
    delays.push_back(static_cast<int>(std::min<double>(next, backoff.max_ms)));
    next *= multiplier;
  }
  return delays;
}

// ---------------------------------------------------------------------------
// mock
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string_view> kVocabulary = {
    "alpha",  "amber",  "answer", "bright", "cedar",  "clear",  "cloud",   "comet",  "coral",   "delta",
    "ember",  "field",  "forest", "galaxy", "garden", "harbor", "horizon", "island", "lantern", "light",
    "meadow", "metal",  "mirror", "moon",   "nebula", "ocean",  "orbit",   "planet", "prairie", "quartz",
    "river",  "rocket", "signal", "silver", "solar",  "spark",  "star",    "stone",  "summit",  "thunder",
    "timber", "valley", "vector", "violet", "water",  "window", "winter",  "zenith"};

class HashStream {
 public:
  explicit HashStream(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() { return state_ = splitmix64(state_); }
  std::string words(int count) {
    std::string out;
    for (int i = 0; i < count; ++i) {
      if (i) out.push_back(' ');
      out += kVocabulary[next() % kVocabulary.size()];
    }
    if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    return out;
  }

 private:
  std::uint64_t state_;
};

Value fake_from_schema(const Value& schema, HashStream& rng, int depth = 0) {
  const std::string type = schema.is_object() ? schema.value("type", "") : "";
  if (type == "object") {
    Value out = Value::object();
    if (schema.contains("properties")) {
      for (const auto& [name, sub] : schema.at("properties").items()) out[name] = fake_from_schema(sub, rng, depth + 1);
    }
    return out;
  }
  if (type == "array") {
    Value out = Value::array();
    if (depth < 4) out.push_back(fake_from_schema(schema.value("items", Value::object()), rng, depth + 1));
    return out;
  }
  if (type == "integer") return static_cast<std::int64_t>(rng.next() % 100);
  if (type == "number") return static_cast<double>(rng.next() % 1000) / 1000.0;
  if (type == "boolean") return (rng.next() & 1) == 1;
  return rng.words(3);
}

}  // namespace

MockClient::MockClient(BackendConfig config) : ModelClient(std::move(config)) {}

MockClient::MockClient(BackendConfig config, Responder responder)
    : ModelClient(std::move(config)), responder_(std::move(responder)) {}

std::vector<ChatRequest> MockClient::requests() const {
  std::lock_guard lock(mutex_);
  return recorded_;
}

ChatResponse MockClient::from_step(const MockStep& step) {
  ChatResponse r;
  switch (step.kind) {
    case MockStep::Kind::failure:
      throw TransportError(step.status, fmt::format("mock failure status {}", step.status));
    case MockStep::Kind::tool_call:
      r.tool_calls.push_back(step.call);
      r.finish_reason = "tool_calls";
      break;
    case MockStep::Kind::text: r.text = step.text; break;
  }
  return r;
}

ChatResponse MockClient::hashed(const ChatRequest& request, std::size_t position) const {
  Value messages = Value::array();
  for (const auto& m : request.messages) messages.push_back(m.to_json());
  std::string key = fmt::format("{}|{}|{}|{}", config_.mock.seed, request.model, canonical_dump(messages),
                                request.response_schema ? canonical_dump(*request.response_schema) : "");
  if (config_.mock.scope == MockSpec::Scope::stream) key += fmt::format("|{}|{}", request.stream, position);
  HashStream rng(hash64(key));
  ChatResponse r;
  if (request.response_schema) {
    r.text = fake_from_schema(*request.response_schema, rng).dump();
  } else {
    r.text = rng.words(std::max(1, config_.mock.words)) + ".";
  }
  return r;
}

ChatResponse MockClient::send(const ChatRequest& request) {
  const std::int64_t call = calls_.fetch_add(1);
  std::size_t position = 0;
  {
    std::lock_guard lock(mutex_);
    if (recording_) recorded_.push_back(request);
    if (!responder_ && (config_.mock.mode == MockSpec::Mode::script || config_.mock.scope == MockSpec::Scope::stream)) {
      const std::string key = config_.mock.scope == MockSpec::Scope::stream ? request.stream : std::string();
      position = positions_[key]++;
    }
  }
  if (config_.mock.latency_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(config_.mock.latency_ms));
  ChatResponse r;
  if (responder_) {
    r = responder_(request, static_cast<int>(call));
  } else if (config_.mock.mode == MockSpec::Mode::script) {
    if (config_.mock.script.empty()) throw Error(ErrorKind::config, "mock " + config_.name + " has an empty script");
    r = from_step(config_.mock.script[std::min(position, config_.mock.script.size() - 1)]);
  } else {
    r = hashed(request, position);
  }
  int prompt_chars = 0;
  for (const auto& m : request.messages) prompt_chars += static_cast<int>(m.text().size());
  r.prompt_tokens = prompt_chars / 4;
  r.completion_tokens = static_cast<int>(r.text.size()) / 4;
  return r;
}

// ---------------------------------------------------------------------------
// HTTP
// ---------------------------------------------------------------------------

namespace {

/// Splits `https://host:port/prefix` into origin and path prefix.
std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  const auto slash = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (slash == std::string::npos) return {url, ""};
  std::string prefix = url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, slash), prefix};
}

}  // namespace

HttpClient::HttpClient(BackendConfig config) : ModelClient(std::move(config)) {
  if (config_.base_url.empty()) throw Error(ErrorKind::config, "backend " + config_.name + " needs base_url");
}

Value HttpClient::request_body(const BackendConfig& config, const ChatRequest& request) {
  Value body = Value::object();
  body["model"] = config.model.empty() ? request.model : config.model;
  Value messages = Value::array();
  for (const auto& m : request.messages) messages.push_back(m.to_json());
  body["messages"] = std::move(messages);
  for (const auto& [key, value] : config.parameters.items()) body[key] = value;
  for (const auto& [key, value] : request.parameters.items()) body[key] = value;
  if (!request.tools.empty()) body["tools"] = request.tools;
  if (request.response_schema && config.supports_native_schema) {
    body["response_format"] = {
        {"type", "json_schema"},
        {"json_schema", {{"name", "response"}, {"schema", *request.response_schema}, {"strict", true}}}};
  }
  return body;
}

ChatResponse HttpClient::parse_response(const Value& body) {
  if (!body.contains("choices") || !body.at("choices").is_array() || body.at("choices").empty()) {
    throw TransportError(502, "response has no choices");
  }
  const Value& choice = body.at("choices").at(0);
  const ChatMessage message = ChatMessage::from_json(choice.value("message", Value::object()));
  ChatResponse r;
  r.text = message.text();
  r.tool_calls = message.tool_calls;
  const Value finish = choice.value("finish_reason", Value("stop"));
  r.finish_reason = finish.is_string() ? finish.get<std::string>() : "stop";
  if (body.contains("usage") && body.at("usage").is_object()) {
    r.prompt_tokens = body.at("usage").value("prompt_tokens", 0);
    r.completion_tokens = body.at("usage").value("completion_tokens", 0);
  }
  if (!r.text.empty() && !r.tool_calls.empty()) spdlog::debug("response carries both text and tool calls");
  return r;
}

ChatResponse HttpClient::send(const ChatRequest& request) {
  const auto [origin, prefix] = split_url(config_.base_url);
  httplib::Client client(origin);
  const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!config_.auth_env.empty()) {
    if (const char* token = std::getenv(config_.auth_env.c_str()); token && *token) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }
  const std::string body = request_body(config_, request).dump();
  auto result = client.Post(prefix + "/chat/completions", headers, body, "application/json");
  if (!result) throw TransportError(0, "request failed: " + httplib::to_string(result.error()));
  if (result->status < 200 || result->status >= 300) {
    throw TransportError(result->status, fmt::format("HTTP {}: {}", result->status, result->body.substr(0, 500)));
  }
  const Value parsed = Value::parse(result->body, nullptr, false);
  if (parsed.is_discarded()) throw TransportError(502, "response body is not JSON");
  return parse_response(parsed);
}

// ---------------------------------------------------------------------------
// retries and structured output
// ---------------------------------------------------------------------------

ChatResponse chat_complete(ModelClient& client, const ChatRequest& request) {
  const BackendConfig& cfg = client.config();
  const int retries = std::max(0, cfg.max_retries);
  const std::vector<int> delays = backoff_delays(cfg.backoff, retries);
  for (int attempt = 1;; ++attempt) {
    const auto start = std::chrono::steady_clock::now();
    try {
      ChatResponse r = client.send(request);
      r.attempts = attempt;
      r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      return r;
    } catch (const TransportError& e) {
      if (!e.transient()) {
        throw BackendError(ErrorKind::backend_rejected, e.status(), attempt,
                           fmt::format("backend {} rejected the request: {}", cfg.name, e.what()));
      }
      if (attempt > retries) {
        throw BackendError(ErrorKind::backend_exhausted, e.status(), attempt,
                           fmt::format("backend {} exhausted after {} attempts (last status {}): {}", cfg.name,
                                       attempt, e.status(), e.what()));
      }
      spdlog::debug("backend {} attempt {} failed ({}); retrying", cfg.name, attempt, e.what());
      std::this_thread::sleep_for(std::chrono::milliseconds(delays[attempt - 1]));
    }
  }
}

StructuredResult complete_structured(ModelClient& client, ChatRequest request, const std::vector<FieldDef>& fields,
                                     int schema_retries) {
  const Value schema = fields_to_json_schema(fields);
  request.response_schema = schema;
  if (!client.config().supports_native_schema) {
    request.messages.push_back(ChatMessage::text(
        "system", "Respond with only a JSON object matching this JSON schema: " + schema.dump()));
  }
  StructuredResult result;
  std::string failure;
  for (int round = 0;; ++round) {
    ChatResponse response = chat_complete(client, request);
    result.attempts += response.attempts;
    const auto parsed = extract_json(response.text);
    if (!parsed) {
      failure = "response is not valid JSON";
    } else {
      const auto problems = validate_fields(*parsed, fields);
      if (problems.empty()) {
        result.value = Value::object();
        for (const auto& f : fields) result.value[f.name] = parsed->at(f.name);
        result.schema_retries = round;
        return result;
      }
      failure.clear();
      for (const auto& p : problems) failure += (failure.empty() ? "" : "; ") + p;
    }
    if (round >= schema_retries) {
      throw StructuredOutputError(
          fmt::format("structured output invalid after {} retries: {}", schema_retries, failure), failure,
          result.attempts);
    }
    request.messages.push_back(ChatMessage::text("assistant", response.text));
    request.messages.push_back(ChatMessage::text(
        "system", "The previous response failed validation (" + failure +
                      "). Reply with only a JSON object that matches the schema."));
  }
}

// ---------------------------------------------------------------------------
// media
// ---------------------------------------------------------------------------

std::string sniff_mime(std::string_view b) {
  auto at = [&](std::size_t offset, std::string_view magic) { return b.substr(offset, magic.size()) == magic; };
  if (at(0, "\x89PNG\r\n\x1a\n")) return "image/png";
  if (at(0, "\xFF\xD8\xFF")) return "image/jpeg";
  if (at(0, "GIF87a") || at(0, "GIF89a")) return "image/gif";
  if (at(0, "RIFF") && at(8, "WAVE")) return "audio/wav";
  if (at(0, "RIFF") && at(8, "WEBP")) return "image/webp";
  if (at(0, "BM")) return "image/bmp";
  if (at(0, "fLaC")) return "audio/flac";
  if (at(0, "OggS")) return "audio/ogg";
  if (at(0, "ID3") || (b.size() > 1 && static_cast<unsigned char>(b[0]) == 0xFF &&
                       (static_cast<unsigned char>(b[1]) & 0xE0) == 0xE0)) {
    return "audio/mpeg";
  }
  return {};
}

namespace {

std::pair<std::string, std::string> fetch_url(const std::string& url) {
  const auto [origin, path] = split_url(url);
  httplib::Client client(origin);
  client.set_follow_location(true);
  client.set_connection_timeout(std::chrono::seconds(30));
  client.set_read_timeout(std::chrono::seconds(60));
  auto result = client.Get(path.empty() ? "/" : path);
  if (!result) throw Error(ErrorKind::media_load, "cannot fetch " + url + ": " + httplib::to_string(result.error()));
  if (result->status != 200) throw Error(ErrorKind::media_load, fmt::format("cannot fetch {}: HTTP {}", url, result->status));
  std::string mime = result->get_header_value("Content-Type");
  mime = trim(mime.substr(0, mime.find(';')));
  return {result->body, mime};
}

std::string read_media_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::media_load, "cannot read media file " + path.string());
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return bytes.str();
}

}  // namespace

std::string encode_media(const Value& ref, const fs::path& base_dir) {
  std::string bytes;
  std::string mime;
  std::string location;
  auto load_location = [&](const std::string& where) {
    location = where;
    if (starts_with(where, "http://") || starts_with(where, "https://")) {
      auto [body, header_mime] = fetch_url(where);
      bytes = std::move(body);
      if (mime.empty()) mime = header_mime == "application/octet-stream" ? std::string() : header_mime;
    } else {
      fs::path path = where;
      if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
      bytes = read_media_file(path);
    }
  };

  if (ref.is_string()) {
    const std::string s = ref.get<std::string>();
    if (starts_with(s, "data:")) return s;
    if (s.empty()) throw Error(ErrorKind::media_load, "empty media reference");
    load_location(s);
  } else if (is_media_ref(ref)) {
    if (ref.contains("mime") && ref.at("mime").is_string()) mime = ref.at("mime").get<std::string>();
    if (ref.contains("url") && ref.at("url").is_string() && starts_with(ref.at("url").get<std::string>(), "data:")) {
      return ref.at("url").get<std::string>();
    }
    if (ref.contains("bytes") && ref.at("bytes").is_string()) {
      bytes = base64_decode(ref.at("bytes").get<std::string>());
      if (ref.contains("path") && ref.at("path").is_string()) location = ref.at("path").get<std::string>();
    } else if (ref.contains("path") && ref.at("path").is_string()) {
      load_location(ref.at("path").get<std::string>());
    } else {
      load_location(ref.at("url").get<std::string>());
    }
  } else {
    throw Error(ErrorKind::media_load, "not a media reference: " + ref.dump().substr(0, 200));
  }
  if (mime.empty()) mime = guess_mime(location);
  if (mime.empty()) mime = sniff_mime(bytes);
  if (mime.empty()) mime = "application/octet-stream";
  return "data:" + mime + ";base64," + base64_encode(bytes);
}

// ---------------------------------------------------------------------------
// pool and models file
// ---------------------------------------------------------------------------

ModelPool::Slot::Slot(Entry& e) : entry(e) {
  if (entry.limit <= 0) return;
  std::unique_lock lock(entry.mutex);
  entry.cv.wait(lock, [&] { return entry.in_flight < entry.limit; });
  ++entry.in_flight;
}

ModelPool::Slot::~Slot() {
  if (entry.limit <= 0) return;
  {
    std::lock_guard lock(entry.mutex);
    --entry.in_flight;
  }
  entry.cv.notify_one();
}

void ModelPool::add(std::unique_ptr<ModelClient> client) {
  auto entry = std::make_unique<Entry>();
  const BackendConfig& cfg = client->config();
  entry->limit = cfg.max_in_flight.value_or(cfg.api_style == ApiStyle::mock ? 0 : 32);
  const std::string name = cfg.name;
  entry->client = std::move(client);
  entries_[name] = std::move(entry);
}

std::vector<std::string> ModelPool::names() const {
  std::vector<std::string> out;
  for (const auto& [name, entry] : entries_) out.push_back(name);
  return out;
}

ModelPool::Entry& ModelPool::lookup(const std::string& name) {
  const auto it = entries_.find(name);
  if (it == entries_.end()) throw Error(ErrorKind::node_failure, "unknown backend " + name);
  return *it->second;
}

ModelClient& ModelPool::client(const std::string& name) { return *lookup(name).client; }

std::int64_t ModelPool::mock_calls() const {
  std::int64_t total = 0;
  for (const auto& [name, entry] : entries_) {
    if (const auto* mock = dynamic_cast<const MockClient*>(entry->client.get())) total += mock->calls();
  }
  return total;
}

namespace {

MockStep parse_step(const Value& v, const std::string& where) {
  MockStep step;
  if (v.is_string()) {
    step.text = v.get<std::string>();
    return step;
  }
  if (!v.is_object()) {
    step.text = v.dump();
    return step;
  }
  if (v.contains("status")) {
    step.kind = MockStep::Kind::failure;
    step.status = v.at("status").get<int>();
  } else if (v.contains("tool_call")) {
    const Value& c = v.at("tool_call");
    step.kind = MockStep::Kind::tool_call;
    step.call.name = c.value("name", "");
    step.call.id = c.value("id", "call_" + step.call.name);
    step.call.arguments = c.value("arguments", Value::object());
    if (step.call.name.empty()) throw Error(ErrorKind::config, where + ": tool_call needs a name");
  } else if (v.contains("json")) {
    step.text = v.at("json").dump();
  } else if (v.contains("text")) {
    step.text = display(v.at("text"));
  } else {
    throw Error(ErrorKind::config, where + ": script step needs text, json, tool_call or status");
  }
  return step;
}

}  // namespace

std::map<std::string, BackendConfig> parse_models(std::string_view yaml_text) {
  Value doc = yaml_to_value(yaml_text);
  if (doc.is_object() && doc.contains("models") && doc.at("models").is_object()) doc = doc.at("models");
  std::map<std::string, BackendConfig> out;
  if (doc.is_null()) return out;
  if (!doc.is_object()) throw Error(ErrorKind::config, "models file must map backend names to settings");
  for (const auto& [name, v] : doc.items()) {
    if (!v.is_object()) throw Error(ErrorKind::config, "models." + name + " must be a map");
    BackendConfig cfg;
    cfg.name = name;
    const std::string style = v.value("api_style", v.contains("base_url") ? "openai_chat" : "mock");
    if (style == "mock") {
      cfg.api_style = ApiStyle::mock;
    } else if (style == "openai_chat" || style == "openai") {
      cfg.api_style = ApiStyle::openai_chat;
    } else {
      throw Error(ErrorKind::config, fmt::format("models.{}: unknown api_style {}", name, style));
    }
    cfg.base_url = v.value("base_url", "");
    cfg.model = v.value("model", name);
    cfg.auth_env = v.value("auth_env", "");
    cfg.supports_native_schema = v.value("supports_native_schema", false);
    cfg.max_retries = v.value("max_retries", 3);
    cfg.timeout_ms = v.value("timeout_ms", 60000);
    if (v.contains("max_in_flight")) cfg.max_in_flight = v.at("max_in_flight").get<int>();
    if (v.contains("parameters")) cfg.parameters = v.at("parameters");
    if (v.contains("backoff")) {
      const Value& b = v.at("backoff");
      cfg.backoff.initial_ms = b.value("initial_ms", cfg.backoff.initial_ms);
      cfg.backoff.multiplier = b.value("multiplier", cfg.backoff.multiplier);
      cfg.backoff.max_ms = b.value("max_ms", cfg.backoff.max_ms);
    }
    if (cfg.max_retries < 0) throw Error(ErrorKind::config, "models." + name + ".max_retries must be >= 0");
    if (cfg.backoff.multiplier < 1.0 || cfg.backoff.initial_ms < 0 || cfg.backoff.max_ms < cfg.backoff.initial_ms) {
      throw Error(ErrorKind::config, "models." + name + ".backoff must be non-decreasing");
    }
    if (v.contains("mock")) {
      const Value& m = v.at("mock");
      MockSpec& spec = cfg.mock;
      spec.latency_ms = m.value("latency_ms", 0);
      spec.seed = m.value("seed", std::uint64_t{0});
      spec.words = m.value("words", 12);
      const std::string scope = m.value("scope", "stream");
      spec.scope = scope == "global" ? MockSpec::Scope::global : MockSpec::Scope::stream;
      if (m.contains("script")) {
        spec.mode = MockSpec::Mode::script;
        const Value& script = m.at("script");
        if (!script.is_array() || script.empty()) {
          throw Error(ErrorKind::config, "models." + name + ".mock.script must be a non-empty list");
        }
        for (std::size_t i = 0; i < script.size(); ++i) {
          spec.script.push_back(parse_step(script[i], fmt::format("models.{}.mock.script[{}]", name, i)));
        }
      }
      if (m.value("mode", "") == "hash") spec.mode = MockSpec::Mode::hash;
    }
    out[name] = std::move(cfg);
  }
  return out;
}

std::map<std::string, BackendConfig> load_models(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::config, "cannot read models file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_models(text.str());
}

ModelPool make_pool(const std::map<std::string, BackendConfig>& configs) {
  ModelPool pool;
  for (const auto& [name, cfg] : configs) {
    if (cfg.api_style == ApiStyle::mock) {
      pool.add(std::make_unique<MockClient>(cfg));
    } else {
      pool.add(std::make_unique<HttpClient>(cfg));
    }
  }
  return pool;
}

}  // namespace grasp
