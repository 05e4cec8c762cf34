#include "grasp/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <mutex>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "grasp/dataio.hpp"

namespace grasp {

Value to_value(const NodeTrace& trace) {
  Value out = {{"node", trace.node}, {"attempt", trace.attempt}, {"duration_ms", trace.duration_ms}};
  if (trace.error) {
    out["error"] = *trace.error;
    out["error_kind"] = trace.error_kind;
  }
  if (!trace.detail.empty()) out["detail"] = trace.detail;
  return out;
}

Value RecordState::history_value() const {
  Value out = Value::array();
  for (const auto& m : history) out.push_back(m.to_json());
  return out;
}

std::optional<Value> lookup_placeholder(const std::string& name, const RecordState& state,
                                        const GraphSettings& settings) {
  if (state.values.contains(name)) return state.values.at(name);
  if (name == "messages") return state.history_value();
  if (name == "record_id" || name == "__index") return Value(state.record_id);
  if (settings.extra.contains(name)) return settings.extra.at(name);
  if (name == "chat_history_window_size") return Value(settings.chat_history_window_size);
  if (name == "chat_conversation") {
    return Value(settings.chat_conversation == ChatMode::multiturn ? "multiturn" : "singleturn");
  }
  return std::nullopt;
}

namespace {

bool name_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool name_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

/// Placeholder name when `text` is exactly `{name}`.
std::optional<std::string> sole_placeholder(std::string_view text) {
  const std::string t = trim(text);
  if (t.size() < 3 || t.front() != '{' || t.back() != '}' || !name_start(t[1])) return std::nullopt;
  for (std::size_t i = 2; i + 1 < t.size(); ++i) {
    if (!name_char(t[i])) return std::nullopt;
  }
  return t.substr(1, t.size() - 2);
}

Value resolve_required(const std::string& name, const RecordState& state, const GraphSettings& settings) {
  auto value = lookup_placeholder(name, state, settings);
  if (!value) throw Error(ErrorKind::missing_key, fmt::format("missing key '{}'", name));
  return *value;
}

}  // namespace

std::string substitute(std::string_view text, const RecordState& state, const GraphSettings& settings) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '{' && i + 1 < text.size() && text[i + 1] == '{') {
      out.push_back('{');
      ++i;
      continue;
    }
    if (c == '}' && i + 1 < text.size() && text[i + 1] == '}') {
      out.push_back('}');
      ++i;
      continue;
    }
    if (c == '{' && i + 1 < text.size() && name_start(text[i + 1])) {
      std::size_t j = i + 1;
      while (j < text.size() && name_char(text[j])) ++j;
      if (j < text.size() && text[j] == '}') {
        out += display(resolve_required(std::string(text.substr(i + 1, j - i - 1)), state, settings));
        i = j;
        continue;
      }
    }
    out.push_back(c);
  }
  return out;
}

std::vector<ChatMessage> render_prompt(const std::vector<PromptMessage>& templates, const RecordState& state,
                                       const GraphSettings& settings, const std::filesystem::path& media_base) {
  std::vector<ChatMessage> rendered;
  for (const auto& message : templates) {
    ChatMessage m;
    m.role = message.role;
    for (const auto& part : message.parts) {
      if (part.kind == PromptPart::Kind::text) {
        m.parts.push_back({part.kind, substitute(part.payload, state, settings)});
        continue;
      }
      const auto name = sole_placeholder(part.payload);
      const Value ref = name ? resolve_required(*name, state, settings)
                             : Value(substitute(part.payload, state, settings));
      try {
        m.parts.push_back({part.kind, encode_media(ref, media_base)});
      } catch (const Error& e) {
        throw Error(ErrorKind::media_load, fmt::format("record {} field {}: {}", state.record_id,
                                                       name.value_or(part.payload), e.what()));
      }
    }
    rendered.push_back(std::move(m));
  }
  if (settings.chat_conversation != ChatMode::multiturn || state.history.empty()) return rendered;

  const std::size_t window = static_cast<std::size_t>(std::max(0, settings.chat_history_window_size));
  const std::size_t take = std::min(window, state.history.size());
  std::vector<ChatMessage> out;
  std::size_t i = 0;
  while (i < rendered.size() && rendered[i].role == "system") out.push_back(rendered[i++]);
  out.insert(out.end(), state.history.end() - static_cast<std::ptrdiff_t>(take), state.history.end());
  out.insert(out.end(), rendered.begin() + static_cast<std::ptrdiff_t>(i), rendered.end());
  return out;
}

std::uint64_t sampler_seed(std::uint64_t run_seed, RecordId record_id, std::string_view node) {
  return splitmix64(splitmix64(run_seed) ^ hash64(fmt::format("{}/{}", record_id, node)));
}

Value sample_weighted(const std::vector<SamplerChoice>& choices, std::uint64_t seed) {
  double total = 0;
  for (const auto& c : choices) total += c.weight;
  if (choices.empty() || !(total > 0)) throw Error(ErrorKind::config, "sampler weights must sum to > 0");
  const double u = static_cast<double>(splitmix64(seed) >> 11) * 0x1.0p-53 * total;
  double acc = 0;
  for (const auto& c : choices) {
    acc += c.weight;
    if (u < acc && c.weight > 0) return c.value;
  }
  for (auto it = choices.rbegin(); it != choices.rend(); ++it) {
    if (it->weight > 0) return it->value;
  }
  return choices.back().value;
}

// ---------------------------------------------------------------------------
// executors
// ---------------------------------------------------------------------------

namespace {

struct Execution {
  const BoundNode& node;
  RecordState& state;
  RuntimeContext& ctx;
  NodeTrace& trace;
  int attempts = 0;

  std::string stream() const { return fmt::format("{}/{}", state.record_id, node.name); }

  void write(const std::string& key, Value value) {
    if (std::find(node.output_keys.begin(), node.output_keys.end(), key) == node.output_keys.end()) {
      throw Error(ErrorKind::undeclared_output, fmt::format("undeclared output '{}'", key));
    }
    state.values[key] = std::move(value);
  }

  const std::string& first_key() const {
    if (node.output_keys.empty()) throw Error(ErrorKind::undeclared_output, "node declares no output key");
    return node.output_keys.front();
  }

  ChatRequest request(const ModelSpec& model, std::vector<ChatMessage> messages) const {
    ChatRequest r;
    r.model = model.name;
    r.messages = std::move(messages);
    r.parameters = model.parameters;
    r.stream = stream();
    return r;
  }

  void remember(const std::vector<ChatMessage>& rendered, const std::vector<ChatMessage>& appended) {
    for (const auto& m : rendered) {
      if (m.role != "system") state.history.push_back(m);
    }
    state.history.insert(state.history.end(), appended.begin(), appended.end());
  }

  std::vector<ChatMessage> prompt() const {
    return render_prompt(node.spec.prompt, state, ctx.graph.settings, ctx.media_base);
  }

  /// The new turn only: the template messages without history.
  std::vector<ChatMessage> new_turn(const std::vector<ChatMessage>& rendered) const {
    if (ctx.graph.settings.chat_conversation != ChatMode::multiturn) return rendered;
    GraphSettings single = ctx.graph.settings;
    single.chat_conversation = ChatMode::singleturn;
    return render_prompt(node.spec.prompt, state, single, ctx.media_base);
  }

  void run_llm() {
    const ModelSpec& model = *node.spec.model;
    const auto rendered = prompt();
    const auto turn = new_turn(rendered);
    if (!node.structured_fields.empty()) {
      StructuredResult result;
      try {
        result = ctx.models.with_slot(model.name, [&](ModelClient& client) {
          return complete_structured(client, request(model, rendered), node.structured_fields);
        });
      } catch (const StructuredOutputError& e) {
        attempts += e.attempts();
        throw;
      }
      attempts += result.attempts;
      trace.detail["schema_retries"] = result.schema_retries;
      const bool per_field = node.output_keys.size() == node.structured_fields.size() &&
                             std::all_of(node.structured_fields.begin(), node.structured_fields.end(),
                                         [&](const FieldDef& f) { return result.value.contains(f.name) &&
                                                                          std::find(node.output_keys.begin(),
                                                                                    node.output_keys.end(),
                                                                                    f.name) != node.output_keys.end(); });
      if (per_field) {
        for (const auto& [key, value] : result.value.items()) write(key, value);
      } else {
        write(first_key(), result.value);
      }
      remember(turn, {ChatMessage::text("assistant", result.value.dump())});
      return;
    }
    ChatResponse response = call(model, rendered);
    write(first_key(), response.text);
    remember(turn, {ChatMessage::text("assistant", response.text)});
  }

  ChatResponse call(const ModelSpec& model, std::vector<ChatMessage> messages, std::vector<Value> tools = {}) {
    ChatRequest r = request(model, std::move(messages));
    r.tools = std::move(tools);
    try {
      ChatResponse response =
          ctx.models.with_slot(model.name, [&](ModelClient& client) { return chat_complete(client, r); });
      attempts += response.attempts;
      return response;
    } catch (const BackendError& e) {
      attempts += e.attempts();
      throw;
    }
  }

  void run_multi_llm() {
    const auto rendered = prompt();
    Value results = Value::object();
    Value errors = Value::object();
    for (const auto& model : node.spec.models) {
      try {
        results[model.name] = call(model, rendered).text;
      } catch (const Error& e) {
        errors[model.name] = e.what();
      }
    }
    if (!errors.empty()) trace.detail["model_errors"] = errors;
    if (results.empty()) throw Error(ErrorKind::node_failure, "all models failed: " + errors.dump());
    write(first_key(), std::move(results));
  }

  void run_sampler() {
    write(first_key(), sample_weighted(node.spec.sampler, sampler_seed(ctx.run_seed, state.record_id, node.name)));
  }

  void run_lambda() {
    const Value out = (*node.lambda)(state.values);
    if (out.is_null()) return;
    if (!out.is_object()) throw Error(ErrorKind::node_failure, "lambda must return a map of output keys");
    for (const auto& [key, value] : out.items()) {
      if (std::find(node.output_keys.begin(), node.output_keys.end(), key) == node.output_keys.end()) {
        throw Error(ErrorKind::undeclared_output, fmt::format("undeclared output '{}'", key));
      }
    }
    for (const auto& [key, value] : out.items()) state.values[key] = value;
  }

  void run_agent() {
    static std::mutex serialized_tools;
    const ModelSpec& model = *node.spec.model;
    std::vector<ChatMessage> messages = prompt();
    const auto turn = new_turn(messages);
    std::vector<Value> signatures;
    for (const ToolSpec* tool : node.tools) signatures.push_back(tool->signature());

    std::vector<ChatMessage> transcript;
    Value turns = Value::array();
    for (int k = 1; k <= node.spec.max_turns; ++k) {
      if (const auto it = node.spec.inject_system_messages.find(k); it != node.spec.inject_system_messages.end()) {
        messages.push_back(ChatMessage::text("system", it->second));
        transcript.push_back(messages.back());
      }
      const auto start = std::chrono::steady_clock::now();
      ChatResponse response = call(model, messages, signatures);
      Value entry = {{"turn", k}, {"attempts", response.attempts}};
      if (response.tool_calls.empty()) {
        ChatMessage final_message = ChatMessage::text("assistant", response.text);
        transcript.push_back(final_message);
        entry["duration_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        turns.push_back(std::move(entry));
        trace.detail["turns"] = turns;
        Value transcript_value = Value::array();
        for (const auto& m : transcript) transcript_value.push_back(m.to_json());
        write(first_key(), response.text);
        write(first_key() + "__transcript", std::move(transcript_value));
        remember(turn, transcript);
        return;
      }
      ChatMessage assistant;
      assistant.role = "assistant";
      if (!response.text.empty()) assistant.parts.push_back({PromptPart::Kind::text, response.text});
      assistant.tool_calls = response.tool_calls;
      for (std::size_t i = 0; i < assistant.tool_calls.size(); ++i) {
        if (assistant.tool_calls[i].id.empty()) assistant.tool_calls[i].id = fmt::format("call_{}_{}", k, i);
      }
      messages.push_back(assistant);
      transcript.push_back(assistant);
      Value calls = Value::array();
      for (const auto& tc : assistant.tool_calls) {
        std::string content;
        const ToolSpec* tool = nullptr;
        for (const ToolSpec* t : node.tools) {
          if (t->name == tc.name) tool = t;
        }
        try {
          if (!tool) throw std::runtime_error("unknown tool " + tc.name);
          Value result;
          if (tool->serialized) {
            std::lock_guard lock(serialized_tools);
            result = tool->call(tc.arguments);
          } else {
            result = tool->call(tc.arguments);
          }
          content = display(result);
        } catch (const std::exception& e) {
          content = std::string("error: ") + e.what();
        }
        calls.push_back({{"name", tc.name}, {"arguments", tc.arguments}, {"result", content}});
        ChatMessage tool_message = ChatMessage::text("tool", content);
        tool_message.tool_call_id = tc.id;
        messages.push_back(tool_message);
        transcript.push_back(std::move(tool_message));
      }
      entry["tool_calls"] = std::move(calls);
      entry["duration_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      turns.push_back(std::move(entry));
    }
    trace.detail["turns"] = turns;
    throw Error(ErrorKind::agent_budget_exceeded,
                fmt::format("agent did not finish within max_turns {}", node.spec.max_turns));
  }

  void run() {
    switch (node.spec.type) {
      case NodeType::llm: run_llm(); break;
      case NodeType::multi_llm: run_multi_llm(); break;
      case NodeType::weighted_sampler: run_sampler(); break;
      case NodeType::lambda: run_lambda(); break;
      case NodeType::agent: run_agent(); break;
      case NodeType::subgraph: throw Error(ErrorKind::node_failure, "subgraph node was not expanded");
    }
  }
};

Value apply_hook(const HookFn& hook, const Value& values, const char* phase) {
  Value out = hook(values);
  if (!out.is_object()) throw Error(ErrorKind::node_failure, fmt::format("{} hook must return a map", phase));
  return out;
}

}  // namespace

void execute_node(const BoundNode& node, RecordState& state, RuntimeContext& context) {
  NodeTrace entry;
  entry.node = node.name;
  state.trace.push_back(std::move(entry));
  const std::size_t slot = state.trace.size() - 1;
  const auto start = std::chrono::steady_clock::now();
  Execution exec{node, state, context, state.trace[slot]};
  auto finish = [&] {
    NodeTrace& t = state.trace[slot];
    t.attempt = std::max(1, exec.attempts);
    t.duration_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };
  try {
    if (node.pre) state.values = apply_hook(*node.pre, state.values, "pre");
    exec.run();
    if (node.post) state.values = apply_hook(*node.post, state.values, "post");
    finish();
  } catch (const Error& e) {
    finish();
    state.trace[slot].error = e.what();
    state.trace[slot].error_kind = std::string(to_string(e.kind()));
    throw NodeError(e.kind(), node.name, state.trace[slot].attempt, fmt::format("node {}: {}", node.name, e.what()));
  } catch (const std::exception& e) {
    finish();
    state.trace[slot].error = e.what();
    state.trace[slot].error_kind = std::string(to_string(ErrorKind::node_failure));
    throw NodeError(ErrorKind::node_failure, node.name, state.trace[slot].attempt,
                    fmt::format("node {}: {}", node.name, e.what()));
  }
}

}  // namespace grasp
