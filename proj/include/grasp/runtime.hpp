#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "grasp/backend.hpp"
#include "grasp/graph.hpp"
#include "grasp/registry.hpp"

namespace grasp {

using RecordId = std::int64_t;

struct NodeTrace {
  std::string node;
  int attempt = 1;  // backend attempts (1 for nodes that call no model)
  double duration_ms = 0;
  std::optional<std::string> error;
  std::string error_kind;
  Value detail = Value::object();  // agent turns, schema retries, per-model errors
};

Value to_value(const NodeTrace& trace);

struct RecordState {
  RecordId record_id = 0;
  Value values = Value::object();
  std::vector<ChatMessage> history;
  std::vector<NodeTrace> trace;

  /// History as `[{role, content}, ...]`.
  Value history_value() const;
};

/// A node execution that failed. Carries the original error kind.
class NodeError : public Error {
 public:
  NodeError(ErrorKind kind, std::string node, int attempts, const std::string& message)
      : Error(kind, message), node_(std::move(node)), attempts_(attempts) {}
  const std::string& node() const { return node_; }
  int attempts() const noexcept { return attempts_; }

 private:
  std::string node_;
  int attempts_;
};

struct RuntimeContext {
  const CompiledGraph& graph;
  ModelPool& models;
  std::uint64_t run_seed = 0;
  std::filesystem::path media_base;  // relative media paths resolve here
};

/// Value a placeholder resolves to: state values, then builtins
/// (`messages`, `record_id`, `__index`), then graph settings.
std::optional<Value> lookup_placeholder(const std::string& name, const RecordState& state,
                                        const GraphSettings& settings);

/// Substitutes `{name}` placeholders; `{{` and `}}` are literal braces.
/// Throws Error{missing_key} naming the key.
std::string substitute(std::string_view text, const RecordState& state, const GraphSettings& settings);

/// Renders a node prompt. Media parts are encoded as data URLs. In multiturn
/// mode the last `chat_history_window_size` history messages follow the
/// leading system messages.
std::vector<ChatMessage> render_prompt(const std::vector<PromptMessage>& templates, const RecordState& state,
                                       const GraphSettings& settings, const std::filesystem::path& media_base = {});

/// Seed for a weighted sampler draw, from (run_seed, record_id, node).
std::uint64_t sampler_seed(std::uint64_t run_seed, RecordId record_id, std::string_view node);

/// One draw with probability weight/sum.
Value sample_weighted(const std::vector<SamplerChoice>& choices, std::uint64_t seed);

/// Executes one node: pre hook, executor, post hook. Appends exactly one
/// trace entry whether it succeeds or not; throws NodeError on failure.
void execute_node(const BoundNode& node, RecordState& state, RuntimeContext& context);

}  // namespace grasp
