#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "grasp/common.hpp"
#include "grasp/config.hpp"
#include "grasp/registry.hpp"

namespace grasp {

/// Keys every node may read without a producer.
inline const std::set<std::string>& builtin_state_keys() {
  static const std::set<std::string> keys = {"messages", "__index", "record_id"};
  return keys;
}

/// Looks up reusable graphs by name. Returns nullopt when the name is unknown;
/// parse problems are appended to `diagnostics`.
using GraphLibrary = std::function<std::optional<GraphConfig>(const std::string& name,
                                                              std::vector<Diagnostic>& diagnostics)>;

/// Library backed by `<dir>/<name>.yaml` (dots in `name` may also map to
/// subdirectories: `recipes.evolve` -> `recipes/evolve.yaml`).
GraphLibrary directory_library(const std::filesystem::path& dir);

/// Library over in-memory graphs, for tests and embedding.
GraphLibrary map_library(std::map<std::string, GraphConfig> graphs);

inline constexpr int kMaxSubgraphDepth = 8;

struct BoundNode {
  std::string name;
  NodeSpec spec;
  std::vector<std::string> output_keys;   // effective keys the node may write
  std::vector<FieldDef> structured_fields;  // resolved structured-output schema
  const LambdaFn* lambda = nullptr;
  const HookFn* pre = nullptr;
  const HookFn* post = nullptr;
  std::vector<const ToolSpec*> tools;
};

/// Outgoing edge of a node (or START).
struct Transition {
  std::string to;  // simple edge target
  std::string condition;
  const RouterFn* router = nullptr;
  std::vector<std::pair<std::string, std::string>> path_map;

  bool conditional() const { return router != nullptr; }
  /// path_map target for `label`, or nullptr.
  const std::string* target(const std::string& label) const;
};

struct CompiledGraph {
  GraphSettings settings;
  std::vector<BoundNode> nodes;  // declaration order after expansion
  std::map<std::string, std::size_t> index;
  std::map<std::string, Transition> transitions;  // keyed by source node, including START
  int loop_budget = 0;

  const BoundNode* node(const std::string& name) const;
  const Transition& start() const { return transitions.at(std::string(kStart)); }
  /// Successor names reachable in one step (END included when targeted).
  std::vector<std::string> successors(const std::string& name) const;
};

struct CompileOptions {
  /// Columns the source provides. nullopt: unknown, so placeholders that no
  /// node produces are reported as warnings rather than errors.
  std::optional<std::set<std::string>> source_columns;
  /// Model names the backends know. nullopt skips the check.
  std::optional<std::set<std::string>> models;
  GraphLibrary library;
};

struct CompileResult {
  std::optional<CompiledGraph> graph;  // set iff diagnostics hold no error
  std::vector<Diagnostic> diagnostics;
};

CompileResult compile(const GraphConfig& graph, const Registry& registry, const CompileOptions& options = {});

/// Inlines subgraph node `node_name` (recursively) and returns the new parent.
/// Child nodes are prefixed `<node_name>/`; the child's START/END are spliced
/// onto the parent edges touching the node. Problems go to `diagnostics`.
GraphConfig expand_subgraph(const GraphConfig& parent, const std::string& node_name, const GraphLibrary& library,
                            std::vector<Diagnostic>& diagnostics, int depth = 0);

/// Expands every subgraph node.
GraphConfig expand_all(const GraphConfig& graph, const GraphLibrary& library, std::vector<Diagnostic>& diagnostics,
                       int depth = 0);

/// Errors for cycles made only of simple edges; notes for router cycles.
std::vector<Diagnostic> validate_cycles(const CompiledGraph& graph);

/// Default output keys for a node that declares none.
std::vector<std::string> default_output_keys(const std::string& node_name, const NodeSpec& spec);

}  // namespace grasp
