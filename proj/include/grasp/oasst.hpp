#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "grasp/common.hpp"
#include "grasp/config.hpp"

namespace grasp {

struct OasstMessage {
  std::string message_id;
  std::optional<std::string> parent_id;
  std::string role;  // prompter | assistant
  std::string text;
  std::string lang;
  Value metadata = Value::object();

  Value to_value(const std::string& tree_id) const;
  bool operator==(const OasstMessage&) const = default;
};

struct OasstTree {
  std::string tree_id;
  std::vector<OasstMessage> messages;  // parents precede children

  const OasstMessage* find(const std::string& id) const;
  const OasstMessage* root() const;
  /// Children of `id` ordered by message_id.
  std::vector<const OasstMessage*> children(const std::string& id) const;
};

struct TreeStats {
  int depth = 0;
  int message_count = 0;
  int branching = 0;  // most children under one message

  bool operator==(const TreeStats&) const = default;
};

/// Tree id shared by every conversation that opens with `root_text`.
std::string tree_id_for(std::string_view root_text);

/// Linear tree from `[{role, content}, ...]`. System turns go to the root's
/// metadata; tool messages and tool-calling assistant turns are dropped.
/// Throws Error{conversion} naming the offending index.
OasstTree to_tree(const Value& conversation, const std::string& lang = "", const Value& metadata = Value::object());

/// Unifies trees with an identical root. Throws Error{merge}.
OasstTree merge_trees(const std::vector<OasstTree>& trees);

TreeStats tree_stats(const OasstTree& tree);

/// Throws Error{conversion} when roles do not alternate or the tree is
/// not a single rooted, acyclic, connected set.
void check_tree(const OasstTree& tree);

struct SftExample {
  std::vector<const OasstMessage*> context;  // root .. parent
  const OasstMessage* target = nullptr;
  Value to_value() const;
};

/// One example per assistant message, depth first, siblings by message_id.
std::vector<SftExample> extract_sft(const OasstTree& tree);

struct PreferencePair {
  std::vector<const OasstMessage*> context;
  const OasstMessage* chosen = nullptr;
  const OasstMessage* rejected = nullptr;
  Value to_value() const;
};

/// Best-vs-each over assistant siblings scored under `quality_key`; ties with
/// the best are skipped. Nodes whose children lack scores are skipped and
/// reported in `warnings`.
std::vector<PreferencePair> extract_dpo(const OasstTree& tree, const std::string& quality_key,
                                        std::vector<std::string>* warnings = nullptr);

struct OasstExportReport {
  std::size_t trees = 0;
  std::size_t messages = 0;
  std::size_t sft = 0;
  std::size_t dpo = 0;
  std::size_t skipped = 0;
};

/// Converts conversations (with per-record metadata) to trees, merges trees
/// sharing a root, and writes oasst.jsonl, sft.jsonl and dpo.jsonl to `dir`.
OasstExportReport export_oasst(const std::vector<std::pair<Value, Value>>& conversations, const OasstConfig& config,
                               const std::filesystem::path& dir);

}  // namespace grasp
