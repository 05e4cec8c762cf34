#include "grasp/oasst.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "grasp/quality.hpp"

namespace grasp {

Value OasstMessage::to_value(const std::string& tree_id) const {
  return {{"message_id", message_id},
          {"parent_id", parent_id ? Value(*parent_id) : Value()},
          {"tree_id", tree_id},
          {"role", role},
          {"text", text},
          {"lang", lang.empty() ? Value() : Value(lang)},
          {"metadata", metadata}};
}

const OasstMessage* OasstTree::find(const std::string& id) const {
  for (const auto& m : messages) {
    if (m.message_id == id) return &m;
  }
  return nullptr;
}

const OasstMessage* OasstTree::root() const {
  for (const auto& m : messages) {
    if (!m.parent_id) return &m;
  }
  return nullptr;
}

std::vector<const OasstMessage*> OasstTree::children(const std::string& id) const {
  std::vector<const OasstMessage*> out;
  for (const auto& m : messages) {
    if (m.parent_id && *m.parent_id == id) out.push_back(&m);
  }
  std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->message_id < b->message_id; });
  return out;
}

std::string tree_id_for(std::string_view root_text) {
  return sha256_hex(fmt::format("tree\n{}", root_text)).substr(0, 24);
}

namespace {

std::string message_id_for(const std::string& tree_id, const std::string& parent, const std::string& role,
                           const std::string& text) {
  return sha256_hex(fmt::format("{}\n{}\n{}\n{}", tree_id, parent, role, text)).substr(0, 24);
}

}  // namespace

OasstTree to_tree(const Value& conversation, const std::string& lang, const Value& metadata) {
  if (!conversation.is_array()) throw Error(ErrorKind::conversion, "conversation must be a list of messages");
  const auto turns = conversation_turns(conversation);
  if (turns.size() != conversation.size()) throw Error(ErrorKind::conversion, "conversation entries must be objects");
  Value system = Value::array();
  std::vector<std::pair<std::string, std::string>> chain;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const auto& [role, text] = turns[i];
    std::string mapped;
    if (role == "system") {
      system.push_back(text);
      continue;
    }
    // Tool traffic is an intermediate agent step, not a turn.
    const Value& raw = conversation[i];
    if (role == "tool" || (role == "assistant" && raw.contains("tool_calls") && !raw.at("tool_calls").empty())) {
      continue;
    }
    if (role == "user" || role == "prompter" || role == "human") {
      mapped = "prompter";
    } else if (role == "assistant" || role == "gpt") {
      mapped = "assistant";
    } else {
      throw Error(ErrorKind::conversion, fmt::format("unsupported role '{}' at index {}", role, i));
    }
    const std::string expected = chain.size() % 2 == 0 ? "prompter" : "assistant";
    if (mapped != expected) {
      throw Error(ErrorKind::conversion,
                  fmt::format("roles must alternate starting with a prompter; index {} is {}", i, role));
    }
    chain.emplace_back(mapped, text);
  }
  if (chain.empty()) throw Error(ErrorKind::conversion, "conversation has no prompter turn");

  OasstTree tree;
  tree.tree_id = tree_id_for(chain.front().second);
  std::string parent;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    OasstMessage m;
    m.message_id = message_id_for(tree.tree_id, parent, chain[i].first, chain[i].second);
    if (i > 0) m.parent_id = parent;
    m.role = chain[i].first;
    m.text = chain[i].second;
    m.lang = lang;
    if (i == 0 && !system.empty()) m.metadata["system"] = system;
    if (i + 1 == chain.size() && metadata.is_object()) {
      for (const auto& [k, v] : metadata.items()) m.metadata[k] = v;
    }
    parent = m.message_id;
    tree.messages.push_back(std::move(m));
  }
  return tree;
}

OasstTree merge_trees(const std::vector<OasstTree>& trees) {
  if (trees.empty()) throw Error(ErrorKind::merge, "no trees to merge");
  OasstTree out;
  out.tree_id = trees.front().tree_id;
  const OasstMessage* first_root = trees.front().root();
  std::map<std::string, std::size_t> positions;
  for (const auto& tree : trees) {
    const OasstMessage* root = tree.root();
    if (!root || !first_root || root->text != first_root->text || root->role != first_root->role) {
      throw Error(ErrorKind::merge, "trees have different roots");
    }
    for (const auto& m : tree.messages) {
      const auto it = positions.find(m.message_id);
      if (it == positions.end()) {
        positions[m.message_id] = out.messages.size();
        out.messages.push_back(m);
        continue;
      }
      Value& meta = out.messages[it->second].metadata;
      for (const auto& [k, v] : m.metadata.items()) {
        if (!meta.contains(k)) meta[k] = v;
      }
    }
  }
  return out;
}

void check_tree(const OasstTree& tree) {
  int roots = 0;
  std::set<std::string> ids;
  for (const auto& m : tree.messages) {
    if (!ids.insert(m.message_id).second) throw Error(ErrorKind::conversion, "duplicate message id " + m.message_id);
    if (!m.parent_id) {
      ++roots;
      if (m.role != "prompter") throw Error(ErrorKind::conversion, "root must be a prompter message");
    }
  }
  if (roots != 1) throw Error(ErrorKind::conversion, fmt::format("tree has {} roots", roots));
  std::size_t seen = 0;
  std::function<void(const OasstMessage&, std::size_t)> walk = [&](const OasstMessage& m, std::size_t depth) {
    if (depth > tree.messages.size()) throw Error(ErrorKind::conversion, "tree contains a cycle");
    ++seen;
    for (const OasstMessage* c : tree.children(m.message_id)) {
      if (c->role == m.role) throw Error(ErrorKind::conversion, "roles do not alternate at " + c->message_id);
      walk(*c, depth + 1);
    }
  };
  walk(*tree.root(), 1);
  if (seen != tree.messages.size()) throw Error(ErrorKind::conversion, "tree has unreachable messages");
}

TreeStats tree_stats(const OasstTree& tree) {
  TreeStats stats;
  stats.message_count = static_cast<int>(tree.messages.size());
  const OasstMessage* root = tree.root();
  if (!root) return stats;
  std::function<void(const OasstMessage&, int)> walk = [&](const OasstMessage& m, int depth) {
    stats.depth = std::max(stats.depth, depth);
    const auto kids = tree.children(m.message_id);
    stats.branching = std::max(stats.branching, static_cast<int>(kids.size()));
    for (const OasstMessage* c : kids) walk(*c, depth + 1);
  };
  walk(*root, 1);
  return stats;
}

namespace {

Value context_value(const std::vector<const OasstMessage*>& context) {
  Value out = Value::array();
  for (const OasstMessage* m : context) out.push_back({{"role", m->role}, {"text", m->text}});
  return out;
}

template <typename Fn>
void depth_first(const OasstTree& tree, Fn&& visit) {
  std::vector<const OasstMessage*> path;
  std::function<void(const OasstMessage&)> walk = [&](const OasstMessage& m) {
    visit(m, path);
    path.push_back(&m);
    for (const OasstMessage* c : tree.children(m.message_id)) walk(*c);
    path.pop_back();
  };
  if (const OasstMessage* root = tree.root()) walk(*root);
}

std::optional<double> score_of(const OasstMessage& m, const std::string& key) {
  if (m.metadata.contains(key) && m.metadata.at(key).is_number()) return m.metadata.at(key).get<double>();
  return std::nullopt;
}

}  // namespace

Value SftExample::to_value() const {
  return {{"context", context_value(context)}, {"target", target->text}, {"message_id", target->message_id}};
}

Value PreferencePair::to_value() const {
  return {{"context", context_value(context)},
          {"chosen", chosen->text},
          {"rejected", rejected->text},
          {"chosen_id", chosen->message_id},
          {"rejected_id", rejected->message_id}};
}

std::vector<SftExample> extract_sft(const OasstTree& tree) {
  std::vector<SftExample> out;
  depth_first(tree, [&](const OasstMessage& m, const std::vector<const OasstMessage*>& path) {
    if (m.role == "assistant") out.push_back({path, &m});
  });
  return out;
}

std::vector<PreferencePair> extract_dpo(const OasstTree& tree, const std::string& quality_key,
                                        std::vector<std::string>* warnings) {
  std::vector<PreferencePair> out;
  depth_first(tree, [&](const OasstMessage& m, const std::vector<const OasstMessage*>& path) {
    if (m.role != "prompter") return;
    std::vector<const OasstMessage*> kids;
    for (const OasstMessage* c : tree.children(m.message_id)) {
      if (c->role == "assistant") kids.push_back(c);
    }
    if (kids.size() < 2) return;
    for (const OasstMessage* c : kids) {
      if (!score_of(*c, quality_key)) {
        const std::string w = fmt::format("message {}: assistant replies lack '{}' scores; skipped", m.message_id,
                                          quality_key);
        spdlog::warn("{}", w);
        if (warnings) warnings->push_back(w);
        return;
      }
    }
    const OasstMessage* best = kids.front();
    for (const OasstMessage* c : kids) {
      if (*score_of(*c, quality_key) > *score_of(*best, quality_key)) best = c;
    }
    std::vector<const OasstMessage*> context = path;
    context.push_back(&m);
    for (const OasstMessage* c : kids) {
      if (c == best) continue;
      if (*score_of(*c, quality_key) == *score_of(*best, quality_key)) {
        const std::string w = fmt::format("message {}: tied scores between {} and {}; pair skipped", m.message_id,
                                          best->message_id, c->message_id);
        spdlog::warn("{}", w);
        if (warnings) warnings->push_back(w);
        continue;
      }
      out.push_back({context, best, c});
    }
  });
  return out;
}

OasstExportReport export_oasst(const std::vector<std::pair<Value, Value>>& conversations, const OasstConfig& config,
                               const std::filesystem::path& dir) {
  OasstExportReport report;
  std::map<std::string, std::vector<OasstTree>> groups;
  for (const auto& [conversation, metadata] : conversations) {
    try {
      OasstTree tree = to_tree(conversation, config.lang, metadata);
      groups[tree.tree_id].push_back(std::move(tree));
    } catch (const Error& e) {
      ++report.skipped;
      spdlog::warn("oasst: conversation skipped: {}", e.what());
    }
  }
  std::filesystem::create_directories(dir);
  std::ofstream messages(dir / "oasst.jsonl", std::ios::trunc);
  std::ofstream sft(dir / "sft.jsonl", std::ios::trunc);
  std::ofstream dpo(dir / "dpo.jsonl", std::ios::trunc);
  for (const auto& [tree_id, trees] : groups) {
    const OasstTree tree = merge_trees(trees);
    check_tree(tree);
    ++report.trees;
    for (const auto& m : tree.messages) {
      messages << m.to_value(tree.tree_id).dump() << '\n';
      ++report.messages;
    }
    for (const auto& ex : extract_sft(tree)) {
      Value line = ex.to_value();
      line["tree_id"] = tree.tree_id;
      sft << line.dump() << '\n';
      ++report.sft;
    }
    for (const auto& pair : extract_dpo(tree, config.quality_key)) {
      Value line = pair.to_value();
      line["tree_id"] = tree.tree_id;
      dpo << line.dump() << '\n';
      ++report.dpo;
    }
  }
  if (!messages || !sft || !dpo) throw Error(ErrorKind::sink, "failed writing OASST exports to " + dir.string());
  return report;
}

}  // namespace grasp
