#include "grasp/graph.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

#include "grasp/type_expr.hpp"

namespace fs = std::filesystem;

namespace grasp {

namespace {

const std::string kStartName(kStart);
const std::string kEndName(kEnd);

std::string node_path(const std::string& name) { return "graph_config.nodes." + name; }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

}  // namespace

GraphLibrary directory_library(const fs::path& dir) {
  return [dir](const std::string& name, std::vector<Diagnostic>& diagnostics) -> std::optional<GraphConfig> {
    std::string dotted = name;
    std::replace(dotted.begin(), dotted.end(), '.', '/');
    for (const std::string& stem : {name, dotted}) {
      for (const char* ext : {".yaml", ".yml"}) {
        const fs::path path = dir / (stem + ext);
        if (!fs::is_regular_file(path)) continue;
        GraphParseResult parsed = parse_graph_file(read_file(path));
        for (auto d : parsed.diagnostics) {
          d.path = path.filename().string() + (d.path.empty() ? "" : ":" + d.path);
          diagnostics.push_back(std::move(d));
        }
        return parsed.graph;
      }
    }
    return std::nullopt;
  };
}

GraphLibrary map_library(std::map<std::string, GraphConfig> graphs) {
  return [graphs = std::move(graphs)](const std::string& name, std::vector<Diagnostic>&) -> std::optional<GraphConfig> {
    const auto it = graphs.find(name);
    if (it == graphs.end()) return std::nullopt;
    return it->second;
  };
}

const std::string* Transition::target(const std::string& label) const {
  for (const auto& [l, t] : path_map) {
    if (l == label) return &t;
  }
  return nullptr;
}

const BoundNode* CompiledGraph::node(const std::string& name) const {
  const auto it = index.find(name);
  return it == index.end() ? nullptr : &nodes[it->second];
}

std::vector<std::string> CompiledGraph::successors(const std::string& name) const {
  std::vector<std::string> out;
  const auto it = transitions.find(name);
  if (it == transitions.end()) return out;
  if (!it->second.conditional()) {
    out.push_back(it->second.to);
  } else {
    for (const auto& [label, target] : it->second.path_map) {
      if (std::find(out.begin(), out.end(), target) == out.end()) out.push_back(target);
    }
  }
  return out;
}

std::vector<std::string> default_output_keys(const std::string& node_name, const NodeSpec& spec) {
  if (!spec.output_keys.empty()) return spec.output_keys;
  if (spec.type == NodeType::lambda || spec.type == NodeType::subgraph) return {};
  return {node_name};
}

// ---------------------------------------------------------------------------
// subgraph expansion
// ---------------------------------------------------------------------------

GraphConfig expand_subgraph(const GraphConfig& parent, const std::string& node_name, const GraphLibrary& library,
                            std::vector<Diagnostic>& diagnostics, int depth) {
  const NodeSpec* spec = parent.find_node(node_name);
  const std::string path = node_path(node_name);
  if (!spec || spec->type != NodeType::subgraph) {
    diagnostics.push_back(make_error(path, "not a subgraph node"));
    return parent;
  }
  if (depth >= kMaxSubgraphDepth) {
    diagnostics.push_back(make_error(
        path, fmt::format("RecursionLimit: subgraph '{}' nested deeper than {}", spec->subgraph, kMaxSubgraphDepth)));
    return parent;
  }
  std::optional<GraphConfig> loaded;
  if (library) loaded = library(spec->subgraph, diagnostics);
  if (!loaded) {
    diagnostics.push_back(make_error(path + ".subgraph", "unknown subgraph " + spec->subgraph));
    return parent;
  }
  const std::size_t errors_before =
      std::count_if(diagnostics.begin(), diagnostics.end(), [](const Diagnostic& d) { return d.severity == Severity::error; });
  GraphConfig child = expand_all(*loaded, library, diagnostics, depth + 1);
  const std::size_t errors_after =
      std::count_if(diagnostics.begin(), diagnostics.end(), [](const Diagnostic& d) { return d.severity == Severity::error; });
  if (errors_after > errors_before) return parent;

  const std::string prefix = node_name + "/";
  auto rename = [&](const std::string& n) { return n == kStartName || n == kEndName ? n : prefix + n; };

  std::vector<const EdgeSpec*> entries;
  for (const auto& e : child.edges) {
    if (e.from == kStartName) entries.push_back(&e);
  }
  if (entries.size() != 1 || entries.front()->conditional() || entries.front()->to == kEndName) {
    diagnostics.push_back(make_error(
        path, fmt::format("subgraph '{}' must have exactly one simple edge from START to a node", spec->subgraph)));
    return parent;
  }
  const std::string entry = rename(entries.front()->to);

  std::vector<const EdgeSpec*> exits;
  for (const auto& e : parent.edges) {
    if (e.from == node_name) exits.push_back(&e);
  }

  GraphConfig out;
  out.settings = parent.settings;
  for (const auto& [name, node] : parent.nodes) {
    if (name != node_name) {
      out.nodes.emplace_back(name, node);
      continue;
    }
    for (const auto& [child_name, child_node] : child.nodes) out.nodes.emplace_back(rename(child_name), child_node);
  }

  for (const auto& e : parent.edges) {
    if (e.from == node_name) continue;
    EdgeSpec copy = e;
    if (copy.to == node_name) copy.to = entry;
    for (auto& [label, target] : copy.path_map) {
      if (target == node_name) target = entry;
    }
    out.edges.push_back(std::move(copy));
  }

  for (const auto& e : child.edges) {
    if (e.from == kStartName) continue;
    if (!e.conditional()) {
      if (e.to != kEndName) {
        out.edges.push_back(EdgeSpec{rename(e.from), rename(e.to), {}, {}});
        continue;
      }
      for (const EdgeSpec* exit : exits) {
        EdgeSpec spliced = *exit;
        spliced.from = rename(e.from);
        if (!spliced.conditional() && spliced.to == node_name) spliced.to = entry;
        for (auto& [label, target] : spliced.path_map) {
          if (target == node_name) target = entry;
        }
        out.edges.push_back(std::move(spliced));
      }
      continue;
    }
    EdgeSpec routed{rename(e.from), {}, e.condition, {}};
    for (const auto& [label, target] : e.path_map) {
      std::string resolved = rename(target);
      if (target == kEndName) {
        if (exits.size() != 1 || exits.front()->conditional()) {
          diagnostics.push_back(make_error(
              path, fmt::format("subgraph '{}' exits through router label '{}', which needs a single simple edge "
                                "leaving '{}'",
                                spec->subgraph, label, node_name)));
          return parent;
        }
        resolved = exits.front()->to == node_name ? entry : exits.front()->to;
      }
      routed.path_map.emplace_back(label, resolved);
    }
    out.edges.push_back(std::move(routed));
  }
  return out;
}

GraphConfig expand_all(const GraphConfig& graph, const GraphLibrary& library, std::vector<Diagnostic>& diagnostics,
                       int depth) {
  GraphConfig current = graph;
  std::set<std::string> failed;
  while (true) {
    std::string next;
    for (const auto& [name, node] : current.nodes) {
      if (node.type == NodeType::subgraph && !failed.count(name)) {
        next = name;
        break;
      }
    }
    if (next.empty()) return current;
    const std::size_t before = diagnostics.size();
    GraphConfig expanded = expand_subgraph(current, next, library, diagnostics, depth);
    if (has_errors(std::span<const Diagnostic>(diagnostics.data() + before, diagnostics.size() - before))) {
      failed.insert(next);
    } else {
      current = std::move(expanded);
    }
  }
}

// ---------------------------------------------------------------------------
// compile
// ---------------------------------------------------------------------------

namespace {

std::set<std::string> reachable_from(const CompiledGraph& g, const std::string& from) {
  std::set<std::string> seen;
  std::vector<std::string> stack = g.successors(from);
  while (!stack.empty()) {
    std::string n = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    for (auto& s : g.successors(n)) stack.push_back(std::move(s));
  }
  return seen;
}

std::vector<std::string> prompt_placeholders(const NodeSpec& spec) {
  std::vector<std::string> names;
  for (const auto& message : spec.prompt) {
    for (const auto& part : message.parts) {
      for (auto& name : template_placeholders(part.payload)) {
        if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(std::move(name));
      }
    }
  }
  return names;
}

void bind_node(BoundNode& bound, const Registry& registry, const CompileOptions& options,
               std::vector<Diagnostic>& diagnostics) {
  const NodeSpec& spec = bound.spec;
  const std::string path = node_path(bound.name);
  auto missing = [&](const std::string& field, const std::string& what, const std::string& name) {
    diagnostics.push_back(make_error(path + "." + field, fmt::format("unresolved {} {}", what, name)));
  };

  if (spec.type == NodeType::subgraph) {
    diagnostics.push_back(make_error(path, "subgraph node was not expanded"));
    return;
  }
  if (!spec.pre_process.empty() && !(bound.pre = registry.hook(spec.pre_process))) {
    missing("pre_process", "hook", spec.pre_process);
  }
  if (!spec.post_process.empty() && !(bound.post = registry.hook(spec.post_process))) {
    missing("post_process", "hook", spec.post_process);
  }
  if (spec.type == NodeType::lambda) {
    if (!(bound.lambda = registry.lambda(spec.lambda))) missing("lambda", "lambda", spec.lambda);
    if (spec.output_keys.empty()) {
      diagnostics.push_back(make_error(path + ".output_keys", "lambda node must declare output_keys"));
    }
  }
  std::set<std::string> tool_names;
  for (std::size_t i = 0; i < spec.tools.size(); ++i) {
    const ToolSpec* tool = registry.tool(spec.tools[i]);
    if (!tool) {
      missing(fmt::format("tools[{}]", i), "tool", spec.tools[i]);
      continue;
    }
    if (!tool_names.insert(tool->name).second) {
      diagnostics.push_back(make_error(fmt::format("{}.tools[{}]", path, i), "duplicate tool name " + tool->name));
    }
    bound.tools.push_back(tool);
  }
  if (options.models) {
    std::vector<const ModelSpec*> used;
    if (spec.model) used.push_back(&*spec.model);
    for (const auto& m : spec.models) used.push_back(&m);
    for (const ModelSpec* m : used) {
      if (!options.models->count(m->name)) {
        diagnostics.push_back(make_error(path + ".model", "unknown model " + m->name));
      }
    }
  }

  if (spec.structured_output && spec.structured_output->enabled) {
    const auto& so = *spec.structured_output;
    if (!so.schema_class.empty()) {
      if (const auto* fields = registry.schema_class(so.schema_class)) {
        bound.structured_fields = *fields;
      } else {
        missing("structured_output.schema", "schema class", so.schema_class);
      }
    } else {
      bound.structured_fields = so.fields;
    }
    for (const auto& f : bound.structured_fields) {
      if (!parse_type_expr(f.type)) {
        diagnostics.push_back(
            make_error(path + ".structured_output.fields." + f.name, "unknown type expression " + f.type));
      }
    }
    if (bound.structured_fields.empty()) {
      diagnostics.push_back(make_error(path + ".structured_output", "structured output declares no fields"));
    }
  }

  if (!spec.output_keys.empty()) {
    bound.output_keys = spec.output_keys;
  } else if (!bound.structured_fields.empty()) {
    for (const auto& f : bound.structured_fields) bound.output_keys.push_back(f.name);
  } else {
    bound.output_keys = default_output_keys(bound.name, spec);
  }
  if (spec.type == NodeType::agent && !bound.output_keys.empty()) {
    bound.output_keys.push_back(bound.output_keys.front() + "__transcript");
  }
}

}  // namespace

CompileResult compile(const GraphConfig& graph, const Registry& registry, const CompileOptions& options) {
  CompileResult result;
  auto& diags = result.diagnostics;
  GraphConfig expanded = expand_all(graph, options.library, diags);
  if (has_errors(diags)) return result;

  CompiledGraph g;
  g.settings = expanded.settings;
  for (const auto& [name, spec] : expanded.nodes) {
    if (g.index.count(name)) {
      diags.push_back(make_error(node_path(name), "duplicate node name " + name));
      continue;
    }
    g.index[name] = g.nodes.size();
    BoundNode bound;
    bound.name = name;
    bound.spec = spec;
    bind_node(bound, registry, options, diags);
    g.nodes.push_back(std::move(bound));
  }

  auto known_target = [&](const std::string& n) { return n == kEndName || g.index.count(n) > 0; };
  std::map<std::string, int> out_degree;
  for (std::size_t i = 0; i < expanded.edges.size(); ++i) {
    const EdgeSpec& e = expanded.edges[i];
    const std::string path = fmt::format("graph_config.edges[{}]", i);
    bool ok = true;
    if (e.from == kEndName) {
      diags.push_back(make_error(path + ".from", "edge may not leave END"));
      ok = false;
    } else if (e.from != kStartName && !g.index.count(e.from)) {
      diags.push_back(make_error(path + ".from", "unknown node " + e.from));
      ok = false;
    }
    Transition t;
    if (e.conditional()) {
      t.condition = e.condition;
      t.router = registry.router(e.condition);
      if (!t.router) {
        diags.push_back(make_error(path + ".condition", "unresolved router " + e.condition));
        ok = false;
      }
      if (e.path_map.empty()) {
        diags.push_back(make_error(path + ".path_map", "conditional edge requires a non-empty path_map"));
        ok = false;
      }
      for (const auto& [label, target] : e.path_map) {
        if (!known_target(target)) {
          diags.push_back(make_error(path + ".path_map." + label, "unknown node " + target));
          ok = false;
        }
      }
      t.path_map = e.path_map;
    } else {
      if (!known_target(e.to)) {
        diags.push_back(make_error(path + ".to", "unknown node " + e.to));
        ok = false;
      }
      t.to = e.to;
    }
    if (++out_degree[e.from] > 1) {
      diags.push_back(make_error(path, fmt::format("{} has more than one outgoing edge; branch with a conditional edge",
                                                   e.from)));
      ok = false;
    }
    if (ok) g.transitions.emplace(e.from, std::move(t));
  }
  if (!out_degree.count(kStartName)) diags.push_back(make_error("graph_config.edges", "no edge leaves START"));
  if (has_errors(diags)) return result;

  const std::set<std::string> from_start = reachable_from(g, kStartName);
  std::map<std::string, std::set<std::string>> reach;
  for (const auto& node : g.nodes) {
    reach[node.name] = reachable_from(g, node.name);
    if (!from_start.count(node.name)) {
      diags.push_back(make_error(node_path(node.name), "unreachable node " + node.name));
    }
    if (!reach[node.name].count(kEndName)) {
      diags.push_back(make_error(node_path(node.name), "END is unreachable from " + node.name));
    }
  }

  std::map<std::string, std::vector<std::string>> producers;
  for (const auto& node : g.nodes) {
    for (const auto& key : node.output_keys) {
      auto& list = producers[key];
      if (!list.empty()) {
        diags.push_back(make_error(node_path(node.name) + ".output_keys",
                                   fmt::format("output key {} is also produced by {}", key, list.front())));
      }
      list.push_back(node.name);
    }
  }

  std::set<std::string> settings_keys = {"chat_conversation", "chat_history_window_size", "loop_budget"};
  for (const auto& [key, value] : g.settings.extra.items()) settings_keys.insert(key);
  for (const auto& node : g.nodes) {
    for (const auto& name : prompt_placeholders(node.spec)) {
      if (builtin_state_keys().count(name) || settings_keys.count(name)) continue;
      if (options.source_columns && options.source_columns->count(name)) continue;
      bool produced = false;
      if (const auto it = producers.find(name); it != producers.end()) {
        for (const auto& p : it->second) {
          if (from_start.count(p) && reach[p].count(node.name)) produced = true;
        }
      }
      if (produced) continue;
      if (options.source_columns) {
        diags.push_back(make_error(node_path(node.name) + ".prompt",
                                   fmt::format("unresolvable placeholder {{{}}}: no source column, setting or "
                                               "upstream output key",
                                               name)));
      } else {
        diags.push_back(make_warning(node_path(node.name) + ".prompt",
                                     fmt::format("placeholder {{{}}} is not produced upstream; expecting a source "
                                                 "column",
                                                 name)));
      }
    }
  }

  g.loop_budget = g.settings.loop_budget.value_or(4 * static_cast<int>(g.nodes.size()));
  if (g.loop_budget < 1) diags.push_back(make_error("graph_config.settings.loop_budget", "loop_budget must be >= 1"));

  for (auto& d : validate_cycles(g)) diags.push_back(std::move(d));
  if (!has_errors(diags)) result.graph = std::move(g);
  return result;
}

// ---------------------------------------------------------------------------
// cycles
// ---------------------------------------------------------------------------

std::vector<Diagnostic> validate_cycles(const CompiledGraph& g) {
  std::vector<Diagnostic> diags;

  // Simple edges give each node at most one successor, so walking them finds
  // every unconditional cycle.
  std::set<std::string> reported;
  for (const auto& node : g.nodes) {
    std::vector<std::string> walk;
    std::string current = node.name;
    while (true) {
      const auto it = g.transitions.find(current);
      if (it == g.transitions.end() || it->second.conditional() || it->second.to == kEndName) break;
      walk.push_back(current);
      current = it->second.to;
      const auto seen = std::find(walk.begin(), walk.end(), current);
      if (seen != walk.end()) {
        std::vector<std::string> cycle(seen, walk.end());
        std::rotate(cycle.begin(), std::min_element(cycle.begin(), cycle.end()), cycle.end());
        std::string text;
        for (const auto& n : cycle) text += n + " -> ";
        text += cycle.front();
        if (reported.insert(text).second) {
          diags.push_back(make_error("graph_config.edges", "unconditional cycle " + text));
        }
        break;
      }
    }
  }

  // Tarjan SCCs over all edges; router cycles are allowed but noted.
  std::map<std::string, int> index, low;
  std::set<std::string> on_stack;
  std::vector<std::string> stack;
  int counter = 0;
  std::vector<std::vector<std::string>> components;
  std::function<void(const std::string&)> visit = [&](const std::string& v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack.insert(v);
    for (const auto& w : g.successors(v)) {
      if (w == kEndName) continue;
      if (!index.count(w)) {
        visit(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack.count(w)) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      std::vector<std::string> component;
      std::string w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack.erase(w);
        component.push_back(w);
      } while (w != v);
      components.push_back(std::move(component));
    }
  };
  for (const auto& node : g.nodes) {
    if (!index.count(node.name)) visit(node.name);
  }
  for (auto& component : components) {
    const auto& only = component.front();
    const auto successors = g.successors(only);
    const bool cyclic = component.size() > 1 || std::find(successors.begin(), successors.end(), only) != successors.end();
    if (!cyclic) continue;
    bool routed = false;
    for (const auto& n : component) {
      const auto it = g.transitions.find(n);
      if (it != g.transitions.end() && it->second.conditional()) routed = true;
    }
    if (!routed) continue;
    std::sort(component.begin(), component.end());
    std::string members;
    for (const auto& n : component) members += (members.empty() ? "" : ", ") + n;
    diags.push_back(make_note("graph_config.edges",
                              fmt::format("cycle through {} is routed; bounded by loop_budget {}", members,
                                          g.loop_budget)));
  }
  return diags;
}

}  // namespace grasp
