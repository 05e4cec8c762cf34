#include <gtest/gtest.h>

#include "grasp/graph.hpp"
#include "helpers.hpp"

namespace grasp {
namespace {

GraphConfig graph_from(const std::string& yaml) {
  const GraphParseResult r = parse_graph_file(yaml);
  EXPECT_TRUE(r.graph.has_value()) << yaml;
  for (const auto& d : r.diagnostics) EXPECT_NE(d.severity, Severity::error) << render(d);
  return r.graph.value_or(GraphConfig{});
}

CompileResult compile_yaml(const std::string& yaml, CompileOptions options = {}) {
  return compile(graph_from(yaml), testing::builtins(), options);
}

bool has_message(const std::vector<Diagnostic>& diagnostics, Severity severity, const std::string& needle) {
  for (const auto& d : diagnostics) {
    if (d.severity == severity && d.message.find(needle) != std::string::npos) return true;
  }
  return false;
}

std::string dump(const std::vector<Diagnostic>& diagnostics) {
  std::string out;
  for (const auto& d : diagnostics) out += render(d) + "\n";
  return out;
}

const char* kLinear = R"(
nodes:
  a:
    node_type: lambda
    lambda: grasp.lambdas.identity
    output_keys: x
  b:
    node_type: lambda
    lambda: grasp.lambdas.identity
    output_keys: y
edges:
  - {from: START, to: a}
  - {from: a, to: b}
  - {from: b, to: END}
)";

TEST(Graph, CompilesEveryFixtureTask) {
  const Registry registry = Registry::with_builtins();
  for (const std::string name : {"b1_dataless", "b2_conditional", "b3_image", "b4_audio", "research_agent",
                                 "structured_answer", "audio_node", "evolve_instruct"}) {
    const cli::LoadedTask task = testing::load_fixture_task(name, registry);
    EXPECT_TRUE(task.ok()) << name << "\n" << dump(task.diagnostics);
  }
}

TEST(Graph, LinearGraph) {
  const CompileResult r = compile_yaml(kLinear);
  ASSERT_TRUE(r.graph) << dump(r.diagnostics);
  EXPECT_EQ(r.graph->start().to, "a");
  EXPECT_EQ(r.graph->successors("a"), std::vector<std::string>{"b"});
  EXPECT_EQ(r.graph->loop_budget, 8);
  EXPECT_TRUE(r.diagnostics.empty()) << dump(r.diagnostics);
}

TEST(Graph, ExplicitLoopBudget) {
  const CompileResult r = compile_yaml(std::string("loop_budget: 3\n") + kLinear);
  ASSERT_TRUE(r.graph);
  EXPECT_EQ(r.graph->loop_budget, 3);
}

TEST(Graph, UnknownEdgeTarget) {
  GraphConfig graph = graph_from(kLinear);
  graph.edges[1].to = "c";
  const CompileResult r = compile(graph, testing::builtins());
  EXPECT_FALSE(r.graph);
  EXPECT_TRUE(has_message(r.diagnostics, Severity::error, "unknown node c")) << dump(r.diagnostics);
}

TEST(Graph, DanglingEdgeFixture) {
  const ParseResult parsed =
      parse_pipeline_config(testing::read_file(testing::fixture_dir() / "mutations" / "dangling_edge.yaml"));
  EXPECT_FALSE(parsed.config);
  EXPECT_TRUE(has_message(parsed.diagnostics, Severity::error, "unknown node validator")) << dump(parsed.diagnostics);
}

TEST(Graph, UnreachableNodeAndDeadEnd) {
  const CompileResult r = compile_yaml(R"(
nodes:
  a: {node_type: lambda, lambda: grasp.lambdas.identity, output_keys: x}
  orphan: {node_type: lambda, lambda: grasp.lambdas.identity, output_keys: y}
edges:
  - {from: START, to: a}
  - {from: a, to: END}
)");
  EXPECT_TRUE(has_message(r.diagnostics, Severity::error, "unreachable node orphan")) << dump(r.diagnostics);
}

TEST(Graph, UnresolvedCallables) {
  const CompileResult r = compile_yaml(R"(
nodes:
  a: {node_type: lambda, lambda: no.such.lambda, output_keys: x}
edges:
  - {from: START, to: a}
  - from: a
    condition: no.such.router
    path_map: {done: END}
)");
  EXPECT_TRUE(has_message(r.diagnostics, Severity::error, "no.such.lambda")) << dump(r.diagnostics);
  EXPECT_TRUE(has_message(r.diagnostics, Severity::error, "no.such.router")) << dump(r.diagnostics);
}

TEST(Graph, UnknownModel) {
  CompileOptions options;
  options.models = std::set<std::string>{"known"};
  const CompileResult r = compile_yaml(R"(
nodes:
  a:
    node_type: llm
    prompt: [{user: hi}]
    model: {name: unknown}
edges:
  - {from: START, to: a}
  - {from: a, to: END}
)",
                                       options);
  EXPECT_TRUE(has_message(r.diagnostics, Severity::error, "unknown")) << dump(r.diagnostics);
}

TEST(Graph, UnconditionalCycleIsAnError) {
  const CompileResult r = compile_yaml(R"(
nodes:
  a: {node_type: lambda, lambda: grasp.lambdas.identity, output_keys: x}
  b: {node_type: lambda, lambda: grasp.lambdas.identity, output_keys: y}
edges:
  - {from: START, to: a}
  - {from: a, to: b}
  - {from: b, to: a}
)");
  EXPECT_FALSE(r.graph);
  EXPECT_TRUE(has_message(r.diagnostics, Severity::error, "unconditional cycle")) << dump(r.diagnostics);
}

TEST(Graph, RoutedCycleIsBoundedByBudget) {
  const ParseResult parsed =
      parse_pipeline_config(testing::read_file(testing::task_dir("b2_conditional") / "config.yaml"));
  const CompileResult r = compile(parsed.config->graph, testing::builtins());
  ASSERT_TRUE(r.graph);
  EXPECT_TRUE(has_message(r.diagnostics, Severity::note, "loop_budget 8")) << dump(r.diagnostics);
}

TEST(Graph, PlaceholderChecks) {
  const std::string yaml = R"(
nodes:
  a:
    node_type: llm
    prompt: [{user: "{question} {later}"}]
    model: {name: m}
  b:
    node_type: lambda
    lambda: grasp.lambdas.identity
    output_keys: later
edges:
  - {from: START, to: a}
  - {from: a, to: b}
  - {from: b, to: END}
)";
  CompileOptions known;
  known.source_columns = std::set<std::string>{"question"};
  const CompileResult strict = compile_yaml(yaml, known);
  EXPECT_TRUE(has_message(strict.diagnostics, Severity::error, "later")) << dump(strict.diagnostics);
  const CompileResult loose = compile_yaml(yaml);
  EXPECT_TRUE(loose.graph) << dump(loose.diagnostics);
  EXPECT_TRUE(has_message(loose.diagnostics, Severity::warning, "later")) << dump(loose.diagnostics);
}

TEST(Graph, DuplicateOutputKeys) {
  const CompileResult r = compile_yaml(R"(
nodes:
  a: {node_type: lambda, lambda: grasp.lambdas.identity, output_keys: x}
  b: {node_type: lambda, lambda: grasp.lambdas.identity, output_keys: x}
edges:
  - {from: START, to: a}
  - {from: a, to: b}
  - {from: b, to: END}
)");
  EXPECT_TRUE(has_message(r.diagnostics, Severity::error, "output key x")) << dump(r.diagnostics);
}

TEST(Graph, DefaultOutputKeys) {
  NodeSpec llm;
  EXPECT_EQ(default_output_keys("answer", llm), std::vector<std::string>{"answer"});
  NodeSpec lambda;
  lambda.type = NodeType::lambda;
  EXPECT_TRUE(default_output_keys("l", lambda).empty());

  const CompileResult r = compile_yaml(R"(
nodes:
  n:
    node_type: llm
    prompt: [{user: hi}]
    model: {name: m}
    structured_output:
      schema:
        fields:
          a: {type: str}
          b: {type: int}
  agent:
    node_type: agent
    prompt: [{user: hi}]
    model: {name: m}
edges:
  - {from: START, to: n}
  - {from: n, to: agent}
  - {from: agent, to: END}
)");
  ASSERT_TRUE(r.graph) << dump(r.diagnostics);
  EXPECT_EQ(r.graph->node("n")->output_keys, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(r.graph->node("agent")->output_keys, (std::vector<std::string>{"agent", "agent__transcript"}));
}

const char* kChild = R"(
nodes:
  draft: {node_type: lambda, lambda: grasp.lambdas.identity, output_keys: d}
  polish: {node_type: lambda, lambda: grasp.lambdas.identity, output_keys: p}
edges:
  - {from: START, to: draft}
  - {from: draft, to: polish}
  - {from: polish, to: END}
)";

TEST(Graph, SubgraphIsInlinedWithPrefix) {
  CompileOptions options;
  options.library = map_library({{"recipes.child", graph_from(kChild)}});
  const CompileResult r = compile_yaml(R"(
nodes:
  first: {node_type: lambda, lambda: grasp.lambdas.identity, output_keys: f}
  inner: {node_type: subgraph, subgraph: recipes.child}
edges:
  - {from: START, to: first}
  - {from: first, to: inner}
  - {from: inner, to: END}
)",
                                       options);
  ASSERT_TRUE(r.graph) << dump(r.diagnostics);
  EXPECT_EQ(r.graph->successors("first"), std::vector<std::string>{"inner/draft"});
  EXPECT_EQ(r.graph->successors("inner/draft"), std::vector<std::string>{"inner/polish"});
  EXPECT_EQ(r.graph->successors("inner/polish"), std::vector<std::string>{"END"});
  EXPECT_EQ(r.graph->node("inner/polish")->output_keys, std::vector<std::string>{"p"});
}

TEST(Graph, SubgraphFromDirectoryLibrary) {
  const cli::LoadedTask task = testing::load_fixture_task("evolve_instruct", testing::builtins());
  ASSERT_TRUE(task.ok());
  EXPECT_NE(task.graph->node("evolve/strategy"), nullptr);
  EXPECT_EQ(task.graph->start().to, "evolve/strategy");
  const Transition& judge = task.graph->transitions.at("evolve/judge");
  ASSERT_TRUE(judge.conditional());
  EXPECT_EQ(*judge.target("pass"), "answer");
  EXPECT_EQ(*judge.target("fail"), "evolve/strategy");
}

TEST(Graph, RecursiveSubgraphHitsLimit) {
  const GraphConfig self = graph_from(R"(
nodes:
  again: {node_type: subgraph, subgraph: loop.self}
edges:
  - {from: START, to: again}
  - {from: again, to: END}
)");
  CompileOptions options;
  options.library = map_library({{"loop.self", self}});
  const CompileResult r = compile(self, testing::builtins(), options);
  EXPECT_FALSE(r.graph);
  EXPECT_TRUE(has_message(r.diagnostics, Severity::error, "RecursionLimit")) << dump(r.diagnostics);
}

TEST(Graph, MissingSubgraph) {
  const CompileResult r = compile_yaml(R"(
nodes:
  inner: {node_type: subgraph, subgraph: nowhere.to.be.found}
edges:
  - {from: START, to: inner}
  - {from: inner, to: END}
)");
  EXPECT_FALSE(r.graph);
  EXPECT_TRUE(has_message(r.diagnostics, Severity::error, "nowhere.to.be.found")) << dump(r.diagnostics);
}

// Any chain of lambdas with a router at the end compiles, every node is
// reachable, and a simple edge never forms a cycle.
TEST(Graph, GeneratedChainsCompile) {
  testing::for_all(
      41, 80,
      [](std::mt19937& rng) {
        std::uniform_int_distribution<int> count(1, 12);
        const int n = count(rng);
        std::string yaml = "nodes:\n";
        for (int i = 0; i < n; ++i) {
          yaml += "  n" + std::to_string(i) + ": {node_type: lambda, lambda: grasp.lambdas.identity, output_keys: k" +
                  std::to_string(i) + "}\n";
        }
        yaml += "edges:\n  - {from: START, to: n0}\n";
        for (int i = 0; i + 1 < n; ++i) {
          yaml += "  - {from: n" + std::to_string(i) + ", to: n" + std::to_string(i + 1) + "}\n";
        }
        yaml += "  - from: n" + std::to_string(n - 1) +
                "\n    condition: validators.code.RouteBasedOnValidity\n    path_map: {END: END, generate: n0}\n";
        return std::make_pair(n, yaml);
      },
      [](const std::pair<int, std::string>& c, int) {
        const CompileResult r = compile_yaml(c.second);
        ASSERT_TRUE(r.graph) << dump(r.diagnostics);
        EXPECT_EQ(static_cast<int>(r.graph->nodes.size()), c.first);
        EXPECT_EQ(r.graph->loop_budget, 4 * c.first);
        EXPECT_FALSE(has_errors(r.diagnostics));
      });
}

}  // namespace
}  // namespace grasp
