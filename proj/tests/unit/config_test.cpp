#include <gtest/gtest.h>

#include "grasp/config.hpp"
#include "grasp/type_expr.hpp"
#include "helpers.hpp"

namespace grasp {
namespace {

const std::vector<std::string> kTasks = {"b1_dataless",       "b2_conditional", "b3_image",        "b4_audio",
                                         "research_agent",    "structured_answer", "audio_node",   "evolve_instruct"};

ParseResult parse_task(const std::string& name) {
  return parse_pipeline_config(testing::read_file(testing::task_dir(name) / "config.yaml"));
}

bool mentions(const std::vector<Diagnostic>& diagnostics, const std::string& needle, Severity severity) {
  for (const auto& d : diagnostics) {
    if (d.severity == severity && (d.path + " " + d.message).find(needle) != std::string::npos) return true;
  }
  return false;
}

TEST(Config, EveryFixtureParses) {
  for (const auto& name : kTasks) {
    const ParseResult r = parse_task(name);
    EXPECT_TRUE(r.ok()) << name;
    EXPECT_FALSE(has_errors(r.diagnostics)) << name;
  }
}

TEST(Config, DataLessFixture) {
  const ParseResult r = parse_task("b1_dataless");
  ASSERT_TRUE(r.ok());
  const PipelineConfig& c = *r.config;
  EXPECT_TRUE(c.data_less());
  ASSERT_TRUE(c.data && c.data->sink);
  EXPECT_EQ(c.data->sink->file_path, "output/synthetic_data.jsonl");
  EXPECT_EQ(c.data->sink->file_format, FileFormat::jsonl);
  const NodeSpec* generate = c.graph.find_node("generate");
  ASSERT_NE(generate, nullptr);
  EXPECT_EQ(generate->type, NodeType::llm);
  EXPECT_EQ(generate->output_keys, std::vector<std::string>{"response"});
  EXPECT_EQ(generate->model->name, "gpt-3.5-turbo");
  EXPECT_DOUBLE_EQ(generate->model->parameters.at("temperature").get<double>(), 0.8);
  ASSERT_EQ(c.output.output_map.size(), 1u);
  EXPECT_EQ(c.output.output_map[0].name, "fact");
  EXPECT_EQ(c.output.output_map[0].from, "response");
  EXPECT_TRUE(mentions(r.diagnostics, "output_map", Severity::warning));
}

TEST(Config, ConditionalFixture) {
  const ParseResult r = parse_task("b2_conditional");
  ASSERT_TRUE(r.ok());
  const PipelineConfig& c = *r.config;
  ASSERT_EQ(c.graph.edges.size(), 3u);
  const EdgeSpec& routed = c.graph.edges[2];
  EXPECT_TRUE(routed.conditional());
  EXPECT_EQ(routed.condition, "validators.code.RouteBasedOnValidity");
  EXPECT_EQ(routed.path_map,
            (std::vector<std::pair<std::string, std::string>>{{"END", "END"}, {"generate", "generate"}}));
  ASSERT_TRUE(c.schema);
  ASSERT_EQ(c.schema->fields.size(), 3u);
  EXPECT_EQ(c.schema->fields[2].type, "bool");
}

TEST(Config, MultimodalPromptParts) {
  const ParseResult r = parse_task("b3_image");
  ASSERT_TRUE(r.ok());
  const NodeSpec* node = r.config->graph.find_node("judge_pokemon");
  ASSERT_NE(node, nullptr);
  ASSERT_EQ(node->prompt.size(), 1u);
  const PromptMessage& user = node->prompt[0];
  EXPECT_TRUE(user.typed_parts);
  ASSERT_EQ(user.parts.size(), 2u);
  EXPECT_EQ(user.parts[0].kind, PromptPart::Kind::text);
  EXPECT_EQ(user.parts[1].kind, PromptPart::Kind::image_url);
  EXPECT_EQ(user.parts[1].payload, "{image}");
  EXPECT_EQ(r.config->data->source->kind, SourceKind::hf);
  EXPECT_EQ(r.config->data->source->splits, std::vector<std::string>{"train"});
  EXPECT_EQ(r.config->data->sink->kind, SourceKind::hf);
  EXPECT_TRUE(r.config->data->sink->push_to_hub);
  EXPECT_TRUE(mentions(r.diagnostics, "push_to_hub", Severity::warning));

  const ParseResult audio = parse_task("b4_audio");
  ASSERT_TRUE(audio.ok());
  EXPECT_EQ(audio.config->graph.find_node("identify_animal")->prompt[0].parts[1].kind, PromptPart::Kind::audio_url);
}

TEST(Config, AgentAndStructuredSnippets) {
  const ParseResult agent = parse_task("research_agent");
  ASSERT_TRUE(agent.ok());
  const NodeSpec* a = agent.config->graph.find_node("research_agent");
  EXPECT_EQ(a->type, NodeType::agent);
  EXPECT_EQ(a->tools.size(), 2u);
  EXPECT_EQ(a->inject_system_messages.at(2), "Remember to cite your sources.");

  const ParseResult structured = parse_task("structured_answer");
  ASSERT_TRUE(structured.ok());
  const NodeSpec* s = structured.config->graph.find_node("answer_node");
  ASSERT_TRUE(s->structured_output);
  EXPECT_EQ(s->structured_output->fields,
            (std::vector<FieldDef>{{"answer", "str", "Main answer text"},
                                   {"confidence", "float", "Confidence score between 0 and 1"}}));
}

TEST(Config, SerializationRoundTripsFixtures) {
  for (const auto& name : kTasks) {
    const ParseResult first = parse_task(name);
    ASSERT_TRUE(first.ok()) << name;
    const std::string yaml = serialize_pipeline_config(*first.config);
    const ParseResult second = parse_pipeline_config(yaml);
    ASSERT_TRUE(second.ok()) << name << "\n" << yaml;
    EXPECT_EQ(*first.config, *second.config) << name;
    EXPECT_EQ(canonical_dump(to_value(*first.config)), canonical_dump(to_value(*second.config))) << name;
  }
}

std::string random_chain_yaml(std::mt19937& rng) {
  std::uniform_int_distribution<int> count(1, 5);
  std::uniform_real_distribution<double> temp(0.0, 1.5);
  const int n = count(rng);
  std::string yaml = "graph_config:\n  chat_conversation: multiturn\n  nodes:\n";
  std::vector<std::string> names;
  for (int i = 0; i < n; ++i) names.push_back(testing::random_word(rng) + std::to_string(i));
  for (int i = 0; i < n; ++i) {
    yaml += "    " + names[i] + ":\n      node_type: llm\n      output_keys: out" + std::to_string(i) +
            "\n      prompt:\n        - system: \"be brief\"\n        - user: \"" + testing::random_word(rng, 3, 12) +
            "\"\n      model:\n        name: m\n        parameters:\n          temperature: " +
            std::to_string(temp(rng)) + "\n";
  }
  yaml += "  edges:\n";
  for (int i = 0; i <= n; ++i) {
    yaml += "    - from: " + (i == 0 ? std::string("START") : names[i - 1]) + "\n      to: " +
            (i == n ? std::string("END") : names[i]) + "\n";
  }
  yaml += "output_config:\n  output_map:\n    result:\n      from: out" + std::to_string(n - 1) + "\n";
  return yaml;
}

TEST(Config, SerializationRoundTripsGeneratedPipelines) {
  testing::for_all(21, 60, random_chain_yaml, [](const std::string& yaml, int) {
    const ParseResult first = parse_pipeline_config(yaml);
    ASSERT_TRUE(first.ok()) << yaml;
    const ParseResult second = parse_pipeline_config(serialize_pipeline_config(*first.config));
    ASSERT_TRUE(second.ok());
    EXPECT_EQ(*first.config, *second.config);
  });
}

TEST(Config, DiagnosticsCarryPathAndPosition) {
  const ParseResult r = parse_pipeline_config(
      "graph_config:\n  nodes:\n    a:\n      node_type: telepathy\n  edges:\n    - from: START\n      to: a\n"
      "output_config:\n  output_map: {}\n");
  EXPECT_FALSE(r.ok());
  ASSERT_TRUE(has_errors(r.diagnostics));
  bool found = false;
  for (const auto& d : r.diagnostics) {
    if (d.path == "graph_config.nodes.a.node_type") {
      found = true;
      EXPECT_EQ(d.line, 4);
    }
  }
  EXPECT_TRUE(found);
}

TEST(Config, MutatedFixturesAreRejected) {
  const auto check = [](const std::string& file, const std::string& needle) {
    const ParseResult r = parse_pipeline_config(testing::read_file(testing::fixture_dir() / "mutations" / file));
    const bool parse_error = mentions(r.diagnostics, needle, Severity::error);
    return parse_error;
  };
  EXPECT_TRUE(check("dual_to_condition.yaml", "both to and condition"));
  EXPECT_TRUE(check("bad_rule_type.yaml", "numeric rule on str"));
}

TEST(Config, YamlSyntaxErrorIsADiagnostic) {
  const ParseResult r = parse_pipeline_config("graph_config: [unclosed\n");
  EXPECT_FALSE(r.ok());
  ASSERT_FALSE(r.diagnostics.empty());
  EXPECT_GT(r.diagnostics[0].line, 0);
}

TEST(Config, ConfigPathsResolve) {
  const ParseResult r = parse_pipeline_config(testing::read_file(testing::task_dir("b2_conditional") / "config.yaml"));
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(resolve_config_path(*r.config, "$graph_config.nodes.generate.model.name"), "mistral");
  EXPECT_EQ(substitute_config_paths(*r.config, "$graph_config.nodes.generate.model.parameters.temperature"), 0.5);
  EXPECT_EQ(substitute_config_paths(*r.config, "model=$graph_config.nodes.generate.model.name!"), "model=mistral!");
  try {
    resolve_config_path(*r.config, "$graph_config.nodes.missing.model");
    FAIL() << "expected path_not_found";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::path_not_found);
    EXPECT_NE(std::string(e.what()).find("missing"), std::string::npos);
  }
  try {
    resolve_config_path(*r.config, "$graph_config.nodes.generate");
    FAIL() << "expected non_scalar_path";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::non_scalar_path);
  }
}

TEST(Config, TemplatePlaceholders) {
  EXPECT_EQ(template_placeholders("{a} and {b}{a}"), (std::vector<std::string>{"a", "b", "a"}));
  EXPECT_TRUE(template_placeholders("{{literal}}").empty());
}

TEST(TypeExpr, ParsesAndMatches) {
  const auto t = parse_type_expr("list[dict[str, any]]");
  ASSERT_TRUE(t);
  EXPECT_EQ(to_string(*t), "list[dict[str, any]]");
  EXPECT_TRUE(type_matches(*t, Value::parse(R"([{"role":"user","content":"x"}])")));
  EXPECT_FALSE(type_matches(*t, Value::parse(R"(["x"])")));
  EXPECT_EQ(parse_type_expr("List[Dict[str, Any]]"), t);
  EXPECT_FALSE(parse_type_expr("list[").has_value());
  const auto f = parse_type_expr("float");
  EXPECT_TRUE(type_matches(*f, 3));
  EXPECT_FALSE(type_matches(*parse_type_expr("int"), true));
}

TEST(TypeExpr, RenderParseRoundTrip) {
  testing::for_all(
      3, 200,
      [](std::mt19937& rng) {
        std::function<std::string(int)> gen = [&](int depth) -> std::string {
          std::uniform_int_distribution<int> pick(0, depth > 2 ? 4 : 6);
          switch (pick(rng)) {
            case 0: return "str";
            case 1: return "int";
            case 2: return "float";
            case 3: return "bool";
            case 4: return "any";
            case 5: return "list[" + gen(depth + 1) + "]";
            default: return "dict[str, " + gen(depth + 1) + "]";
          }
        };
        return gen(0);
      },
      [](const std::string& text, int) {
        const auto t = parse_type_expr(text);
        ASSERT_TRUE(t) << text;
        EXPECT_EQ(to_string(*t), text);
      });
}

}  // namespace
}  // namespace grasp
