#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "grasp/oasst.hpp"
#include "helpers.hpp"

namespace grasp {
namespace {

Value conversation(const std::vector<std::string>& texts) {
  Value out = Value::array();
  for (std::size_t i = 0; i < texts.size(); ++i) {
    out.push_back({{"role", i % 2 ? "assistant" : "user"}, {"content", texts[i]}});
  }
  return out;
}

// Three replies to one prompt; two of them get follow-ups, one of which
// branches again, and the third draws two follow-up prompts.
std::vector<Value> branching_conversations() {
  const std::string p = "How do vaccines work?";
  return {
      conversation({p, "They train the immune system.", "Using what?", "Weakened or inactivated pathogens."}),
      conversation({p, "They train the immune system.", "How long does it last?", "It depends on the vaccine."}),
      conversation({p, "They expose you to an antigen.", "Is that safe?", "The doses are carefully controlled."}),
      conversation({p, "They mimic an infection.", "Which infection?"}),
      conversation({p, "They mimic an infection.", "Does it hurt?"}),
      conversation({p, "They expose you to an antigen."}),
  };
}

OasstTree merged(const std::vector<Value>& conversations) {
  std::vector<OasstTree> trees;
  for (const auto& c : conversations) trees.push_back(to_tree(c));
  return merge_trees(trees);
}

std::set<std::string> ids(const OasstTree& tree) {
  std::set<std::string> out;
  for (const auto& m : tree.messages) out.insert(m.message_id);
  return out;
}

TEST(Oasst, IdsMatchReference) {
  const Value& ref = testing::oracle().at("oasst");
  const OasstTree tree = to_tree(conversation({"What is 2+2?", "4"}));
  EXPECT_EQ(tree.tree_id, ref.at("tree_id"));
  ASSERT_EQ(tree.messages.size(), 2u);
  EXPECT_EQ(tree.messages[0].message_id, ref.at("prompter_id"));
  EXPECT_EQ(tree.messages[1].message_id, ref.at("assistant_id"));
  EXPECT_EQ(tree.messages[1].parent_id, tree.messages[0].message_id);
}

TEST(Oasst, DepthFourTreeWithTwelveMessages) {
  const OasstTree tree = merged(branching_conversations());
  check_tree(tree);
  const TreeStats stats = tree_stats(tree);
  EXPECT_EQ(stats.depth, 4);
  EXPECT_EQ(stats.message_count, 12);
  EXPECT_EQ(stats.branching, 3);
  const auto sft = extract_sft(tree);
  const auto assistants = std::count_if(tree.messages.begin(), tree.messages.end(),
                                        [](const OasstMessage& m) { return m.role == "assistant"; });
  EXPECT_EQ(assistants, 6);
  EXPECT_EQ(static_cast<long>(sft.size()), assistants);
  for (const auto& ex : sft) {
    EXPECT_EQ(ex.target->role, "assistant");
    EXPECT_EQ(ex.context.back()->message_id, *ex.target->parent_id);
    EXPECT_EQ(ex.context.front(), tree.root());
  }
}

TEST(Oasst, DpoBestVersusEachSkipsTies) {
  OasstTree tree = merged(branching_conversations());
  const auto replies = tree.children(tree.root()->message_id);
  ASSERT_EQ(replies.size(), 3u);
  const std::vector<double> scores = {4, 2, 4};
  for (std::size_t i = 0; i < replies.size(); ++i) {
    const_cast<OasstMessage*>(replies[i])->metadata["llm_score"] = scores[i];
  }
  std::vector<std::string> warnings;
  const auto pairs = extract_dpo(tree, "llm_score", &warnings);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].chosen, replies[0]);
  EXPECT_EQ(pairs[0].rejected, replies[1]);
  EXPECT_EQ(pairs[0].context.size(), 1u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("tied"), std::string::npos);

  const_cast<OasstMessage*>(replies[2])->metadata["llm_score"] = 5;
  const auto untied = extract_dpo(tree, "llm_score");
  ASSERT_EQ(untied.size(), 2u);
  for (const auto& p : untied) EXPECT_EQ(p.chosen, replies[2]);
}

TEST(Oasst, DpoNeedsScores) {
  std::vector<std::string> warnings;
  EXPECT_TRUE(extract_dpo(merged(branching_conversations()), "llm_score", &warnings).empty());
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Oasst, ConversionErrors) {
  try {
    to_tree(Value::parse(R"([{"role":"assistant","content":"hi"}])"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::conversion);
    EXPECT_NE(std::string(e.what()).find("index 0"), std::string::npos);
  }
  EXPECT_THROW(to_tree(Value::parse(R"([{"role":"user","content":"a"},{"role":"user","content":"b"}])")), Error);
  const OasstTree sys = to_tree(Value::parse(R"([{"role":"system","content":"be nice"},{"role":"user","content":"a"}])"));
  EXPECT_EQ(sys.messages.size(), 1u);
  EXPECT_EQ(sys.messages[0].metadata.at("system")[0], "be nice");
  const OasstTree agent = to_tree(Value::parse(R"([{"role":"user","content":"a"},
      {"role":"assistant","content":"","tool_calls":[{"id":"c","type":"function","function":{"name":"f","arguments":"{}"}}]},
      {"role":"tool","content":"42","tool_call_id":"c"},{"role":"system","content":"cite"},
      {"role":"assistant","content":"It is 42."}])"));
  ASSERT_EQ(agent.messages.size(), 2u);
  EXPECT_EQ(agent.messages[1].text, "It is 42.");
  EXPECT_EQ(agent.messages[0].metadata.at("system")[0], "cite");
  EXPECT_THROW(merge_trees({to_tree(conversation({"a"})), to_tree(conversation({"b"}))}), Error);
}

TEST(Oasst, SingleMessageStats) {
  const OasstTree tree = to_tree(conversation({"alone"}));
  EXPECT_EQ(tree_stats(tree), (TreeStats{1, 1, 0}));
  EXPECT_TRUE(extract_sft(tree).empty());
}

std::vector<Value> random_conversations(std::mt19937& rng) {
  std::vector<Value> out;
  const int n = std::uniform_int_distribution<int>(1, 6)(rng);
  for (int i = 0; i < n; ++i) {
    std::vector<std::string> texts = {"root"};
    const int len = std::uniform_int_distribution<int>(1, 6)(rng);
    for (int k = 1; k < len; ++k) texts.push_back(testing::random_word(rng, 1, 1));
    out.push_back(conversation(texts));
  }
  return out;
}

TEST(Oasst, MergeIsOrderIndependentAndIdempotent) {
  testing::for_all(17, 200, random_conversations, [](std::vector<Value> convs, int) {
    const OasstTree a = merged(convs);
    check_tree(a);
    std::reverse(convs.begin(), convs.end());
    const OasstTree b = merged(convs);
    EXPECT_EQ(ids(a), ids(b));
    EXPECT_EQ(merge_trees({a, a}).messages, a.messages);
    EXPECT_EQ(ids(merge_trees({merged({convs.front()}), b})), ids(a));
    EXPECT_EQ(tree_stats(a), tree_stats(b));
  });
}

TEST(Oasst, ExportWritesAllFiles) {
  testing::TempDir dir;
  std::vector<std::pair<Value, Value>> input;
  for (const auto& c : branching_conversations()) input.emplace_back(c, Value{{"record_id", 1}});
  input.emplace_back(Value::parse(R"([{"role":"assistant","content":"bad"}])"), Value::object());
  const OasstExportReport r = export_oasst(input, OasstConfig{}, dir.path());
  EXPECT_EQ(r.trees, 1u);
  EXPECT_EQ(r.messages, 12u);
  EXPECT_EQ(r.sft, 6u);
  EXPECT_EQ(r.skipped, 1u);
  const std::string lines = testing::read_file(dir / "oasst.jsonl");
  EXPECT_EQ(std::count(lines.begin(), lines.end(), '\n'), 12);
  EXPECT_TRUE(std::filesystem::exists(dir / "dpo.jsonl"));
}

}  // namespace
}  // namespace grasp
