#include <gtest/gtest.h>

#include <array>

#include <fmt/format.h>

#include "grasp/quality.hpp"
#include "helpers.hpp"

namespace grasp {
namespace {

Value chat(const std::string& user, const std::string& assistant) {
  return Value::array({{{"role", "user"}, {"content", user}}, {{"role", "assistant"}, {"content", assistant}}});
}

TEST(Quality, RepetitionMatchesReference) {
  for (const auto& [text, expected] : testing::oracle().at("repetition").items()) {
    EXPECT_DOUBLE_EQ(repetition_ratio(text, 4), expected.get<double>()) << text;
  }
}

TEST(Quality, RepetitionIsARatio) {
  testing::for_all(
      9, 300,
      [](std::mt19937& rng) {
        std::string s;
        const int n = std::uniform_int_distribution<int>(0, 40)(rng);
        for (int i = 0; i < n; ++i) s += testing::random_word(rng, 1, 2) + " ";
        return s;
      },
      [](const std::string& text, int) {
        const double r = repetition_ratio(text, 4);
        EXPECT_GE(r, 0.0);
        EXPECT_LE(r, 1.0);
      });
}

TEST(Quality, HeuristicFlags) {
  QualityConfig config;
  EXPECT_TRUE(heuristic_stage(chat("hi", "A perfectly reasonable answer."), config).empty());
  EXPECT_EQ(heuristic_stage(chat("hi", "ok"), config), std::vector<std::string>{"too_short"});
  EXPECT_EQ(heuristic_stage(chat("hi", "I'm sorry, but I cannot do that."), config),
            std::vector<std::string>{"refusal_phrase"});
  EXPECT_EQ(heuristic_stage(chat("", "A perfectly reasonable answer."), config), std::vector<std::string>{"empty_turn"});
  EXPECT_EQ(heuristic_stage(chat("hi", "bad \xEF\xBF\xBD char here"), config),
            std::vector<std::string>{"non_utf8_artifact"});
  std::string loop;
  for (int i = 0; i < 10; ++i) loop += "again and again ";
  EXPECT_EQ(heuristic_stage(chat("hi", loop), config), std::vector<std::string>{"high_repetition"});
  config.max_chars = 20;
  EXPECT_EQ(heuristic_stage(chat("hi", "A perfectly reasonable answer."), config), std::vector<std::string>{"too_long"});
  EXPECT_EQ(heuristic_stage(Value::array(), config), std::vector<std::string>{"empty_turn"});
}

BackendConfig judge(std::vector<std::string> replies) {
  BackendConfig cfg;
  cfg.name = "judge";
  cfg.api_style = ApiStyle::mock;
  cfg.backoff = {1, 2.0, 2};
  cfg.mock.mode = MockSpec::Mode::script;
  for (auto& r : replies) {
    MockStep step;
    step.text = std::move(r);
    cfg.mock.script.push_back(std::move(step));
  }
  return cfg;
}

QualityConfig judged() {
  QualityConfig config;
  config.judge_model = "judge";
  return config;
}

TEST(Quality, JudgeRunsOnlyWithoutFlags) {
  ModelPool pool;
  pool.add(std::make_unique<MockClient>(judge({R"({"score": 4.5, "rationale": "good"})"})));
  const QualityReport flagged = tag_conversation(chat("hi", "ok"), judged(), &pool);
  EXPECT_EQ(flagged.verdict, Verdict::drop);
  EXPECT_FALSE(flagged.llm_score);
  EXPECT_EQ(pool.mock_calls(), 0);
  const QualityReport clean = tag_conversation(chat("hi", "A perfectly reasonable answer."), judged(), &pool);
  EXPECT_EQ(clean.verdict, Verdict::keep);
  EXPECT_EQ(clean.llm_score, 4.5);
  EXPECT_EQ(pool.mock_calls(), 1);
}

TEST(Quality, JudgeScoreIsClamped) {
  MockClient client(judge({R"({"score": 9, "rationale": "wow"})"}));
  const JudgeScore s = judge_stage(chat("hi", "fine answer"), judged(), client);
  EXPECT_EQ(s.score, 5.0);
  EXPECT_TRUE(s.clamped);
}

TEST(Quality, JudgeFailureGivesReview) {
  ModelPool pool;
  pool.add(std::make_unique<MockClient>(judge({"no json at all"})));
  const QualityReport r = tag_conversation(chat("hi", "A perfectly reasonable answer."), judged(), &pool);
  EXPECT_EQ(r.verdict, Verdict::review);
  EXPECT_EQ(pool.mock_calls(), 3);
}

TEST(Quality, LowScoreDrops) {
  ModelPool pool;
  pool.add(std::make_unique<MockClient>(judge({R"({"score": 2, "rationale": "weak"})"})));
  EXPECT_EQ(tag_conversation(chat("hi", "A perfectly reasonable answer."), judged(), &pool).verdict, Verdict::drop);
}

TEST(Quality, RaisingThresholdNeverRescuesARecord) {
  testing::for_all(
      13, 100,
      [](std::mt19937& rng) {
        std::uniform_real_distribution<double> u(0.0, 6.0);
        double a = u(rng), b = u(rng);
        return std::array<double, 3>{u(rng), std::min(a, b), std::max(a, b)};
      },
      [](const std::array<double, 3>& c, int) {
        auto verdict = [&](double threshold) {
          ModelPool pool;
          pool.add(std::make_unique<MockClient>(judge({fmt::format(R"({{"score": {}, "rationale": "r"}})", c[0])})));
          QualityConfig config = judged();
          config.llm_threshold = threshold;
          return tag_conversation(chat("hi", "A perfectly reasonable answer."), config, &pool).verdict;
        };
        if (verdict(c[1]) == Verdict::drop) EXPECT_EQ(verdict(c[2]), Verdict::drop);
      });
}

TEST(Quality, TagRecordsKeepsEveryRecord) {
  std::vector<Value> records = {{{"conversation", chat("q", "ok")}}, {{"other", 1}}};
  const auto tagged = tag_records(records, QualityConfig{}, nullptr);
  ASSERT_EQ(tagged.size(), 2u);
  EXPECT_EQ(tagged[0].at("quality").at("verdict"), "drop");
  EXPECT_EQ(tagged[1].at("quality").at("heuristic_flags"), Value::parse(R"(["empty_turn"])"));
}

}  // namespace
}  // namespace grasp
