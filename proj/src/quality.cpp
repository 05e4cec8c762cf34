#include "grasp/quality.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace grasp {

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::keep: return "keep";
    case Verdict::drop: return "drop";
    case Verdict::review: return "review";
  }
  return "review";
}

Value QualityReport::to_value() const {
  Value out = {{"heuristic_flags", heuristic_flags}, {"verdict", to_string(verdict)}};
  if (llm_score) out["llm_score"] = *llm_score;
  if (llm_rationale) out["llm_rationale"] = *llm_rationale;
  return out;
}

std::vector<std::pair<std::string, std::string>> conversation_turns(const Value& conversation) {
  std::vector<std::pair<std::string, std::string>> turns;
  if (conversation.is_string()) {
    turns.emplace_back("assistant", conversation.get<std::string>());
    return turns;
  }
  if (!conversation.is_array()) return turns;
  for (const auto& m : conversation) {
    if (!m.is_object()) continue;
    const std::string role = m.value("role", "");
    const Value content = m.value("content", Value(""));
    std::string text;
    if (content.is_string()) {
      text = content.get<std::string>();
    } else if (content.is_array()) {
      for (const auto& part : content) {
        if (part.is_object() && part.value("type", "") == "text") text += part.value("text", "");
      }
    } else if (!content.is_null()) {
      text = content.dump();
    }
    turns.emplace_back(role, std::move(text));
  }
  return turns;
}

double repetition_ratio(std::string_view text, std::size_t n) {
  std::vector<std::string> words;
  for (auto& w : split(text, ' ')) {
    std::string t = to_lower(trim(w));
    if (!t.empty()) words.push_back(std::move(t));
  }
  if (n == 0 || words.size() < n) return 0;
  const std::size_t total = words.size() - n + 1;
  if (total < kMinNgrams) return 0;
  std::map<std::string, std::size_t> counts;
  std::size_t best = 0;
  for (std::size_t i = 0; i < total; ++i) {
    std::string key;
    for (std::size_t k = 0; k < n; ++k) key += words[i + k] + '\x1f';
    best = std::max(best, ++counts[key]);
  }
  return static_cast<double>(best) / static_cast<double>(total);
}

const std::vector<std::string>& default_refusal_phrases() {
  static const std::vector<std::string> phrases = {
      "i'm sorry, but",   "i am sorry, but", "i cannot help with", "i can't help with",
      "i cannot assist",  "i can't assist",  "as an ai language model", "i am unable to",
      "i'm unable to",    "i won't be able to"};
  return phrases;
}

std::vector<std::string> heuristic_stage(const Value& conversation, const QualityConfig& config) {
  std::set<std::string> flags;
  const auto turns = conversation_turns(conversation);
  const auto& phrases = config.refusal_phrases.empty() ? default_refusal_phrases() : config.refusal_phrases;
  bool any_assistant = false;
  for (const auto& [role, text] : turns) {
    if (trim(text).empty()) flags.insert("empty_turn");
    if (!valid_utf8(text) || text.find("\xEF\xBF\xBD") != std::string::npos) flags.insert("non_utf8_artifact");
    if (role != "assistant") continue;
    any_assistant = true;
    if (trim(text).empty()) continue;
    if (text.size() < config.min_chars) flags.insert("too_short");
    if (text.size() > config.max_chars) flags.insert("too_long");
    if (repetition_ratio(text, config.ngram) > config.repetition_threshold) flags.insert("high_repetition");
    const std::string lower = to_lower(text);
    for (const auto& phrase : phrases) {
      if (lower.find(to_lower(phrase)) != std::string::npos) flags.insert("refusal_phrase");
    }
  }
  if (!any_assistant) flags.insert("empty_turn");
  return {flags.begin(), flags.end()};
}

namespace {

const char* kRubric =
    "You are grading a conversation between a user and an assistant. Rate the assistant's replies from 1 to 5 "
    "on helpfulness, correctness and format, where 1 is unusable and 5 is excellent. Return JSON with a numeric "
    "`score` and a short `rationale`.";

}  // namespace

JudgeScore judge_stage(const Value& conversation, const QualityConfig& config, ModelClient& judge,
                       const std::string& stream) {
  std::string transcript;
  for (const auto& [role, text] : conversation_turns(conversation)) transcript += role + ": " + text + "\n";
  ChatRequest request;
  request.model = config.judge_model;
  request.messages = {ChatMessage::text("system", kRubric), ChatMessage::text("user", transcript)};
  request.parameters = {{"temperature", 0}};
  request.stream = stream;
  const std::vector<FieldDef> fields = {{"score", "float", "1 to 5"}, {"rationale", "str", "one or two sentences"}};
  const StructuredResult result = complete_structured(judge, std::move(request), fields);
  JudgeScore out;
  out.score = result.value.at("score").get<double>();
  out.rationale = result.value.at("rationale").get<std::string>();
  const double clamped = std::clamp(out.score, 1.0, 5.0);
  if (clamped != out.score) {
    spdlog::warn("judge score {} clamped to {}", out.score, clamped);
    out.score = clamped;
    out.clamped = true;
  }
  return out;
}

QualityReport tag_conversation(const Value& conversation, const QualityConfig& config, ModelPool* models,
                               const std::string& stream) {
  QualityReport report;
  report.heuristic_flags = heuristic_stage(conversation, config);
  if (!report.heuristic_flags.empty()) {
    report.verdict = Verdict::drop;
    return report;
  }
  if (config.judge_model.empty() || !models) return report;
  try {
    const JudgeScore score = models->with_slot(config.judge_model, [&](ModelClient& client) {
      return judge_stage(conversation, config, client, stream);
    });
    report.llm_score = score.score;
    report.llm_rationale = score.rationale;
    report.verdict = score.score < config.llm_threshold ? Verdict::drop : Verdict::keep;
  } catch (const std::exception& e) {
    spdlog::warn("quality judge failed: {}", e.what());
    report.verdict = Verdict::review;
  }
  return report;
}

std::vector<Value> tag_records(std::vector<Value> records, const QualityConfig& config, ModelPool* models) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    Value& record = records[i];
    const Value conversation = record.is_object() && record.contains(config.conversation_key)
                                   ? record.at(config.conversation_key)
                                   : Value();
    const std::string stream = fmt::format("quality/{}", record.is_object() ? record.value("__index", Value(i)).dump()
                                                                            : std::to_string(i));
    record["quality"] = tag_conversation(conversation, config, models, stream).to_value();
  }
  return records;
}

}  // namespace grasp
