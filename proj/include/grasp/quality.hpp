#pragma once

#include <optional>
#include <string>
#include <vector>

#include "grasp/backend.hpp"
#include "grasp/config.hpp"

namespace grasp {

enum class Verdict { keep, drop, review };

std::string_view to_string(Verdict verdict);

struct QualityReport {
  std::vector<std::string> heuristic_flags;  // sorted
  std::optional<double> llm_score;
  std::optional<std::string> llm_rationale;
  Verdict verdict = Verdict::keep;

  Value to_value() const;
};

/// `{role, content}` turns from a conversation value: a list of message
/// objects, or a bare string taken as one assistant turn.
std::vector<std::pair<std::string, std::string>> conversation_turns(const Value& conversation);

/// Highest 4-gram (or `n`-gram) frequency over the total n-gram count.
/// Texts with fewer than kMinNgrams n-grams score 0.
double repetition_ratio(std::string_view text, std::size_t n);
inline constexpr std::size_t kMinNgrams = 5;

const std::vector<std::string>& default_refusal_phrases();

/// Deterministic flags: too_short, too_long, high_repetition, empty_turn,
/// refusal_phrase, non_utf8_artifact.
std::vector<std::string> heuristic_stage(const Value& conversation, const QualityConfig& config);

struct JudgeScore {
  double score = 0;
  std::string rationale;
  bool clamped = false;
};

/// Scores with the rubric prompt through structured output; the score is
/// clamped to [1, 5]. Throws on backend or structured-output failure.
JudgeScore judge_stage(const Value& conversation, const QualityConfig& config, ModelClient& judge,
                       const std::string& stream = {});

/// Heuristics, then the judge (only when no flag fired and a judge model is
/// configured). Judge failures give verdict review.
QualityReport tag_conversation(const Value& conversation, const QualityConfig& config, ModelPool* models,
                               const std::string& stream = {});

/// Attaches a report under `quality` to each record. Nothing is filtered.
std::vector<Value> tag_records(std::vector<Value> records, const QualityConfig& config, ModelPool* models);

}  // namespace grasp
