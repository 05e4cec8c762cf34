#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "grasp/common.hpp"

namespace grasp {

// ---------------------------------------------------------------------------
// data_config
// ---------------------------------------------------------------------------

enum class SourceKind { none, disk, hf };
enum class FileFormat { json, jsonl, csv, parquet };

std::string_view to_string(SourceKind kind);
std::string_view to_string(FileFormat format);
std::optional<FileFormat> parse_file_format(std::string_view text);

struct SourceSpec {
  SourceKind kind = SourceKind::none;
  std::string file_path;
  std::optional<FileFormat> file_format;
  std::string repo_id;
  std::string config_name;
  std::vector<std::string> splits;
  bool streaming = false;

  bool operator==(const SourceSpec&) const = default;
};

struct SinkSpec {
  SourceKind kind = SourceKind::disk;
  std::string file_path;
  std::optional<FileFormat> file_format;
  std::string repo_id;
  std::string config_name;
  std::string split;
  // Hub flags are accepted for compatibility and ignored.
  bool push_to_hub = false;
  bool private_repo = false;
  bool has_token = false;

  bool operator==(const SinkSpec&) const = default;
};

struct RenameParams {
  std::vector<std::pair<std::string, std::string>> mapping;
  bool overwrite = false;

  bool operator==(const RenameParams&) const = default;
};

struct FieldStrategy {
  enum class Kind { join, first, last };
  Kind kind = Kind::first;
  std::string delimiter;  // join only

  bool operator==(const FieldStrategy&) const = default;
};

struct CombineParams {
  int num_records = 2;
  int shift = 1;
  std::vector<std::pair<std::string, FieldStrategy>> field_strategies;

  bool operator==(const CombineParams&) const = default;
};

struct SkipParams {
  int from_start = 0;
  int from_end = 0;

  bool operator==(const SkipParams&) const = default;
};

using TransformSpec = std::variant<RenameParams, CombineParams, SkipParams>;

struct DataConfig {
  std::optional<SourceSpec> source;
  std::optional<SinkSpec> sink;
  std::vector<TransformSpec> transforms;

  bool operator==(const DataConfig&) const = default;
};

// ---------------------------------------------------------------------------
// graph_config
// ---------------------------------------------------------------------------

enum class ChatMode { singleturn, multiturn };

enum class NodeType { llm, multi_llm, weighted_sampler, lambda, agent, subgraph };

std::string_view to_string(NodeType type);
std::optional<NodeType> parse_node_type(std::string_view text);

struct PromptPart {
  enum class Kind { text, image_url, audio_url };
  Kind kind = Kind::text;
  std::string payload;

  bool operator==(const PromptPart&) const = default;
};

std::string_view to_string(PromptPart::Kind kind);

struct PromptMessage {
  std::string role;  // system | user | assistant
  std::vector<PromptPart> parts;
  bool typed_parts = false;  // written as a list of typed parts

  bool operator==(const PromptMessage&) const = default;
};

struct ModelSpec {
  std::string name;
  Value parameters = Value::object();

  bool operator==(const ModelSpec&) const = default;
};

struct FieldDef {
  std::string name;
  std::string type;
  std::string description;

  bool operator==(const FieldDef&) const = default;
};

struct StructuredOutputSpec {
  bool enabled = true;
  std::string schema_class;     // dotted registry name, or
  std::vector<FieldDef> fields; // inline field map

  bool operator==(const StructuredOutputSpec&) const = default;
};

struct SamplerChoice {
  Value value;
  double weight = 1.0;

  bool operator==(const SamplerChoice&) const = default;
};

struct NodeSpec {
  NodeType type = NodeType::llm;
  std::vector<PromptMessage> prompt;
  std::optional<ModelSpec> model;
  std::vector<ModelSpec> models;
  std::vector<std::string> output_keys;  // empty: executor default
  std::string lambda;
  std::vector<std::string> tools;
  std::map<int, std::string> inject_system_messages;
  std::optional<StructuredOutputSpec> structured_output;
  std::string pre_process;
  std::string post_process;
  std::vector<SamplerChoice> sampler;
  std::string subgraph;
  int max_turns = 8;

  bool operator==(const NodeSpec&) const = default;
};

struct GraphSettings {
  ChatMode chat_conversation = ChatMode::singleturn;
  int chat_history_window_size = 5;
  std::optional<int> loop_budget;
  Value extra = Value::object();  // other scalar settings, usable as placeholders

  bool operator==(const GraphSettings&) const = default;
};

struct EdgeSpec {
  std::string from;
  std::string to;
  std::string condition;
  std::vector<std::pair<std::string, std::string>> path_map;

  bool conditional() const { return !condition.empty(); }
  bool operator==(const EdgeSpec&) const = default;
};

inline constexpr std::string_view kStart = "START";
inline constexpr std::string_view kEnd = "END";

struct GraphConfig {
  GraphSettings settings;
  std::vector<std::pair<std::string, NodeSpec>> nodes;  // declaration order
  std::vector<EdgeSpec> edges;

  const NodeSpec* find_node(std::string_view name) const;
  bool operator==(const GraphConfig&) const = default;
};

// ---------------------------------------------------------------------------
// output_config / schema_config / post-processing blocks
// ---------------------------------------------------------------------------

struct OutputField {
  enum class Kind { from, value, transform };
  std::string name;
  Kind kind = Kind::from;
  std::string from;
  Value value;
  std::string transform;

  bool operator==(const OutputField&) const = default;
};

struct OutputConfig {
  std::vector<OutputField> output_map;
  std::string generator;

  bool operator==(const OutputConfig&) const = default;
};

struct SchemaRule {
  enum class Kind { is_greater_than, is_less_than, regex, non_empty };
  Kind kind;
  Value operand;

  bool operator==(const SchemaRule&) const = default;
};

std::string_view to_string(SchemaRule::Kind kind);

struct SchemaField {
  std::string name;
  std::string type;
  std::vector<SchemaRule> rules;

  bool operator==(const SchemaField&) const = default;
};

struct SchemaConfig {
  std::string schema_class;  // dotted validator name, or
  std::vector<SchemaField> fields;

  bool operator==(const SchemaConfig&) const = default;
};

struct QualityConfig {
  std::string conversation_key = "conversation";
  std::size_t min_chars = 8;
  std::size_t max_chars = 16384;
  std::size_t ngram = 4;
  double repetition_threshold = 0.3;
  std::vector<std::string> refusal_phrases;  // empty: built-in list
  std::string judge_model;                   // empty: judge stage disabled
  double llm_threshold = 3.0;

  bool operator==(const QualityConfig&) const = default;
};

struct OasstConfig {
  std::string conversation_key = "conversation";
  std::string quality_key = "llm_score";
  std::string lang;

  bool operator==(const OasstConfig&) const = default;
};

// ---------------------------------------------------------------------------
// PipelineConfig
// ---------------------------------------------------------------------------

struct PipelineConfig {
  std::optional<DataConfig> data;  // absent: data-less mode
  GraphConfig graph;
  OutputConfig output;
  std::optional<SchemaConfig> schema;
  std::optional<QualityConfig> quality;
  std::optional<OasstConfig> oasst;

  /// The parsed document as a value tree; `$`-paths resolve against it.
  Value document = Value::object();

  bool data_less() const { return !data || !data->source || data->source->kind == SourceKind::none; }

  /// Structural equality over the typed blocks; `document` is ignored.
  bool operator==(const PipelineConfig& other) const;
};

struct ParseResult {
  std::optional<PipelineConfig> config;  // set iff diagnostics hold no error
  std::vector<Diagnostic> diagnostics;

  bool ok() const { return config.has_value(); }
};

/// Parses and validates a YAML pipeline. Never throws; every problem is
/// reported as a diagnostic carrying its YAML path.
ParseResult parse_pipeline_config(std::string_view yaml_text);

struct GraphParseResult {
  std::optional<GraphConfig> graph;
  std::vector<Diagnostic> diagnostics;
};

/// Parses a standalone graph file (a subgraph recipe): either a document with
/// a `graph_config` block or one with top-level `nodes`/`edges`.
GraphParseResult parse_graph_file(std::string_view yaml_text);

/// Serializes to YAML that parses back to an equal PipelineConfig.
std::string serialize_pipeline_config(const PipelineConfig& config);

/// Typed config as a value tree with the same keys the YAML uses.
Value to_value(const PipelineConfig& config);
Value to_value(const GraphConfig& graph);

/// Resolves `$a.b.c` against the config document and returns the scalar.
/// Throws Error{path_not_found} naming the first missing segment, or
/// Error{non_scalar_path}.
Value resolve_config_path(const PipelineConfig& config, std::string_view path);

/// Substitutes every embedded `$block.seg...` path in `text`. A string that is
/// exactly one path yields the typed scalar.
Value substitute_config_paths(const PipelineConfig& config, const std::string& text);

/// Checks that every rule is compatible with its field's declared type.
std::vector<Diagnostic> validate_schema_rules(const SchemaConfig& schema);

/// YAML text to a value tree. Scalars are typed the way YAML 1.2 core schema
/// types plain scalars; quoted scalars stay strings. Throws Error{config} with
/// line/column on syntax errors.
Value yaml_to_value(std::string_view yaml_text);

/// `{name}` placeholders in a template, with `{{`/`}}` as literal braces.
std::vector<std::string> template_placeholders(std::string_view text);

}  // namespace grasp
