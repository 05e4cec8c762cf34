#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "grasp/backend.hpp"
#include "grasp/config.hpp"
#include "grasp/graph.hpp"
#include "grasp/registry.hpp"
#include "grasp/runtime.hpp"

namespace grasp {

struct RunCounters {
  std::int64_t processed = 0;
  std::int64_t succeeded = 0;  // written
  std::int64_t failed = 0;
  std::int64_t skipped = 0;  // rejected by output mapping or schema

  Value to_value() const;
  static RunCounters from_value(const Value& value);
  bool operator==(const RunCounters&) const = default;
};

struct RunManifest {
  std::string run_id;
  std::string config_hash;
  std::uint64_t run_seed = 0;
  std::string started_at;
  bool oasst = false;
  bool quality = false;
  bool sequential = false;
  std::string output_file;  // absolute path of the append-only output
  RunCounters counters;     // cumulative over resumes

  Value to_value() const;
  static RunManifest from_value(const Value& value);
};

struct FailureEntry {
  RecordId record_id = 0;
  std::string node;
  std::string error_kind;
  std::string message;
  int attempts = 0;
  std::vector<std::string> reasons;  // schema rejections

  Value to_value() const;
};

struct Checkpoint {
  RunManifest manifest;
  std::set<RecordId> completed;  // reached END: written or skipped
  std::map<RecordId, FailureEntry> failed;
  std::map<std::string, std::uint64_t> sink_positions;

  Value to_value() const;
  static Checkpoint from_value(const Value& value);
};

/// Atomic replace: temp file, fsync, rename, directory fsync.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

/// Reads checkpoint.json from a run directory. Throws Error{resume}.
Checkpoint load_checkpoint(const std::filesystem::path& run_dir);

/// SHA-256 of the canonical pipeline config; independent of YAML key order.
std::string config_hash(const PipelineConfig& config);

struct Pipeline {
  const PipelineConfig& config;
  const CompiledGraph& graph;
  const Registry& registry;
  ModelPool& models;
};

/// Next node after `from` (a node name or START). Throws Error{routing} when
/// a router returns a label missing from path_map.
std::string route(const CompiledGraph& graph, const std::string& from, const RecordState& state);

/// Walks START -> END. Throws NodeError for node failures and
/// Error{routing | loop_budget_exceeded}.
void traverse(const CompiledGraph& graph, RecordState& state, RuntimeContext& context);

struct RecordOutcome {
  enum class Status { written, skipped, failed };
  Status status = Status::failed;
  std::optional<Value> record;
  RecordState state;
  FailureEntry failure;  // failed or skipped
};

struct ProcessOptions {
  std::uint64_t run_seed = 0;
  std::filesystem::path media_base;
  bool quality = false;
};

/// Traverses one record, maps its output and validates it.
RecordOutcome process_record(const Pipeline& pipeline, RecordState state, const ProcessOptions& options);

struct RunOptions {
  std::filesystem::path run_dir = "run";
  std::filesystem::path base_dir = ".";  // source files resolve here
  std::filesystem::path hf_mirror;
  int concurrency = 8;
  int checkpoint_every = 50;
  std::optional<std::int64_t> limit;
  bool sequential = false;
  std::uint64_t run_seed = 0;
  std::int64_t num_records = 1;  // data-less mode
  bool resume = false;
  bool retry_failed = false;
  bool force_resume = false;
  bool oasst = false;
  bool quality = false;
  const std::atomic<bool>* stop = nullptr;  // set to drain and checkpoint
};

struct RunReport {
  std::string run_id;
  RunCounters counters;        // this invocation
  RunCounters total_counters;  // cumulative
  std::filesystem::path output_path;
  std::filesystem::path run_dir;
  std::optional<std::filesystem::path> sink_path;
  double wall_ms = 0;
  bool resumed = false;
  bool interrupted = false;
  std::vector<std::string> warnings;

  Value to_value() const;
};

/// Runs the pipeline into `options.run_dir`: manifest.json, checkpoint.json,
/// output.jsonl (or the configured jsonl sink), failures.jsonl, traces.jsonl,
/// run.log. Throws Error{resume} for resume problems and Error{sink} after a
/// final checkpoint flush when output cannot be written.
RunReport run(const Pipeline& pipeline, const RunOptions& options);

/// Output lines of a run directory paired with their record ids and sorted
/// by id, for canonical comparison across runs.
std::vector<std::pair<RecordId, std::string>> written_outputs(const std::filesystem::path& run_dir);

}  // namespace grasp
