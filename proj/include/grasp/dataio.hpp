#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "grasp/common.hpp"
#include "grasp/config.hpp"

namespace grasp {

/// One row: an ordered JSON object. Sources add the reserved `__index` ordinal.
using Record = Value;

inline constexpr std::string_view kIndexField = "__index";

struct RowDecodeError {
  std::int64_t ordinal = 0;
  std::string message;
};

/// Pull-based record stream. Consumed by exactly one reader.
class RecordStream {
 public:
  virtual ~RecordStream() = default;
  virtual std::optional<Record> next() = 0;
  /// Rows the underlying source skipped because they failed to decode.
  virtual const std::vector<RowDecodeError>& decode_errors() const { return no_errors_; }

 private:
  std::vector<RowDecodeError> no_errors_;
};

using StreamPtr = std::unique_ptr<RecordStream>;

struct SourceOptions {
  std::filesystem::path base_dir = ".";  // relative file paths resolve here
  std::filesystem::path hf_mirror;        // empty: $GRASP_HF_MIRROR or <base_dir>/hf_mirror
};

/// Files an hf or disk source reads, in order. Throws Error{source_not_found}.
std::vector<std::pair<std::filesystem::path, FileFormat>> resolve_source_files(const SourceSpec& spec,
                                                                               const SourceOptions& options);

/// Opens a source. `__index` starts at 0 and counts every row, including rows
/// that fail to decode. kind=none yields an empty stream.
StreamPtr open_source(const SourceSpec& spec, const SourceOptions& options);

StreamPtr make_vector_stream(std::vector<Record> records);
std::vector<Record> drain(RecordStream& stream);

/// Renames fields; see RenameParams. Problems are appended to `warnings`.
Record apply_rename(Record record, const RenameParams& params, std::vector<std::string>* warnings = nullptr);

/// Sliding windows of `num_records` advancing by `shift`; partial windows are dropped.
StreamPtr apply_combine(StreamPtr input, const CombineParams& params);

/// Drops leading and trailing records, buffering only `from_end` records.
StreamPtr apply_skip(StreamPtr input, int from_start, int from_end);

/// Applies transforms in declaration order.
StreamPtr apply_transforms(StreamPtr input, const std::vector<TransformSpec>& transforms);

/// MIME type from a file extension or URL path; empty when unknown.
std::string guess_mime(std::string_view path);

/// True for `{path|url|bytes, mime?}` objects produced by the loaders.
bool is_media_ref(const Value& value);

struct SinkReport {
  std::size_t written = 0;
  std::size_t skipped = 0;
  std::filesystem::path path;
  std::vector<std::string> warnings;
};

/// Where a sink's file lives. Relative paths resolve against `base_dir`; hf
/// sinks are written locally under `<base_dir>/hub/<repo_id>/<config>/<split>.jsonl`.
std::filesystem::path sink_path(const SinkSpec& spec, const std::filesystem::path& base_dir);

/// Writes all records to the sink's file in its format, replacing the file.
SinkReport write_sink(const SinkSpec& spec, const std::filesystem::path& path, const std::vector<Record>& records);

/// Reads a whole file of the given format (no `__index` injection).
std::vector<Record> read_records(const std::filesystem::path& path, FileFormat format);

/// Append-only JSONL writer that tracks its byte offset for checkpointing.
class JsonlAppender {
 public:
  /// Opens `path`, truncating it to `offset` bytes (creating it when missing).
  JsonlAppender(const std::filesystem::path& path, std::uint64_t offset);
  ~JsonlAppender();
  JsonlAppender(const JsonlAppender&) = delete;
  JsonlAppender& operator=(const JsonlAppender&) = delete;

  void append(const Value& record);
  /// Flushes and fsyncs; returns the durable offset.
  std::uint64_t sync();
  std::uint64_t offset() const { return offset_; }

 private:
  int fd_ = -1;
  std::filesystem::path path_;
  std::uint64_t offset_ = 0;
};

}  // namespace grasp
