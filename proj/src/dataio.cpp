#include "grasp/dataio.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <deque>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "grasp/csv.hpp"
#include "grasp/parquet.hpp"

namespace fs = std::filesystem;

namespace grasp {

// ---------------------------------------------------------------------------
// media references
// ---------------------------------------------------------------------------

std::string guess_mime(std::string_view path) {
  static const std::map<std::string, std::string> kTypes = {
      {"png", "image/png"},   {"jpg", "image/jpeg"},       {"jpeg", "image/jpeg"}, {"gif", "image/gif"},
      {"webp", "image/webp"}, {"bmp", "image/bmp"},        {"tif", "image/tiff"},  {"tiff", "image/tiff"},
      {"svg", "image/svg+xml"}, {"wav", "audio/wav"},      {"mp3", "audio/mpeg"},  {"flac", "audio/flac"},
      {"ogg", "audio/ogg"},   {"m4a", "audio/mp4"},        {"aac", "audio/aac"},   {"opus", "audio/opus"},
      {"webm", "audio/webm"}, {"mp4", "video/mp4"},        {"txt", "text/plain"},  {"json", "application/json"},
      {"pdf", "application/pdf"},
  };
  std::string_view clean = path.substr(0, path.find_first_of("?#"));
  const auto slash = clean.find_last_of('/');
  const auto dot = clean.find_last_of('.');
  if (dot == std::string_view::npos || (slash != std::string_view::npos && dot < slash)) return {};
  const auto it = kTypes.find(to_lower(clean.substr(dot + 1)));
  return it == kTypes.end() ? std::string() : it->second;
}

bool is_media_ref(const Value& value) {
  if (!value.is_object() || value.empty()) return false;
  static const std::set<std::string> kKeys = {"path", "url", "bytes", "mime", "sampling_rate"};
  bool has_payload = false;
  for (const auto& [key, v] : value.items()) {
    if (!kKeys.count(key)) return false;
    if ((key == "path" || key == "url" || key == "bytes") && v.is_string()) has_payload = true;
  }
  return has_payload;
}

namespace {

bool is_remote(std::string_view s) {
  return starts_with(s, "http://") || starts_with(s, "https://") || starts_with(s, "data:");
}

Value normalize_media(Value ref, const fs::path& file_dir) {
  if (ref.contains("bytes") && ref.at("bytes").is_null()) ref.erase("bytes");
  if (ref.contains("path") && ref.at("path").is_string()) {
    const std::string p = ref.at("path").get<std::string>();
    if (is_remote(p)) {
      ref.erase("path");
      ref["url"] = p;
    } else if (!p.empty() && fs::path(p).is_relative() && !ref.contains("bytes")) {
      ref["path"] = (file_dir / p).lexically_normal().string();
    }
  } else if (ref.contains("path")) {
    ref.erase("path");
  }
  if (!ref.contains("mime")) {
    std::string mime;
    if (ref.contains("path")) mime = guess_mime(ref.at("path").get<std::string>());
    if (mime.empty() && ref.contains("url")) mime = guess_mime(ref.at("url").get<std::string>());
    if (!mime.empty()) ref["mime"] = mime;
  }
  return ref;
}

// ---------------------------------------------------------------------------
// per-format row cursors
// ---------------------------------------------------------------------------

/// Yields rows of one file. A row is either a record or a decode error message.
class RowCursor {
 public:
  virtual ~RowCursor() = default;
  /// false at end of file. On a bad row, `error` is set and `row` is untouched.
  virtual bool next(Record& row, std::string& error) = 0;
};

class JsonlCursor final : public RowCursor {
 public:
  explicit JsonlCursor(const fs::path& path) : in_(path) {
    if (!in_) throw Error(ErrorKind::source_not_found, "cannot open " + path.string());
  }
  bool next(Record& row, std::string& error) override {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (trim(line).empty()) continue;
      try {
        Value v = Value::parse(line);
        if (!v.is_object()) {
          error = fmt::format("line {}: expected a JSON object", line_no_);
        } else {
          row = std::move(v);
        }
      } catch (const std::exception& e) {
        error = fmt::format("line {}: {}", line_no_, e.what());
      }
      return true;
    }
    return false;
  }

 private:
  std::ifstream in_;
  std::size_t line_no_ = 0;
};

class VectorCursor final : public RowCursor {
 public:
  explicit VectorCursor(std::vector<Value> rows) : rows_(std::move(rows)) {}
  bool next(Record& row, std::string& error) override {
    if (pos_ >= rows_.size()) return false;
    Value& v = rows_[pos_++];
    if (v.is_object()) {
      row = std::move(v);
    } else {
      error = fmt::format("element {}: expected a JSON object", pos_ - 1);
    }
    return true;
  }

 private:
  std::vector<Value> rows_;
  std::size_t pos_ = 0;
};

std::vector<Value> load_json_array(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::source_not_found, "cannot open " + path.string());
  Value doc;
  try {
    doc = Value::parse(in);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::source_schema, path.string() + ": invalid JSON: " + e.what());
  }
  if (doc.is_object()) return {doc};
  if (!doc.is_array()) throw Error(ErrorKind::source_schema, path.string() + ": expected a JSON array of objects");
  return std::vector<Value>(doc.begin(), doc.end());
}

class CsvCursor final : public RowCursor {
 public:
  explicit CsvCursor(const fs::path& path) : in_(path, std::ios::binary), reader_(in_) {
    if (!in_) throw Error(ErrorKind::source_not_found, "cannot open " + path.string());
    auto header = reader_.next();
    if (!header) throw Error(ErrorKind::source_schema, path.string() + ": CSV header row required");
    if (!header->empty() && starts_with(header->front(), "\xEF\xBB\xBF")) header->front().erase(0, 3);
    std::set<std::string> seen;
    for (const auto& name : *header) {
      if (name.empty()) throw Error(ErrorKind::source_schema, path.string() + ": empty CSV column name");
      if (!seen.insert(name).second) {
        throw Error(ErrorKind::source_schema, path.string() + ": duplicate CSV column '" + name + "'");
      }
    }
    header_ = std::move(*header);
  }

  bool next(Record& row, std::string& error) override {
    std::optional<std::vector<std::string>> fields;
    try {
      fields = reader_.next();
    } catch (const std::exception& e) {
      error = e.what();
      done_ = true;
      return true;
    }
    if (done_ || !fields) return false;
    if (fields->size() == 1 && fields->front().empty() && header_.size() > 1) {
      return next(row, error);  // blank line
    }
    if (fields->size() != header_.size()) {
      error = fmt::format("line {}: expected {} fields, found {}", reader_.line(), header_.size(), fields->size());
      return true;
    }
    row = Value::object();
    for (std::size_t k = 0; k < header_.size(); ++k) row[header_[k]] = std::move((*fields)[k]);
    return true;
  }

 private:
  std::ifstream in_;
  csv::Reader reader_;
  std::vector<std::string> header_;
  bool done_ = false;
};

std::unique_ptr<RowCursor> open_cursor(const fs::path& path, FileFormat format) {
  if (!fs::exists(path)) throw Error(ErrorKind::source_not_found, "source file not found: " + path.string());
  switch (format) {
    case FileFormat::jsonl: return std::make_unique<JsonlCursor>(path);
    case FileFormat::json: return std::make_unique<VectorCursor>(load_json_array(path));
    case FileFormat::csv: return std::make_unique<CsvCursor>(path);
    case FileFormat::parquet: {
      try {
        return std::make_unique<VectorCursor>(parquet::read_file(path));
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::parquet) throw Error(ErrorKind::source_schema, path.string() + ": " + e.what());
        throw;
      }
    }
  }
  throw Error(ErrorKind::source_schema, "unsupported format");
}

// ---------------------------------------------------------------------------
// streams
// ---------------------------------------------------------------------------

class SourceStream final : public RecordStream {
 public:
  explicit SourceStream(std::vector<std::pair<fs::path, FileFormat>> files) : files_(std::move(files)) {}

  std::optional<Record> next() override {
    while (true) {
      if (!cursor_) {
        if (file_ >= files_.size()) return std::nullopt;
        cursor_ = open_cursor(files_[file_].first, files_[file_].second);
        dir_ = files_[file_].first.parent_path();
      }
      Record row;
      std::string error;
      if (!cursor_->next(row, error)) {
        cursor_.reset();
        ++file_;
        continue;
      }
      const std::int64_t ordinal = next_ordinal_++;
      if (!error.empty()) {
        spdlog::warn("{}: row {} skipped: {}", files_[file_].first.string(), ordinal, error);
        errors_.push_back({ordinal, error});
        continue;
      }
      if (row.contains(kIndexField)) {
        throw Error(ErrorKind::source_schema,
                    files_[file_].first.string() + ": column '__index' is reserved and must not appear in sources");
      }
      for (auto& [key, value] : row.items()) {
        if (key.empty()) throw Error(ErrorKind::source_schema, files_[file_].first.string() + ": empty field name");
        if (is_media_ref(value)) value = normalize_media(value, dir_);
      }
      row[std::string(kIndexField)] = ordinal;
      return row;
    }
  }

  const std::vector<RowDecodeError>& decode_errors() const override { return errors_; }

 private:
  std::vector<std::pair<fs::path, FileFormat>> files_;
  std::size_t file_ = 0;
  std::unique_ptr<RowCursor> cursor_;
  fs::path dir_;
  std::int64_t next_ordinal_ = 0;
  std::vector<RowDecodeError> errors_;
};

class VectorStream final : public RecordStream {
 public:
  explicit VectorStream(std::vector<Record> records) : records_(std::move(records)) {}
  std::optional<Record> next() override {
    if (pos_ >= records_.size()) return std::nullopt;
    return std::move(records_[pos_++]);
  }

 private:
  std::vector<Record> records_;
  std::size_t pos_ = 0;
};

/// Base for transforms wrapping another stream.
class WrappedStream : public RecordStream {
 public:
  explicit WrappedStream(StreamPtr input) : input_(std::move(input)) {}
  const std::vector<RowDecodeError>& decode_errors() const override { return input_->decode_errors(); }

 protected:
  StreamPtr input_;
};

class RenameStream final : public WrappedStream {
 public:
  RenameStream(StreamPtr input, RenameParams params) : WrappedStream(std::move(input)), params_(std::move(params)) {}
  std::optional<Record> next() override {
    auto record = input_->next();
    if (!record) return std::nullopt;
    std::vector<std::string> warnings;
    Record out = apply_rename(std::move(*record), params_, &warnings);
    for (const auto& w : warnings) spdlog::warn("rename_fields: {}", w);
    return out;
  }

 private:
  RenameParams params_;
};

Record merge_window(const std::vector<Record>& window, const CombineParams& params) {
  std::vector<std::string> fields;
  std::set<std::string> seen;
  for (const auto& record : window) {
    for (const auto& [key, value] : record.items()) {
      if (seen.insert(key).second) fields.push_back(key);
    }
  }
  Record out = Value::object();
  for (const auto& field : fields) {
    FieldStrategy strategy;
    if (field != kIndexField) {
      for (const auto& [name, s] : params.field_strategies) {
        if (name == field) strategy = s;
      }
    }
    switch (strategy.kind) {
      case FieldStrategy::Kind::first:
        for (const auto& record : window) {
          if (record.contains(field)) {
            out[field] = record.at(field);
            break;
          }
        }
        break;
      case FieldStrategy::Kind::last:
        for (auto it = window.rbegin(); it != window.rend(); ++it) {
          if (it->contains(field)) {
            out[field] = it->at(field);
            break;
          }
        }
        break;
      case FieldStrategy::Kind::join: {
        std::string joined;
        bool any = false;
        for (const auto& record : window) {
          if (!record.contains(field)) continue;
          if (any) joined += strategy.delimiter;
          joined += display(record.at(field));
          any = true;
        }
        out[field] = joined;
        break;
      }
    }
  }
  return out;
}

class CombineStream final : public WrappedStream {
 public:
  CombineStream(StreamPtr input, CombineParams params) : WrappedStream(std::move(input)), params_(std::move(params)) {}

  std::optional<Record> next() override {
    const auto n = static_cast<std::size_t>(params_.num_records);
    while (pending_skip_ > 0) {
      if (!input_->next()) return std::nullopt;
      --pending_skip_;
    }
    while (window_.size() < n) {
      auto record = input_->next();
      if (!record) return std::nullopt;
      window_.push_back(std::move(*record));
    }
    Record out = merge_window(std::vector<Record>(window_.begin(), window_.end()), params_);
    const auto shift = static_cast<std::size_t>(params_.shift);
    const std::size_t drop = std::min(shift, window_.size());
    window_.erase(window_.begin(), window_.begin() + static_cast<std::ptrdiff_t>(drop));
    pending_skip_ = shift - drop;
    return out;
  }

 private:
  CombineParams params_;
  std::deque<Record> window_;
  std::size_t pending_skip_ = 0;
};

class SkipStream final : public WrappedStream {
 public:
  SkipStream(StreamPtr input, int from_start, int from_end)
      : WrappedStream(std::move(input)),
        from_start_(static_cast<std::size_t>(std::max(0, from_start))),
        from_end_(static_cast<std::size_t>(std::max(0, from_end))) {}

  std::optional<Record> next() override {
    while (from_start_ > 0) {
      if (!input_->next()) return std::nullopt;
      --from_start_;
    }
    while (buffer_.size() <= from_end_) {
      auto record = input_->next();
      if (!record) return std::nullopt;
      buffer_.push_back(std::move(*record));
    }
    Record out = std::move(buffer_.front());
    buffer_.pop_front();
    return out;
  }

 private:
  std::size_t from_start_;
  std::size_t from_end_;
  std::deque<Record> buffer_;
};

fs::path resolve_mirror(const SourceOptions& options) {
  if (!options.hf_mirror.empty()) return options.hf_mirror;
  if (const char* env = std::getenv("GRASP_HF_MIRROR"); env && *env) return env;
  return options.base_dir / "hf_mirror";
}

std::string sanitize_repo(std::string_view repo) {
  std::string out;
  for (char c : repo) {
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-' || c == '/' ? c : '_');
  }
  return out;
}

}  // namespace

std::vector<std::pair<fs::path, FileFormat>> resolve_source_files(const SourceSpec& spec, const SourceOptions& options) {
  std::vector<std::pair<fs::path, FileFormat>> files;
  if (spec.kind == SourceKind::none) return files;
  if (spec.kind == SourceKind::disk) {
    fs::path path = spec.file_path;
    if (path.is_relative()) path = options.base_dir / path;
    if (!fs::exists(path)) throw Error(ErrorKind::source_not_found, "source file not found: " + path.string());
    files.emplace_back(path, spec.file_format.value_or(FileFormat::jsonl));
    return files;
  }
  const fs::path mirror = resolve_mirror(options);
  fs::path dir = mirror / spec.repo_id;
  if (!spec.config_name.empty()) dir /= spec.config_name;
  const std::vector<std::string> splits = spec.splits.empty() ? std::vector<std::string>{"train"} : spec.splits;
  for (const auto& split : splits) {
    std::vector<FileFormat> candidates = {FileFormat::jsonl, FileFormat::json, FileFormat::parquet, FileFormat::csv};
    if (spec.file_format) candidates = {*spec.file_format};
    bool found = false;
    for (FileFormat format : candidates) {
      const fs::path path = dir / (split + "." + std::string(to_string(format)));
      if (fs::exists(path)) {
        files.emplace_back(path, format);
        found = true;
        break;
      }
    }
    if (!found) {
      throw Error(ErrorKind::source_not_found,
                  fmt::format("hf source {} split '{}' not found in mirror {}", spec.repo_id, split, dir.string()));
    }
  }
  return files;
}

StreamPtr open_source(const SourceSpec& spec, const SourceOptions& options) {
  return std::make_unique<SourceStream>(resolve_source_files(spec, options));
}

StreamPtr make_vector_stream(std::vector<Record> records) {
  return std::make_unique<VectorStream>(std::move(records));
}

std::vector<Record> drain(RecordStream& stream) {
  std::vector<Record> out;
  while (auto record = stream.next()) out.push_back(std::move(*record));
  return out;
}

Record apply_rename(Record record, const RenameParams& params, std::vector<std::string>* warnings) {
  auto warn = [&](std::string message) {
    if (warnings) warnings->push_back(std::move(message));
  };
  for (const auto& [from, to] : params.mapping) {
    if (!record.contains(from)) {
      warn(fmt::format("field '{}' not present; rename to '{}' skipped", from, to));
      continue;
    }
    if (from == to) continue;
    const bool target_exists = record.contains(to);
    if (target_exists && !params.overwrite) {
      warn(fmt::format("field '{}' already exists; rename of '{}' skipped (overwrite=false)", to, from));
      continue;
    }
    Value moved = record.at(from);
    Record out = Value::object();
    for (auto& [key, value] : record.items()) {
      if (key == from) {
        if (!target_exists) out[to] = moved;
      } else if (key == to) {
        out[to] = moved;
      } else {
        out[key] = std::move(value);
      }
    }
    record = std::move(out);
  }
  return record;
}

StreamPtr apply_combine(StreamPtr input, const CombineParams& params) {
  if (params.num_records < 2 || params.shift < 1) {
    throw Error(ErrorKind::config, "combine_records requires num_records >= 2 and shift >= 1");
  }
  return std::make_unique<CombineStream>(std::move(input), params);
}

StreamPtr apply_skip(StreamPtr input, int from_start, int from_end) {
  return std::make_unique<SkipStream>(std::move(input), from_start, from_end);
}

StreamPtr apply_transforms(StreamPtr input, const std::vector<TransformSpec>& transforms) {
  for (const auto& transform : transforms) {
    if (const auto* rename = std::get_if<RenameParams>(&transform)) {
      input = std::make_unique<RenameStream>(std::move(input), *rename);
    } else if (const auto* combine = std::get_if<CombineParams>(&transform)) {
      input = apply_combine(std::move(input), *combine);
    } else if (const auto* skip = std::get_if<SkipParams>(&transform)) {
      input = apply_skip(std::move(input), skip->from_start, skip->from_end);
    }
  }
  return input;
}

// ---------------------------------------------------------------------------
// sinks
// ---------------------------------------------------------------------------

fs::path sink_path(const SinkSpec& spec, const fs::path& base_dir) {
  if (spec.kind == SourceKind::hf) {
    fs::path path = base_dir / "hub" / sanitize_repo(spec.repo_id);
    if (!spec.config_name.empty()) path /= sanitize_repo(spec.config_name);
    const std::string split = spec.split.empty() ? "train" : spec.split;
    return path / (split + "." + std::string(to_string(spec.file_format.value_or(FileFormat::jsonl))));
  }
  fs::path path = spec.file_path;
  return path.is_relative() ? base_dir / path : path;
}

SinkReport write_sink(const SinkSpec& spec, const fs::path& path, const std::vector<Record>& records) {
  SinkReport report;
  report.path = path;
  if (spec.push_to_hub) report.warnings.push_back("hub push disabled; records written locally to " + path.string());
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const FileFormat format = spec.file_format.value_or(FileFormat::jsonl);
  const fs::path tmp = path.string() + ".tmp";
  try {
    if (format == FileFormat::parquet) {
      parquet::write_file(tmp, records);
    } else {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorKind::sink, "cannot write " + tmp.string());
      if (format == FileFormat::jsonl) {
        for (const auto& r : records) out << r.dump() << '\n';
      } else if (format == FileFormat::json) {
        Value array = Value::array();
        for (const auto& r : records) array.push_back(r);
        out << array.dump(2) << '\n';
      } else {
        std::vector<std::string> columns;
        std::set<std::string> seen;
        for (const auto& r : records) {
          for (const auto& [key, value] : r.items()) {
            if (seen.insert(key).second) columns.push_back(key);
          }
        }
        for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << csv::escape(columns[c]);
        out << "\r\n";
        for (const auto& r : records) {
          for (std::size_t c = 0; c < columns.size(); ++c) {
            if (c) out << ',';
            if (r.contains(columns[c]) && !r.at(columns[c]).is_null()) out << csv::escape(display(r.at(columns[c])));
          }
          out << "\r\n";
        }
      }
      out.flush();
      if (!out) throw Error(ErrorKind::sink, "write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorKind::sink, e.what());
  }
  report.written = records.size();
  for (const auto& w : report.warnings) spdlog::warn("{}", w);
  return report;
}

std::vector<Record> read_records(const fs::path& path, FileFormat format) {
  auto cursor = open_cursor(path, format);
  std::vector<Record> out;
  Record row;
  std::string error;
  while (cursor->next(row, error)) {
    if (!error.empty()) throw Error(ErrorKind::row_decode, path.string() + ": " + error);
    out.push_back(std::move(row));
  }
  return out;
}

JsonlAppender::JsonlAppender(const fs::path& path, std::uint64_t offset) : path_(path), offset_(offset) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error(ErrorKind::sink, fmt::format("cannot open {}: {}", path.string(), std::strerror(errno)));
  if (::ftruncate(fd_, static_cast<off_t>(offset)) != 0 || ::lseek(fd_, static_cast<off_t>(offset), SEEK_SET) < 0) {
    const int err = errno;
    ::close(fd_);
    fd_ = -1;
    throw Error(ErrorKind::sink, fmt::format("cannot position {}: {}", path.string(), std::strerror(err)));
  }
}

JsonlAppender::~JsonlAppender() {
  if (fd_ >= 0) ::close(fd_);
}

void JsonlAppender::append(const Value& record) {
  const std::string line = record.dump() + "\n";
  std::size_t done = 0;
  while (done < line.size()) {
    const ssize_t n = ::write(fd_, line.data() + done, line.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorKind::sink, fmt::format("write to {} failed: {}", path_.string(), std::strerror(errno)));
    }
    done += static_cast<std::size_t>(n);
  }
  offset_ += line.size();
}

std::uint64_t JsonlAppender::sync() {
  if (::fsync(fd_) != 0) {
    throw Error(ErrorKind::sink, fmt::format("fsync of {} failed: {}", path_.string(), std::strerror(errno)));
  }
  return offset_;
}

}  // namespace grasp
