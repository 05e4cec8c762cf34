#include "grasp/engine.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "grasp/dataio.hpp"
#include "grasp/oasst.hpp"
#include "grasp/output.hpp"
#include "grasp/quality.hpp"

namespace fs = std::filesystem;

namespace grasp {

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

Value RunCounters::to_value() const {
  return {{"processed", processed}, {"succeeded", succeeded}, {"failed", failed}, {"skipped", skipped}};
}

RunCounters RunCounters::from_value(const Value& v) {
  RunCounters c;
  c.processed = v.value("processed", std::int64_t{0});
  c.succeeded = v.value("succeeded", std::int64_t{0});
  c.failed = v.value("failed", std::int64_t{0});
  c.skipped = v.value("skipped", std::int64_t{0});
  return c;
}

namespace {

RunCounters operator+(const RunCounters& a, const RunCounters& b) {
  return {a.processed + b.processed, a.succeeded + b.succeeded, a.failed + b.failed, a.skipped + b.skipped};
}

}  // namespace

Value RunManifest::to_value() const {
  return {{"run_id", run_id},
          {"config_hash", config_hash},
          {"run_seed", run_seed},
          {"started_at", started_at},
          {"flags", {{"oasst", oasst}, {"quality", quality}, {"sequential", sequential}}},
          {"output_file", output_file},
          {"counters", counters.to_value()}};
}

RunManifest RunManifest::from_value(const Value& v) {
  RunManifest m;
  m.run_id = v.at("run_id").get<std::string>();
  m.config_hash = v.at("config_hash").get<std::string>();
  m.run_seed = v.at("run_seed").get<std::uint64_t>();
  m.started_at = v.value("started_at", "");
  const Value flags = v.value("flags", Value::object());
  m.oasst = flags.value("oasst", false);
  m.quality = flags.value("quality", false);
  m.sequential = flags.value("sequential", false);
  m.output_file = v.at("output_file").get<std::string>();
  m.counters = RunCounters::from_value(v.value("counters", Value::object()));
  return m;
}

Value FailureEntry::to_value() const {
  Value out = {{"record_id", record_id},
               {"node", node},
               {"error_kind", error_kind},
               {"message", message},
               {"attempts", attempts}};
  if (!reasons.empty()) out["reasons"] = reasons;
  return out;
}

namespace {

FailureEntry failure_from_value(const Value& v) {
  FailureEntry f;
  f.record_id = v.at("record_id").get<RecordId>();
  f.node = v.value("node", "");
  f.error_kind = v.value("error_kind", "");
  f.message = v.value("message", "");
  f.attempts = v.value("attempts", 0);
  if (v.contains("reasons")) f.reasons = v.at("reasons").get<std::vector<std::string>>();
  return f;
}

}  // namespace

Value Checkpoint::to_value() const {
  Value failures = Value::array();
  for (const auto& [id, f] : failed) failures.push_back(f.to_value());
  Value positions = Value::object();
  for (const auto& [name, offset] : sink_positions) positions[name] = offset;
  return {{"manifest", manifest.to_value()},
          {"completed", Value(std::vector<RecordId>(completed.begin(), completed.end()))},
          {"failed", std::move(failures)},
          {"sink_positions", std::move(positions)}};
}

Checkpoint Checkpoint::from_value(const Value& v) {
  Checkpoint c;
  c.manifest = RunManifest::from_value(v.at("manifest"));
  for (const auto& id : v.at("completed")) c.completed.insert(id.get<RecordId>());
  for (const auto& f : v.at("failed")) {
    FailureEntry entry = failure_from_value(f);
    c.failed[entry.record_id] = std::move(entry);
  }
  for (const auto& [name, offset] : v.at("sink_positions").items()) c.sink_positions[name] = offset.get<std::uint64_t>();
  return c;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorKind::sink, "cannot write " + tmp.string());
  std::size_t done = 0;
  while (done < content.size()) {
    const ssize_t n = ::write(fd, content.data() + done, content.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw Error(ErrorKind::sink, "write failed for " + tmp.string());
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw Error(ErrorKind::sink, "fsync failed for " + tmp.string());
  }
  ::close(fd);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::sink, fmt::format("cannot replace {}: {}", path.string(), ec.message()));
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  if (const int dfd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC); dfd >= 0) {
    ::fsync(dfd);
    ::close(dfd);
  }
}

Checkpoint load_checkpoint(const fs::path& run_dir) {
  const fs::path path = run_dir / "checkpoint.json";
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::resume, "no checkpoint at " + path.string());
  try {
    return Checkpoint::from_value(Value::parse(in));
  } catch (const std::exception& e) {
    throw Error(ErrorKind::resume, fmt::format("corrupt checkpoint {}: {}", path.string(), e.what()));
  }
}

std::string config_hash(const PipelineConfig& config) { return sha256_hex(canonical_dump(to_value(config))); }

// ---------------------------------------------------------------------------
// per record
// ---------------------------------------------------------------------------

std::string route(const CompiledGraph& graph, const std::string& from, const RecordState& state) {
  const auto it = graph.transitions.find(from);
  if (it == graph.transitions.end()) throw Error(ErrorKind::routing, "no edge leaves " + from);
  const Transition& t = it->second;
  if (!t.conditional()) return t.to;
  std::string label;
  try {
    label = (*t.router)(state.values);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::routing, fmt::format("router {} failed: {}", t.condition, e.what()));
  }
  const std::string* target = t.target(label);
  if (!target) throw Error(ErrorKind::routing, fmt::format("router {} returned unknown label '{}'", t.condition, label));
  return *target;
}

void traverse(const CompiledGraph& graph, RecordState& state, RuntimeContext& context) {
  std::string current(kStart);
  int steps = 0;
  while (true) {
    try {
      current = route(graph, current, state);
    } catch (const Error& e) {
      throw NodeError(e.kind(), current, 0, e.what());
    }
    if (current == kEnd) return;
    const BoundNode* node = graph.node(current);
    if (!node) throw NodeError(ErrorKind::routing, current, 0, "unknown node " + current);
    if (++steps > graph.loop_budget) {
      throw NodeError(ErrorKind::loop_budget_exceeded, current, 0,
                      fmt::format("loop budget {} exhausted before node {}", graph.loop_budget, current));
    }
    execute_node(*node, state, context);
  }
}

RecordOutcome process_record(const Pipeline& pipeline, RecordState state, const ProcessOptions& options) {
  RecordOutcome outcome;
  const RecordId id = state.record_id;
  outcome.failure.record_id = id;
  RuntimeContext context{pipeline.graph, pipeline.models, options.run_seed, options.media_base};
  try {
    traverse(pipeline.graph, state, context);
  } catch (const NodeError& e) {
    outcome.failure.node = e.node();
    outcome.failure.error_kind = std::string(to_string(e.kind()));
    outcome.failure.message = e.what();
    outcome.failure.attempts = e.attempts();
    outcome.state = std::move(state);
    return outcome;
  } catch (const std::exception& e) {
    outcome.failure.error_kind = std::string(to_string(ErrorKind::node_failure));
    outcome.failure.message = e.what();
    outcome.state = std::move(state);
    return outcome;
  }
  int attempts = 0;
  for (const auto& t : state.trace) attempts += t.attempt;
  outcome.failure.attempts = attempts;

  BuildResult built = build_record(state, pipeline.config.output, pipeline.config, pipeline.registry);
  Validation validation;
  if (built.record) {
    validation = validate_record(*built.record, pipeline.config.schema, pipeline.registry);
  } else {
    validation.valid = false;
    validation.reasons = built.errors;
  }
  if (!validation.valid) {
    outcome.status = RecordOutcome::Status::skipped;
    outcome.failure.node = built.record ? "schema" : "output";
    outcome.failure.error_kind = "schema";
    outcome.failure.reasons = validation.reasons;
    std::string joined;
    for (const auto& r : validation.reasons) joined += (joined.empty() ? "" : "; ") + r;
    outcome.failure.message = joined;
    outcome.state = std::move(state);
    return outcome;
  }
  Value record = std::move(*built.record);
  if (options.quality) {
    const QualityConfig qc = pipeline.config.quality.value_or(QualityConfig{});
    const Value conversation =
        record.is_object() && record.contains(qc.conversation_key) ? record.at(qc.conversation_key) : state.history_value();
    record["quality"] =
        tag_conversation(conversation, qc, &pipeline.models, fmt::format("{}/quality", id)).to_value();
  }
  outcome.status = RecordOutcome::Status::written;
  outcome.record = std::move(record);
  outcome.state = std::move(state);
  return outcome;
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

namespace {

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

class IndexStream final : public RecordStream {
 public:
  explicit IndexStream(std::int64_t count) : count_(count) {}
  std::optional<Record> next() override {
    if (next_ >= count_) return std::nullopt;
    return Value{{std::string(kIndexField), next_++}};
  }

 private:
  std::int64_t count_;
  std::int64_t next_ = 0;
};

std::shared_ptr<spdlog::logger> run_logger(const fs::path& path) {
  auto file = std::make_shared<spdlog::sinks::basic_file_sink_mt>(path.string(), false);
  auto console = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
  console->set_level(spdlog::default_logger()->level() <= spdlog::level::info ? spdlog::level::info
                                                                               : spdlog::default_logger()->level());
  auto logger = std::make_shared<spdlog::logger>("run", spdlog::sinks_init_list{file, console});
  logger->set_level(spdlog::level::debug);
  logger->flush_on(spdlog::level::info);
  return logger;
}

bool is_jsonl_disk(const SinkSpec& sink) {
  return sink.kind == SourceKind::disk && sink.file_format.value_or(FileFormat::jsonl) == FileFormat::jsonl;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> lines;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

Value RunReport::to_value() const {
  Value out = {{"run_id", run_id},
               {"counters", counters.to_value()},
               {"total", total_counters.to_value()},
               {"output", output_path.string()},
               {"run_dir", run_dir.string()},
               {"wall_ms", wall_ms},
               {"resumed", resumed},
               {"interrupted", interrupted}};
  if (sink_path) out["sink"] = sink_path->string();
  if (!warnings.empty()) out["warnings"] = warnings;
  return out;
}

RunReport run(const Pipeline& pipeline, const RunOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  const PipelineConfig& config = pipeline.config;
  const fs::path run_dir = fs::absolute(options.run_dir);
  fs::create_directories(run_dir);
  auto log = run_logger(run_dir / "run.log");

  RunReport report;
  report.run_dir = run_dir;
  report.resumed = options.resume;
  const std::string hash = config_hash(config);

  Checkpoint cp;
  if (options.resume) {
    cp = load_checkpoint(run_dir);
    if (cp.manifest.config_hash != hash) {
      const std::string message = fmt::format("config hash mismatch: checkpoint has {}, current config is {}",
                                              cp.manifest.config_hash.substr(0, 12), hash.substr(0, 12));
      if (!options.force_resume) throw Error(ErrorKind::resume, message);
      log->warn("{} (continuing: --force-resume)", message);
      report.warnings.push_back(message);
      cp.manifest.config_hash = hash;
    }
    if (options.retry_failed) cp.failed.clear();
    log->info("resuming run {}: {} completed, {} failed", cp.manifest.run_id, cp.completed.size(), cp.failed.size());
  } else {
    cp.manifest.config_hash = hash;
    cp.manifest.run_seed = options.run_seed;
    cp.manifest.started_at = utc_now();
    cp.manifest.run_id = "run-" + sha256_hex(hash + cp.manifest.started_at + run_dir.string()).substr(0, 12);
    cp.manifest.oasst = options.oasst;
    cp.manifest.quality = options.quality;
    cp.manifest.sequential = options.sequential;
    const std::optional<SinkSpec> sink = config.data ? config.data->sink : std::nullopt;
    cp.manifest.output_file =
        (sink && is_jsonl_disk(*sink) ? sink_path(*sink, run_dir) : run_dir / "output.jsonl").string();
  }
  report.run_id = cp.manifest.run_id;
  report.output_path = cp.manifest.output_file;
  const RunCounters base_counters = cp.manifest.counters;

  JsonlAppender output(report.output_path, cp.sink_positions["output"]);
  JsonlAppender failures(run_dir / "failures.jsonl", cp.sink_positions["failures"]);
  JsonlAppender traces(run_dir / "traces.jsonl", cp.sink_positions["traces"]);

  RunCounters counters;
  std::mutex write_mutex;
  auto flush = [&] {
    cp.sink_positions["output"] = output.sync();
    cp.sink_positions["failures"] = failures.sync();
    cp.sink_positions["traces"] = traces.sync();
    cp.manifest.counters = base_counters + counters;
    write_file_atomic(run_dir / "checkpoint.json", cp.to_value().dump());
  };
  write_file_atomic(run_dir / "manifest.json", cp.manifest.to_value().dump(2));
  flush();

  StreamPtr stream;
  if (config.data_less()) {
    stream = std::make_unique<IndexStream>(options.num_records);
  } else {
    SourceOptions source_options{options.base_dir, options.hf_mirror};
    stream = apply_transforms(open_source(*config.data->source, source_options), config.data->transforms);
  }

  std::set<RecordId> skip = cp.completed;
  for (const auto& [id, f] : cp.failed) skip.insert(id);

  std::mutex source_mutex;
  std::int64_t dispatched = 0;
  bool exhausted = false;
  std::atomic<bool> fatal{false};
  std::exception_ptr fatal_error;
  std::set<RecordId> seen_ids;

  auto stop_requested = [&] { return fatal.load() || (options.stop && options.stop->load()); };

  auto next_task = [&]() -> std::optional<RecordState> {
    std::lock_guard lock(source_mutex);
    while (true) {
      if (stop_requested() || exhausted) return std::nullopt;
      if (options.limit && dispatched >= *options.limit) return std::nullopt;
      std::optional<Record> record;
      try {
        record = stream->next();
      } catch (...) {
        std::lock_guard wlock(write_mutex);
        if (!fatal_error) fatal_error = std::current_exception();
        fatal = true;
        return std::nullopt;
      }
      if (!record) {
        exhausted = true;
        return std::nullopt;
      }
      const Value index = record->value(std::string(kIndexField), Value());
      if (!index.is_number_integer()) {
        std::lock_guard wlock(write_mutex);
        if (!fatal_error) {
          fatal_error = std::make_exception_ptr(Error(ErrorKind::source_schema, "record without integer __index"));
        }
        fatal = true;
        return std::nullopt;
      }
      const RecordId id = index.get<RecordId>();
      if (!seen_ids.insert(id).second) {
        log->warn("duplicate record id {} ignored", id);
        continue;
      }
      if (skip.count(id)) continue;
      ++dispatched;
      RecordState state;
      state.record_id = id;
      if (!config.data_less()) state.values = std::move(*record);
      return state;
    }
  };

  const ProcessOptions process_options{cp.manifest.run_seed, options.base_dir, options.quality};
  auto commit = [&](RecordOutcome& outcome) {
    std::lock_guard lock(write_mutex);
    if (fatal) return;
    try {
      const RecordId id = outcome.state.record_id;
      std::string status;
      switch (outcome.status) {
        case RecordOutcome::Status::written:
          output.append(*outcome.record);
          cp.completed.insert(id);
          ++counters.succeeded;
          status = "written";
          break;
        case RecordOutcome::Status::skipped:
          failures.append(outcome.failure.to_value());
          cp.completed.insert(id);
          ++counters.skipped;
          status = "skipped";
          log->warn("record {} skipped: {}", id, outcome.failure.message);
          break;
        case RecordOutcome::Status::failed:
          failures.append(outcome.failure.to_value());
          cp.failed[id] = outcome.failure;
          ++counters.failed;
          status = "failed";
          log->warn("record {} failed at {}: {}", id, outcome.failure.node, outcome.failure.message);
          break;
      }
      Value trace = Value::array();
      for (const auto& t : outcome.state.trace) trace.push_back(to_value(t));
      traces.append({{"record_id", id}, {"status", status}, {"trace", std::move(trace)},
                     {"messages", outcome.state.history_value()}});
      ++counters.processed;
      const int every = std::max(1, options.checkpoint_every);
      if (counters.processed % every == 0) flush();
    } catch (...) {
      if (!fatal_error) fatal_error = std::current_exception();
      fatal = true;
    }
  };

  const int workers = options.sequential ? 1 : std::max(1, options.concurrency);
  log->info("run {}: {} worker(s), seed {}", cp.manifest.run_id, workers, cp.manifest.run_seed);
  {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        while (auto state = next_task()) {
          RecordOutcome outcome = process_record(pipeline, std::move(*state), process_options);
          commit(outcome);
        }
      });
    }
  }

  {
    std::lock_guard lock(write_mutex);
    try {
      flush();
    } catch (...) {
      if (!fatal_error) fatal_error = std::current_exception();
      fatal = true;
    }
  }
  report.counters = counters;
  report.total_counters = cp.manifest.counters;
  report.interrupted = fatal || (options.stop && options.stop->load());
  if (fatal_error) {
    log->error("run stopped; checkpoint flushed");
    std::rethrow_exception(fatal_error);
  }

  if (!report.interrupted) {
    const std::optional<SinkSpec> sink = config.data ? config.data->sink : std::nullopt;
    if (sink && !is_jsonl_disk(*sink)) {
      const fs::path target = sink_path(*sink, run_dir);
      SinkReport sr = write_sink(*sink, target, read_records(report.output_path, FileFormat::jsonl));
      for (auto& w : sr.warnings) report.warnings.push_back(std::move(w));
      report.sink_path = target;
      log->info("sink {}: {} records", target.string(), sr.written);
    } else if (sink) {
      report.sink_path = report.output_path;
    }
    if (options.oasst) {
      const OasstConfig oc = config.oasst.value_or(OasstConfig{});
      const QualityConfig qc = config.quality.value_or(QualityConfig{});
      std::vector<std::pair<Value, Value>> conversations;
      for (const auto& [id, line] : written_outputs(run_dir)) {
        const Value record = Value::parse(line);
        Value conversation;
        if (record.is_object() && record.contains(oc.conversation_key)) {
          conversation = record.at(oc.conversation_key);
        }
        Value metadata = {{"record_id", id}};
        if (record.is_object() && record.contains("quality") && record.at("quality").contains(oc.quality_key)) {
          metadata[oc.quality_key] = record.at("quality").at(oc.quality_key);
        }
        conversations.emplace_back(std::move(conversation), std::move(metadata));
      }
      // Records without the conversation field fall back to their chat history.
      std::map<RecordId, Value> histories;
      for (const auto& line : read_lines(run_dir / "traces.jsonl")) {
        const Value t = Value::parse(line);
        if (t.value("status", "") == "written") histories[t.at("record_id").get<RecordId>()] = t.at("messages");
      }
      for (auto& [conversation, metadata] : conversations) {
        if (conversation.is_null()) conversation = histories[metadata.at("record_id").get<RecordId>()];
      }
      (void)qc;
      const OasstExportReport oasst = export_oasst(conversations, oc, run_dir);
      log->info("oasst: {} trees, {} messages, {} sft, {} dpo, {} skipped", oasst.trees, oasst.messages, oasst.sft,
                oasst.dpo, oasst.skipped);
    }
  }
  write_file_atomic(run_dir / "manifest.json", cp.manifest.to_value().dump(2));
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  log->info("run {} finished: processed {}, written {}, skipped {}, failed {} in {:.0f} ms", report.run_id,
            counters.processed, counters.succeeded, counters.skipped, counters.failed, report.wall_ms);
  return report;
}

std::vector<std::pair<RecordId, std::string>> written_outputs(const fs::path& run_dir) {
  const Checkpoint cp = load_checkpoint(run_dir);
  std::vector<RecordId> ids;
  for (const auto& line : read_lines(run_dir / "traces.jsonl")) {
    const Value t = Value::parse(line);
    if (t.value("status", "") == "written") ids.push_back(t.at("record_id").get<RecordId>());
  }
  const auto lines = read_lines(cp.manifest.output_file);
  if (lines.size() != ids.size()) {
    throw Error(ErrorKind::resume, fmt::format("output has {} lines but traces record {} written records",
                                               lines.size(), ids.size()));
  }
  std::vector<std::pair<RecordId, std::string>> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.emplace_back(ids[i], lines[i]);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

}  // namespace grasp
