#include "grasp/cli.hpp"

#include <unistd.h>

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "grasp/engine.hpp"

namespace fs = std::filesystem;

namespace grasp::cli {

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) {
  if (g_stop.exchange(true)) _exit(130);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::config, "cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::optional<fs::path> existing(const fs::path& path) {
  std::error_code ec;
  if (fs::exists(path, ec)) return fs::absolute(path);
  return std::nullopt;
}

std::optional<fs::path> first_existing(std::initializer_list<fs::path> paths) {
  for (const auto& p : paths) {
    if (auto found = existing(p)) return found;
  }
  return std::nullopt;
}

// `--flag True` becomes `--flag=true` so that boolean flags also work as bare switches.
std::vector<std::string> join_bool_values(const std::vector<std::string>& args, const std::set<std::string>& flags) {
  static const std::set<std::string> words = {"true", "false", "yes", "no", "on", "off", "1", "0"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (flags.count(args[i]) && i + 1 < args.size() && words.count(to_lower(args[i + 1]))) {
      out.push_back(args[i] + "=" + to_lower(args[i + 1]));
      ++i;
    } else {
      out.push_back(args[i]);
    }
  }
  return out;
}

struct RunFlags {
  std::string task;
  std::optional<std::string> config;
  std::optional<std::string> models;
  std::optional<std::string> run_dir;
  std::optional<std::string> hf_mirror;
  bool resume = false;
  bool oasst = false;
  bool quality = false;
  bool sequential = false;
  bool dry_run = false;
  bool retry_failed = false;
  bool force_resume = false;
  bool json = false;
  int concurrency = 8;
  int checkpoint_every = 50;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> limit;
  std::int64_t num_records = 1;
  std::string log_level = "info";
};

struct BenchFlags {
  int records = 200;
  int latency_ms = 50;
  int calls = 2;
  int concurrency = 8;
  bool json = false;
};

std::uint64_t choose_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("GRASP_RUN_SEED"); env && *env) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw Error(ErrorKind::config, fmt::format("GRASP_RUN_SEED is not an integer: '{}'", env));
    }
  }
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

void print_diagnostics(const std::vector<Diagnostic>& diagnostics, std::ostream& err) {
  for (const auto& d : diagnostics) err << render(d) << '\n';
}

Value diagnostics_value(const std::vector<Diagnostic>& diagnostics) {
  Value out = Value::array();
  for (const auto& d : diagnostics) {
    Value entry = {{"severity", std::string(to_string(d.severity))}, {"path", d.path}, {"message", d.message}};
    if (d.line > 0) {
      entry["line"] = d.line;
      entry["column"] = d.column;
    }
    out.push_back(std::move(entry));
  }
  return out;
}

int run_command(const RunFlags& flags, std::ostream& out, std::ostream& err) {
  TaskPaths paths;
  try {
    paths = resolve_task(flags.task,
                         flags.config ? std::optional<fs::path>(*flags.config) : std::nullopt,
                         flags.models ? std::optional<fs::path>(*flags.models) : std::nullopt);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  const Registry registry = Registry::with_builtins();
  SourceOptions source{paths.base_dir, flags.hf_mirror ? fs::path(*flags.hf_mirror) : fs::path()};
  LoadedTask task = load_task(paths, registry, source);
  print_diagnostics(task.diagnostics, err);
  if (!task.ok()) {
    if (flags.json) out << Value{{"valid", false}, {"diagnostics", diagnostics_value(task.diagnostics)}}.dump() << '\n';
    return kExitConfig;
  }
  if (flags.dry_run) {
    if (flags.json) {
      out << Value{{"valid", true}, {"diagnostics", diagnostics_value(task.diagnostics)}}.dump() << '\n';
    } else {
      out << "valid\n";
    }
    return kExitOk;
  }

  RunOptions options;
  const std::string name = flags.task.empty() ? paths.config.stem().string() : fs::path(flags.task).filename().string();
  options.run_dir = flags.run_dir ? fs::path(*flags.run_dir) : fs::path("runs") / name;
  options.base_dir = paths.base_dir;
  options.hf_mirror = source.hf_mirror;
  options.concurrency = flags.concurrency;
  options.checkpoint_every = flags.checkpoint_every;
  options.limit = flags.limit;
  options.sequential = flags.sequential;
  options.num_records = flags.num_records;
  options.resume = flags.resume;
  options.retry_failed = flags.retry_failed;
  options.force_resume = flags.force_resume;
  options.oasst = flags.oasst;
  options.quality = flags.quality;
  options.stop = &g_stop;

  try {
    options.run_seed = choose_seed(flags.seed);
    ModelPool pool = make_pool(task.models);
    const Pipeline pipeline{*task.config, *task.graph, registry, pool};
    const RunReport report = run(pipeline, options);
    if (flags.json) {
      out << report.to_value().dump() << '\n';
    } else {
      out << fmt::format("{}: processed {} (written {}, skipped {}, failed {}) in {:.0f} ms\n", report.run_id,
                         report.counters.processed, report.counters.succeeded, report.counters.skipped,
                         report.counters.failed, report.wall_ms);
      out << "output: " << report.output_path.string() << '\n';
      if (report.sink_path && *report.sink_path != report.output_path) out << "sink: " << report.sink_path->string() << '\n';
      if (flags.oasst) out << "oasst: " << (report.run_dir / "oasst.jsonl").string() << '\n';
    }
    if (report.interrupted) {
      err << "interrupted; continue with --resume True\n";
      return kExitRunError;
    }
    return kExitOk;
  } catch (const Error& e) {
    err << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return kExitRunError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRunError;
  }
}

int bench_command(const BenchFlags& flags, std::ostream& out, std::ostream& err) {
  try {
    const BenchReport report = bench(flags.records, flags.latency_ms, flags.calls, flags.concurrency);
    if (flags.json) {
      out << report.to_value().dump() << '\n';
    } else {
      out << fmt::format("records {}  latency {} ms  calls/record {}  concurrency {}\n", report.records,
                         report.latency_ms, report.calls_per_record, report.concurrency);
      out << fmt::format("sequential  {:10.1f} ms  (model {:.1f})\n", report.sequential_ms, report.model_sequential_ms);
      out << fmt::format("concurrent  {:10.1f} ms  (model {:.1f})\n", report.concurrent_ms, report.model_concurrent_ms);
      out << fmt::format("speedup     {:10.2f}x\n", report.speedup);
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRunError;
  }
}

}  // namespace

TaskPaths resolve_task(const std::string& task, const std::optional<fs::path>& config,
                       const std::optional<fs::path>& models) {
  TaskPaths paths;
  fs::path dir;
  if (config) {
    auto found = existing(*config);
    if (!found) throw Error(ErrorKind::config, "config file not found: " + config->string());
    paths.config = *found;
    dir = found->parent_path();
  } else {
    if (task.empty()) throw Error(ErrorKind::config, "one of --task or --config is required");
    std::optional<fs::path> found = first_existing({fs::path(task) / "config.yaml", fs::path("tasks") / task / "config.yaml"});
    if (!found) {
      if (const char* env = std::getenv("GRASP_TASKS_DIR"); env && *env) found = existing(fs::path(env) / task / "config.yaml");
    }
    if (!found) throw Error(ErrorKind::config, fmt::format("task '{}' not found (expected <task>/config.yaml)", task));
    paths.config = *found;
    dir = found->parent_path();
  }
  paths.base_dir = dir;
  if (models) {
    auto found = existing(*models);
    if (!found) throw Error(ErrorKind::config, "models file not found: " + models->string());
    paths.models = found;
  } else {
    paths.models = first_existing({dir / "models.yaml", dir / "models.yml"});
  }
  if (auto graphs = existing(dir / "graphs"); graphs && fs::is_directory(*graphs)) paths.graphs = graphs;
  return paths;
}

LoadedTask load_task(const TaskPaths& paths, const Registry& registry, const SourceOptions& source) {
  LoadedTask task;
  std::string text;
  try {
    text = read_text(paths.config);
  } catch (const Error& e) {
    task.diagnostics.push_back(make_error("", e.what()));
    return task;
  }
  ParseResult parsed = parse_pipeline_config(text);
  task.diagnostics = std::move(parsed.diagnostics);
  if (!parsed.config) return task;
  task.config = std::move(parsed.config);

  CompileOptions options;
  options.models = std::set<std::string>{};
  if (paths.models) {
    try {
      task.models = load_models(*paths.models);
      for (const auto& [name, cfg] : task.models) options.models->insert(name);
    } catch (const std::exception& e) {
      task.diagnostics.push_back(make_error("models", e.what()));
      return task;
    }
  }
  if (paths.graphs) options.library = directory_library(*paths.graphs);

  if (!task.config->data_less()) {
    try {
      StreamPtr stream = apply_transforms(open_source(*task.config->data->source, source), task.config->data->transforms);
      if (auto first = stream->next(); first && first->is_object()) {
        std::set<std::string> columns;
        for (const auto& [key, value] : first->items()) columns.insert(key);
        options.source_columns = std::move(columns);
      }
    } catch (const std::exception& e) {
      task.diagnostics.push_back(make_warning("data_config.source", fmt::format("source not readable: {}", e.what())));
    }
  } else {
    options.source_columns = std::set<std::string>{};
  }

  CompileResult compiled = compile(task.config->graph, registry, options);
  for (auto& d : compiled.diagnostics) task.diagnostics.push_back(std::move(d));
  task.graph = std::move(compiled.graph);
  return task;
}

Value BenchReport::to_value() const {
  return {{"records", records},
          {"latency_ms", latency_ms},
          {"calls_per_record", calls_per_record},
          {"concurrency", concurrency},
          {"sequential_ms", sequential_ms},
          {"concurrent_ms", concurrent_ms},
          {"speedup", speedup},
          {"model_sequential_ms", model_sequential_ms},
          {"model_concurrent_ms", model_concurrent_ms}};
}

BenchReport bench(int records, int latency_ms, int calls_per_record, int concurrency, const fs::path& work_dir) {
  if (records < 1 || calls_per_record < 1 || concurrency < 1 || latency_ms < 0) {
    throw Error(ErrorKind::config, "bench needs records, calls and concurrency >= 1 and latency >= 0");
  }
  std::string yaml = "graph_config:\n  nodes:\n";
  for (int i = 0; i < calls_per_record; ++i) {
    yaml += fmt::format(
        "    step{0}:\n      node_type: llm\n      model:\n        name: bench\n      prompt:\n"
        "        - user: \"step {0} of record {{record_id}}\"\n",
        i);
  }
  yaml += "  edges:\n";
  for (int i = 0; i <= calls_per_record; ++i) {
    const std::string from = i == 0 ? "START" : fmt::format("step{}", i - 1);
    const std::string to = i == calls_per_record ? "END" : fmt::format("step{}", i);
    yaml += fmt::format("    - from: {}\n      to: {}\n", from, to);
  }
  yaml += fmt::format("output_config:\n  output_map:\n    reply:\n      from: step{}\n", calls_per_record - 1);
  ParseResult parsed = parse_pipeline_config(yaml);
  if (!parsed.config) {
    std::string detail;
    for (const auto& d : parsed.diagnostics) detail += "\n  " + render(d);
    throw Error(ErrorKind::config, "bench pipeline did not parse:" + detail);
  }
  const Registry registry = Registry::with_builtins();
  CompileOptions compile_options;
  CompileResult compiled = compile(parsed.config->graph, registry, compile_options);
  if (!compiled.graph) {
    std::string detail;
    for (const auto& d : compiled.diagnostics) detail += "\n  " + render(d);
    throw Error(ErrorKind::config, "bench pipeline did not compile:" + detail);
  }

  BackendConfig backend;
  backend.name = "bench";
  backend.api_style = ApiStyle::mock;
  backend.mock.mode = MockSpec::Mode::hash;
  backend.mock.latency_ms = latency_ms;
  const std::map<std::string, BackendConfig> models = {{"bench", backend}};

  const fs::path root = work_dir.empty() ? fs::temp_directory_path() / fmt::format("grasp-bench-{}", ::getpid()) : work_dir;
  auto timed = [&](bool sequential) {
    ModelPool pool = make_pool(models);
    const Pipeline pipeline{*parsed.config, *compiled.graph, registry, pool};
    RunOptions options;
    options.run_dir = root / (sequential ? "sequential" : "concurrent");
    fs::remove_all(options.run_dir);
    options.num_records = records;
    options.sequential = sequential;
    options.concurrency = concurrency;
    options.checkpoint_every = records;
    const auto start = std::chrono::steady_clock::now();
    run(pipeline, options);
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };

  BenchReport report;
  report.records = records;
  report.latency_ms = latency_ms;
  report.calls_per_record = calls_per_record;
  report.concurrency = concurrency;
  report.sequential_ms = timed(true);
  report.concurrent_ms = timed(false);
  report.speedup = report.concurrent_ms > 0 ? report.sequential_ms / report.concurrent_ms : 0;
  const double total = static_cast<double>(records) * calls_per_record * latency_ms;
  report.model_sequential_ms = total;
  report.model_concurrent_ms = std::max(total / concurrency, static_cast<double>(calls_per_record) * latency_ms);
  if (work_dir.empty()) fs::remove_all(root);
  return report;
}

void install_signal_handlers() {
  struct sigaction action {};
  action.sa_handler = on_signal;
  sigemptyset(&action.sa_mask);
  sigaction(SIGINT, &action, nullptr);
  sigaction(SIGTERM, &action, nullptr);
}

int main(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  static const std::set<std::string> bool_flags = {"--resume",       "--oasst",        "--quality", "--sequential",
                                                   "--dry-run",      "--retry-failed", "--force-resume", "--json"};
  std::vector<std::string> args = join_bool_values(raw_args, bool_flags);

  RunFlags run_flags;
  BenchFlags bench_flags;
  CLI::App app{"Graph pipeline runner for synthetic dialogue data", "grasp"};
  app.fallthrough();
  app.add_option("--task", run_flags.task, "Task directory or name under tasks/");
  app.add_option("--config", run_flags.config, "Pipeline YAML file");
  app.add_option("--models", run_flags.models, "Backend definitions (default: models.yaml beside the config)");
  app.add_option("--run-dir", run_flags.run_dir, "Run directory (default: runs/<task>)");
  app.add_option("--hf-mirror", run_flags.hf_mirror, "Local mirror for hf sources");
  app.add_flag("--resume", run_flags.resume, "Continue from the run directory's checkpoint");
  app.add_flag("--oasst", run_flags.oasst, "Export OASST trees plus SFT and DPO files");
  app.add_flag("--quality", run_flags.quality, "Attach quality tags to each record");
  app.add_flag("--sequential", run_flags.sequential, "Process one record at a time");
  app.add_flag("--dry-run", run_flags.dry_run, "Validate and compile only");
  app.add_flag("--retry-failed", run_flags.retry_failed, "On resume, retry records that failed");
  app.add_flag("--force-resume", run_flags.force_resume, "Resume even if the config changed");
  app.add_flag("--json", run_flags.json, "Print a machine-readable report");
  app.add_option("--concurrency", run_flags.concurrency, "Records in flight")->check(CLI::PositiveNumber);
  app.add_option("--checkpoint-every", run_flags.checkpoint_every, "Records between checkpoints")->check(CLI::PositiveNumber);
  app.add_option("--seed", run_flags.seed, "Run seed (default: $GRASP_RUN_SEED or random)");
  app.add_option("--limit", run_flags.limit, "Process at most this many records")->check(CLI::NonNegativeNumber);
  app.add_option("--num-records", run_flags.num_records, "Records to synthesize without a data source")
      ->check(CLI::PositiveNumber);
  app.add_option("--log-level", run_flags.log_level, "trace, debug, info, warn, error or off");

  CLI::App* run_cmd = app.add_subcommand("run", "Run a task (default)");
  CLI::App* resume_cmd = app.add_subcommand("resume", "Continue an interrupted run");
  CLI::App* bench_cmd = app.add_subcommand("bench", "Compare sequential and concurrent throughput on a mock backend");
  run_cmd->fallthrough();
  resume_cmd->fallthrough();
  bench_cmd->add_option("--records", bench_flags.records)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--latency-ms", bench_flags.latency_ms)->check(CLI::NonNegativeNumber);
  bench_cmd->add_option("--calls", bench_flags.calls)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--concurrency", bench_flags.concurrency)->check(CLI::PositiveNumber);
  bench_cmd->add_flag("--json", bench_flags.json);
  app.require_subcommand(0, 1);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitConfig;
  }

  const auto level = spdlog::level::from_str(run_flags.log_level);
  spdlog::set_level(level);

  if (bench_cmd->parsed()) return bench_command(bench_flags, out, err);
  if (resume_cmd->parsed()) run_flags.resume = true;
  return run_command(run_flags, out, err);
}

}  // namespace grasp::cli
