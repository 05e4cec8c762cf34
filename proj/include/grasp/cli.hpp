#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "grasp/backend.hpp"
#include "grasp/config.hpp"
#include "grasp/dataio.hpp"
#include "grasp/graph.hpp"
#include "grasp/registry.hpp"

namespace grasp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRunError = 1;
inline constexpr int kExitConfig = 2;

/// Files that make up a task directory.
struct TaskPaths {
  std::filesystem::path config;
  std::filesystem::path base_dir;               // relative source paths resolve here
  std::optional<std::filesystem::path> models;  // models.yaml when present
  std::optional<std::filesystem::path> graphs;  // subgraph library when present
};

/// `--task NAME` looks for `NAME/config.yaml`, then `tasks/NAME/config.yaml`,
/// then `$GRASP_TASKS_DIR/NAME/config.yaml`. `--config` names the file
/// directly. Throws Error{config} when nothing is found.
TaskPaths resolve_task(const std::string& task, const std::optional<std::filesystem::path>& config,
                       const std::optional<std::filesystem::path>& models);

struct LoadedTask {
  std::optional<PipelineConfig> config;
  std::optional<CompiledGraph> graph;
  std::map<std::string, BackendConfig> models;
  std::vector<Diagnostic> diagnostics;

  bool ok() const { return config && graph && !has_errors(diagnostics); }
};

/// Parses and compiles a task without calling any backend. Source columns are
/// taken from the first record when the source can be opened.
LoadedTask load_task(const TaskPaths& paths, const Registry& registry, const SourceOptions& source);

struct BenchReport {
  int records = 0;
  int latency_ms = 0;
  int calls_per_record = 0;
  int concurrency = 0;
  double sequential_ms = 0;
  double concurrent_ms = 0;
  double speedup = 0;
  double model_sequential_ms = 0;  // R*C*L
  double model_concurrent_ms = 0;  // max(R*C*L/k, C*L)

  Value to_value() const;
};

/// Runs a synthetic chain of `calls_per_record` mock LLM nodes over
/// `records` data-less records, sequentially and at `concurrency`.
BenchReport bench(int records, int latency_ms, int calls_per_record, int concurrency,
                  const std::filesystem::path& work_dir = {});

/// Full command line without the program name. Returns the exit code.
int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Installs SIGINT/SIGTERM handlers that ask a running `main` to drain and
/// checkpoint. A second signal exits immediately.
void install_signal_handlers();

}  // namespace grasp::cli
