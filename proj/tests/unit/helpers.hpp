#pragma once

#include <unistd.h>

#include <filesystem>
#include <functional>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "grasp/cli.hpp"
#include "grasp/common.hpp"
#include "grasp/engine.hpp"

namespace grasp::testing {

inline std::filesystem::path source_dir() { return GRASP_SOURCE_DIR; }
inline std::filesystem::path fixture_dir() { return GRASP_FIXTURE_DIR; }
inline std::filesystem::path task_dir(const std::string& name) { return source_dir() / "tasks" / name; }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream(path, std::ios::binary) << text;
}

inline const Value& oracle() {
  static const Value value = Value::parse(read_file(fixture_dir() / "oracle.json"));
  return value;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("grasp-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Shared registry of built-in callables; compiled graphs point into it.
inline const Registry& builtins() {
  static const Registry registry = Registry::with_builtins();
  return registry;
}

inline cli::LoadedTask load_fixture_task(const std::string& name, const Registry& registry) {
  const cli::TaskPaths paths = cli::resolve_task((task_dir(name)).string(), std::nullopt, std::nullopt);
  return cli::load_task(paths, registry, SourceOptions{paths.base_dir, {}});
}
cli::LoadedTask load_fixture_task(const std::string& name, Registry&& registry) = delete;

/// Pipeline compiled from inline YAML, with its models.
struct InlinePipeline {
  Registry registry = Registry::with_builtins();
  PipelineConfig config;
  CompiledGraph graph;
  std::map<std::string, BackendConfig> backends;
  ModelPool pool;

  InlinePipeline(const std::string& config_yaml, const std::string& models_yaml,
                 const std::function<void(Registry&)>& setup = {}) {
    if (setup) setup(registry);
    auto parsed = parse_pipeline_config(config_yaml);
    if (!parsed.config) throw std::runtime_error("config: " + join(parsed.diagnostics));
    config = std::move(*parsed.config);
    backends = parse_models(models_yaml);
    for (auto& [name, cfg] : backends) cfg.backoff = {1, 2.0, 2};
    auto compiled = compile(config.graph, registry);
    if (!compiled.graph) throw std::runtime_error("compile: " + join(compiled.diagnostics));
    graph = std::move(*compiled.graph);
    pool = make_pool(backends);
  }

  Pipeline pipeline() { return Pipeline{config, graph, registry, pool}; }

  RecordState state(RecordId id, Value values = Value::object()) const {
    RecordState s;
    s.record_id = id;
    s.values = std::move(values);
    return s;
  }

 private:
  static std::string join(const std::vector<Diagnostic>& diagnostics) {
    std::string out;
    for (const auto& d : diagnostics) out += grasp::render(d) + "\n";
    return out;
  }
};

/// Runs `property` on `iterations` generated cases; the seed is fixed so
/// failures reproduce.
template <typename Gen, typename Prop>
void for_all(std::uint32_t seed, int iterations, Gen generate, Prop property) {
  std::mt19937 rng(seed);
  for (int i = 0; i < iterations; ++i) property(generate(rng), i);
}

inline std::string random_word(std::mt19937& rng, int min_len = 1, int max_len = 8) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string out;
  for (int i = len(rng); i > 0; --i) out += alphabet[pick(rng)];
  return out;
}

}  // namespace grasp::testing
