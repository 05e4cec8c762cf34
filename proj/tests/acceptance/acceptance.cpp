// One line per acceptance criterion; exit status is non-zero if any fails.

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "../unit/helpers.hpp"
#include "grasp/engine.hpp"
#include "grasp/oasst.hpp"

extern char** environ;

namespace grasp::acceptance {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

/// Failed check; stops the criterion with a message.
struct Check : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw Check(message);
}

const std::vector<std::string> kFixtures = {"b1_dataless",    "b2_conditional",    "b3_image",   "b4_audio",
                                            "research_agent", "structured_answer", "audio_node", "evolve_instruct"};

const Registry& registry() { return testing::builtins(); }

fs::path mirror_for(const std::string& task) {
  const fs::path dir = testing::task_dir(task) / "hf_mirror";
  return fs::exists(dir) ? dir : fs::path();
}

cli::LoadedTask load(const std::string& task) {
  const cli::TaskPaths paths = cli::resolve_task(testing::task_dir(task).string(), std::nullopt, std::nullopt);
  return cli::load_task(paths, registry(), SourceOptions{paths.base_dir, mirror_for(task)});
}

RunReport run_task(const cli::LoadedTask& task, const std::string& name, const fs::path& run_dir, int concurrency,
                   std::int64_t num_records = 1) {
  ModelPool pool = make_pool(task.models);
  RunOptions o;
  o.run_dir = run_dir;
  o.base_dir = testing::task_dir(name);
  o.hf_mirror = mirror_for(name);
  o.concurrency = concurrency;
  o.run_seed = 2024;
  o.num_records = num_records;
  return run(Pipeline{*task.config, *task.graph, registry(), pool}, o);
}

std::vector<Value> read_jsonl(const fs::path& path) {
  std::vector<Value> out;
  std::istringstream in(testing::read_file(path));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(Value::parse(line));
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome config_fidelity() {
  const auto start = Clock::now();
  for (const auto& name : kFixtures) {
    std::ostringstream out, err;
    std::vector<std::string> args = {"--task", testing::task_dir(name).string(), "--dry-run"};
    if (!mirror_for(name).empty()) args.insert(args.end(), {"--hf-mirror", mirror_for(name).string()});
    const int code = cli::main(args, out, err);
    require(code == 0 && out.str() == "valid\n", name + " dry-run failed: " + err.str());
    const auto task = load(name);
    for (const auto& d : task.diagnostics) require(d.severity != Severity::error, name + ": " + render(d));
  }
  const std::map<std::string, std::string> mutations = {{"dangling_edge.yaml", "unknown node validator"},
                                                         {"dual_to_condition.yaml", "edge sets both to and condition"},
                                                         {"bad_rule_type.yaml", "numeric rule on str field solution"}};
  for (const auto& [file, message] : mutations) {
    const auto parsed = parse_pipeline_config(testing::read_file(testing::fixture_dir() / "mutations" / file));
    bool targeted = false;
    for (const auto& d : parsed.diagnostics) {
      targeted |= d.severity == Severity::error && d.message.find(message) != std::string::npos;
    }
    require(targeted, file + " gave no '" + message + "' diagnostic");
  }
  const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
  require(seconds < 5, fmt::format("took {:.2f} s", seconds));
  return {true, fmt::format("{} fixtures valid, {} mutations diagnosed, {:.2f} s", kFixtures.size(),
                            mutations.size(), seconds)};
}

Outcome throughput() {
  const auto start = Clock::now();
  const cli::BenchReport r = cli::bench(200, 50, 2, 8);
  const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
  const double seq_err = std::abs(r.sequential_ms - r.model_sequential_ms) / r.model_sequential_ms;
  const double conc_err = std::abs(r.concurrent_ms - r.model_concurrent_ms) / r.model_concurrent_ms;
  const std::string detail =
      fmt::format("speedup {:.2f}x; sequential {:.0f} ms vs {:.0f} ({:+.1f}%), concurrent {:.0f} ms vs {:.0f} "
                  "({:+.1f}%), {:.1f} s",
                  r.speedup, r.sequential_ms, r.model_sequential_ms, 100 * seq_err, r.concurrent_ms,
                  r.model_concurrent_ms, 100 * conc_err, seconds);
  require(r.speedup >= 3.0, detail);
  require(seq_err <= 0.25 && conc_err <= 0.25, detail);
  require(seconds < 60, detail);
  return {true, detail};
}

std::size_t lines_in(const fs::path& path) {
  const std::string text = testing::read_file(path);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

int spawn_cli(const std::vector<std::string>& args, pid_t* pid_out) {
  std::vector<std::string> argv_storage = {GRASP_CLI_PATH};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  argv.push_back(nullptr);
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, 1, "/dev/null", O_WRONLY, 0);
  posix_spawn_file_actions_addopen(&actions, 2, "/dev/null", O_WRONLY, 0);
  const int rc = posix_spawn(pid_out, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  return rc;
}

int wait_exit(pid_t pid) {
  int status = 0;
  waitpid(pid, &status, 0);
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 128 + WTERMSIG(status);
}

std::string joined(const std::vector<std::pair<RecordId, std::string>>& outputs) {
  std::string out;
  for (const auto& [id, line] : outputs) out += line + '\n';
  return out;
}

Outcome exactly_once_resume() {
  const auto start = Clock::now();
  testing::TempDir dir;
  const fs::path task = dir / "resume_task";
  std::string rows;
  for (int i = 0; i < 1000; ++i) rows += fmt::format(R"({{"id": {}, "topic": "subject {}"}})", i, i) + "\n";
  testing::write_file(task / "data" / "rows.jsonl", rows);
  testing::write_file(task / "config.yaml", R"(
data_config:
  source: {type: disk, file_path: data/rows.jsonl, file_format: jsonl}
graph_config:
  nodes:
    outline:
      node_type: llm
      prompt: [{user: "Outline {topic}"}]
      model: {name: writer}
    expand:
      node_type: llm
      prompt: [{user: "Expand: {outline}"}]
      model: {name: writer}
  edges:
    - {from: START, to: outline}
    - {from: outline, to: expand}
    - {from: expand, to: END}
output_config:
  output_map:
    id: {from: id}
    outline: {from: outline}
    text: {from: expand}
)");
  testing::write_file(task / "models.yaml", "writer: {mock: {mode: hash, words: 10, latency_ms: 2}}\n");
  const std::vector<std::string> common = {"--task", task.string(), "--concurrency", "4", "--checkpoint-every", "20",
                                           "--seed", "11"};
  auto with = [&](std::vector<std::string> extra) {
    std::vector<std::string> args = common;
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
  };

  pid_t pid = 0;
  require(spawn_cli(with({"--run-dir", (dir / "reference").string()}), &pid) == 0, "cannot start " GRASP_CLI_PATH);
  require(wait_exit(pid) == 0, "uninterrupted run failed");
  const std::string reference = joined(written_outputs(dir / "reference"));
  require(lines_in(dir / "reference" / "output.jsonl") == 1000, "reference run incomplete");

  std::random_device device;
  std::mt19937 rng(device());
  std::vector<std::string> notes;
  for (int trial = 0; trial < 3; ++trial) {
    const std::size_t kill_at = std::uniform_int_distribution<std::size_t>(300, 500)(rng);
    const fs::path run_dir = dir / fmt::format("killed{}", trial);
    require(spawn_cli(with({"--run-dir", run_dir.string()}), &pid) == 0, "cannot start cli");
    bool killed = false;
    for (;;) {
      int status = 0;
      if (waitpid(pid, &status, WNOHANG) == pid) break;
      if (lines_in(run_dir / "output.jsonl") >= kill_at) {
        kill(pid, SIGKILL);
        waitpid(pid, &status, 0);
        killed = true;
        break;
      }
      std::this_thread::sleep_for(std::chrono::microseconds(500));
    }
    require(killed, fmt::format("run finished before kill point {}", kill_at));
    const std::size_t at_kill = lines_in(run_dir / "output.jsonl");
    require(spawn_cli(with({"--run-dir", run_dir.string(), "--resume", "True"}), &pid) == 0, "cannot resume");
    require(wait_exit(pid) == 0, "resume failed");

    const auto outputs = written_outputs(run_dir);
    std::set<RecordId> ids;
    for (const auto& [id, line] : outputs) ids.insert(id);
    require(outputs.size() == 1000 && ids.size() == 1000 && lines_in(run_dir / "output.jsonl") == 1000,
            fmt::format("trial {}: {} lines, {} distinct ids", trial, outputs.size(), ids.size()));
    require(joined(outputs) == reference, fmt::format("trial {}: output differs from uninterrupted run", trial));
    notes.push_back(fmt::format("{}@{}", at_kill, kill_at));
  }
  const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
  require(seconds < 90, fmt::format("took {:.1f} s", seconds));
  return {true, fmt::format("killed at {} lines, 1000 unique ids each, byte-identical, {:.1f} s",
                            fmt::join(notes, ", "), seconds)};
}

int passes_through(const Value& trace_line, const std::string& node) {
  int n = 0;
  for (const auto& t : trace_line.at("trace")) n += t.at("node") == node;
  return n;
}

Outcome conditional_loop() {
  testing::TempDir dir;
  cli::LoadedTask task = load("b2_conditional");
  run_task(task, "b2_conditional", dir / "valid", 4);
  const auto traces = read_jsonl(dir / "valid" / "traces.jsonl");
  require(traces.size() == 10, fmt::format("{} trace lines", traces.size()));
  for (const auto& t : traces) {
    require(t.at("status") == "written", "record not written");
    require(passes_through(t, "generate") == 3, fmt::format("record {} passed generate {} times", t.at("record_id").dump(),
                                                            passes_through(t, "generate")));
  }

  task.models.at("mistral").mock.script.resize(1);
  run_task(task, "b2_conditional", dir / "invalid", 4);
  const auto failed = read_jsonl(dir / "invalid" / "traces.jsonl");
  const auto failures = read_jsonl(dir / "invalid" / "failures.jsonl");
  require(failures.size() == 10, "expected every record to fail");
  for (const auto& f : failures) {
    require(f.at("error_kind") == "LoopBudgetExceeded", "failure kind " + f.at("error_kind").dump());
  }
  for (const auto& t : failed) {
    require(static_cast<int>(t.at("trace").size()) == task.graph->loop_budget,
            fmt::format("trace length {} != budget {}", t.at("trace").size(), task.graph->loop_budget));
  }
  return {true, fmt::format("3 generate passes for all 10 records; always-invalid stops at budget {} with "
                            "LoopBudgetExceeded",
                            task.graph->loop_budget)};
}

Outcome schema_skip() {
  testing::TempDir dir;
  std::string rows;
  const std::map<int, std::string> bad = {{1, "12"}, {4, "\"lots\""}, {9, "99999"}};
  for (int i = 0; i < 10; ++i) {
    const auto it = bad.find(i);
    rows += fmt::format(R"({{"id": {}, "population": {}}})", i, it == bad.end() ? std::to_string(250000 + i) : it->second);
    rows += '\n';
  }
  testing::write_file(dir / "rows.jsonl", rows);
  testing::InlinePipeline p(R"(
data_config:
  source: {type: disk, file_path: rows.jsonl, file_format: jsonl}
graph_config:
  nodes:
    describe:
      node_type: llm
      prompt: [{user: "Describe a city of {population} people"}]
      model: {name: m}
  edges:
    - {from: START, to: describe}
    - {from: describe, to: END}
output_config:
  output_map:
    id: {from: id}
    population: {from: population}
    description: {from: describe}
schema_config:
  fields:
    - {name: id, type: int}
    - {name: population, type: int, is_greater_than: 99999}
    - {name: description, type: str}
)",
                            "m: {mock: {mode: hash}}");
  RunOptions o;
  o.run_dir = dir / "run";
  o.base_dir = dir.path();
  const RunReport r = run(p.pipeline(), o);
  const auto failures = read_jsonl(dir / "run" / "failures.jsonl");
  std::set<int> ids;
  for (const auto& f : failures) {
    require(f.at("error_kind") == "schema", "failure kind " + f.at("error_kind").dump());
    ids.insert(f.at("record_id").get<int>());
  }
  require(lines_in(r.output_path) == 7, fmt::format("{} output lines", lines_in(r.output_path)));
  require(ids == std::set<int>{1, 4, 9}, "wrong records skipped");
  require(r.counters.succeeded + r.counters.skipped == 10, "written + skipped != 10");
  return {true, fmt::format("written {}, schema failures {}, skipped {}", r.counters.succeeded, failures.size(),
                            r.counters.skipped)};
}

Value conversation(const std::vector<std::string>& texts) {
  Value out = Value::array();
  for (std::size_t i = 0; i < texts.size(); ++i) {
    out.push_back({{"role", i % 2 ? "assistant" : "user"}, {"content", texts[i]}});
  }
  return out;
}

Outcome oasst_tree() {
  const std::string p = "How do vaccines work?";
  const std::vector<Value> conversations = {
      conversation({p, "They train the immune system.", "Using what?", "Weakened or inactivated pathogens."}),
      conversation({p, "They train the immune system.", "How long does it last?", "It depends on the vaccine."}),
      conversation({p, "They expose you to an antigen.", "Is that safe?", "The doses are carefully controlled."}),
      conversation({p, "They mimic an infection.", "Which infection?"}),
      conversation({p, "They mimic an infection.", "Does it hurt?"}),
      conversation({p, "They expose you to an antigen."}),
  };
  std::vector<OasstTree> trees;
  for (const auto& c : conversations) trees.push_back(to_tree(c));
  OasstTree tree = merge_trees(trees);
  check_tree(tree);
  const TreeStats stats = tree_stats(tree);
  require(stats.depth == 4 && stats.message_count == 12,
          fmt::format("depth {}, {} messages", stats.depth, stats.message_count));
  const auto assistants = std::count_if(tree.messages.begin(), tree.messages.end(),
                                        [](const OasstMessage& m) { return m.role == "assistant"; });
  const auto sft = extract_sft(tree);
  require(static_cast<long>(sft.size()) == assistants, fmt::format("{} SFT examples for {} assistants", sft.size(), assistants));

  const auto replies = tree.children(tree.root()->message_id);
  const std::vector<double> scores = {3, 5, 3};
  for (std::size_t i = 0; i < replies.size(); ++i) const_cast<OasstMessage*>(replies[i])->metadata["llm_score"] = scores[i];
  const auto pairs = extract_dpo(tree, "llm_score");
  require(pairs.size() == 2, fmt::format("{} DPO pairs", pairs.size()));
  for (const auto& pair : pairs) require(pair.chosen == replies[1] && pair.rejected != replies[1], "pair is not best-vs-each");
  const_cast<OasstMessage*>(replies[0])->metadata["llm_score"] = 5;
  const auto tied = extract_dpo(tree, "llm_score");
  require(tied.size() == 1 && tied[0].rejected == replies[2], "tie was not skipped");
  return {true, fmt::format("depth {}, {} messages, {} SFT examples, best-vs-each {} pairs, {} with a tie", stats.depth,
                            stats.message_count, sft.size(), pairs.size(), tied.size())};
}

Outcome sampler_statistics() {
  testing::TempDir dir;
  testing::InlinePipeline p(R"(
graph_config:
  nodes:
    pick:
      node_type: weighted_sampler
      sampler:
        - {value: common, weight: 0.8}
        - {value: rare, weight: 0.2}
  edges:
    - {from: START, to: pick}
    - {from: pick, to: END}
output_config:
  output_map:
    choice: {from: pick}
)",
                            "{}");
  auto draws = [&](const std::string& name) {
    RunOptions o;
    o.run_dir = dir / name;
    o.run_seed = 424242;
    o.num_records = 10000;
    o.concurrency = 8;
    o.checkpoint_every = 1000;
    run(p.pipeline(), o);
    return written_outputs(dir / name);
  };
  const auto first = draws("a");
  const auto second = draws("b");
  require(first.size() == 10000, fmt::format("{} draws", first.size()));
  const auto common = std::count_if(first.begin(), first.end(),
                                    [](const auto& d) { return d.second.find("common") != std::string::npos; });
  const double freq = static_cast<double>(common) / 10000.0;
  require(std::abs(freq - 0.8) <= 0.02 && std::abs((1 - freq) - 0.2) <= 0.02, fmt::format("frequency {:.4f}", freq));
  require(first == second, "same seed gave different draws");
  return {true, fmt::format("common {:.4f}, rare {:.4f}; reruns identical", freq, 1 - freq)};
}

BackendConfig scripted(std::vector<std::string> replies) {
  BackendConfig cfg;
  cfg.name = "m";
  cfg.api_style = ApiStyle::mock;
  cfg.mock.mode = MockSpec::Mode::script;
  for (auto& r : replies) {
    MockStep step;
    step.text = std::move(r);
    cfg.mock.script.push_back(std::move(step));
  }
  return cfg;
}

Outcome structured_fallback() {
  const std::vector<FieldDef> fields = {{"answer", "str", ""}, {"confidence", "float", ""}};
  ChatRequest request;
  request.model = "m";
  request.messages = {ChatMessage::text("user", "What is the capital of France?")};
  request.stream = "0/answer";
  MockClient flaky(scripted({"{answer: Paris", "Paris, probably", R"({"answer": "Paris", "confidence": 0.9})"}));
  const StructuredResult ok = complete_structured(flaky, request, fields);
  require(ok.schema_retries == 2 && ok.value.at("answer") == "Paris",
          fmt::format("{} schema retries", ok.schema_retries));
  MockClient broken(scripted({"never json"}));
  std::string kind;
  try {
    complete_structured(broken, request, fields);
  } catch (const StructuredOutputError& e) {
    kind = std::string(to_string(e.kind()));
  }
  require(kind == "StructuredOutputError", "always-invalid did not raise StructuredOutputError");
  return {true, fmt::format("succeeded after {} schema retries; always-invalid raised {} after {} calls",
                            ok.schema_retries, kind, broken.calls())};
}

Outcome concurrency_independence() {
  std::vector<std::string> notes;
  for (const auto& name : kFixtures) {
    const auto task = load(name);
    require(task.ok(), name + " does not load");
    std::optional<std::multiset<std::string>> reference;
    for (int k : {1, 4, 16}) {
      testing::TempDir dir;
      run_task(task, name, dir / "run", k, 24);
      std::multiset<std::string> lines;
      for (const auto& [id, line] : written_outputs(dir / "run")) lines.insert(line);
      require(!lines.empty(), name + " wrote nothing");
      if (!reference) {
        reference = lines;
      } else {
        require(lines == *reference, fmt::format("{} differs at concurrency {}", name, k));
      }
    }
    notes.push_back(fmt::format("{}:{}", name, reference->size()));
  }
  return {true, "identical at 1/4/16 for " + fmt::format("{}", fmt::join(notes, " "))};
}

}  // namespace
}  // namespace grasp::acceptance

int main() {
  using namespace grasp::acceptance;
  spdlog::set_level(spdlog::level::off);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"config fidelity", config_fidelity},
      {"throughput", throughput},
      {"exactly-once resume", exactly_once_resume},
      {"conditional loop", conditional_loop},
      {"schema skip", schema_skip},
      {"oasst tree", oasst_tree},
      {"sampler statistics", sampler_statistics},
      {"structured fallback", structured_fallback},
      {"concurrency independence", concurrency_independence},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome outcome;
    try {
      outcome = criteria[i].second();
    } catch (const std::exception& e) {
      outcome = {false, e.what()};
    }
    failed += !outcome.pass;
    std::cout << fmt::format("[{}] {}. {}: {}", outcome.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                             outcome.detail)
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
