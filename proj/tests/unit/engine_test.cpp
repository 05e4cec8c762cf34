#include <gtest/gtest.h>

#include <atomic>
#include <map>

#include <fmt/format.h>

#include "grasp/engine.hpp"
#include "helpers.hpp"

namespace grasp {
namespace {

using testing::InlinePipeline;

std::size_t line_count(const std::filesystem::path& path) {
  const std::string text = testing::read_file(path);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

void write_rows(const std::filesystem::path& path, int n) {
  std::string rows;
  for (int i = 0; i < n; ++i) rows += fmt::format(R"({{"id": {}, "topic": "topic {}"}})", i, i) + "\n";
  testing::write_file(path, rows);
}

constexpr const char* kChain = R"(
data_config:
  source: {type: disk, file_path: rows.jsonl, file_format: jsonl}
graph_config:
  nodes:
    draft:
      node_type: llm
      prompt: [{user: "Write about {topic}"}]
      model: {name: m}
    gate:
      node_type: lambda
      lambda: test.gate
      output_keys: [ok]
  edges:
    - {from: START, to: draft}
    - {from: draft, to: gate}
    - {from: gate, to: END}
output_config:
  output_map:
    id: {from: id}
    text: {from: draft}
)";

constexpr const char* kHashModel = "m: {mock: {mode: hash, words: 6}}";

struct Gate {
  std::atomic<int> calls{0};
  std::atomic<bool>* stop = nullptr;
  int stop_after = -1;
  std::atomic<bool> fail_odd{false};
};

InlinePipeline gated(Gate& gate) {
  return InlinePipeline(kChain, kHashModel, [&gate](Registry& r) {
    r.add_lambda("test.gate", [&gate](const Value& v) {
      const int n = ++gate.calls;
      if (gate.stop && n == gate.stop_after) gate.stop->store(true);
      if (gate.fail_odd && v.at("id").get<int>() % 2 == 1) throw std::runtime_error("odd id");
      return Value{{"ok", true}};
    });
  });
}

RunOptions options_for(const testing::TempDir& dir, const std::string& run, int concurrency = 4) {
  RunOptions o;
  o.run_dir = dir / run;
  o.base_dir = dir.path();
  o.concurrency = concurrency;
  o.checkpoint_every = 7;
  o.run_seed = 99;
  return o;
}

TEST(Engine, ResumeWritesEachRecordOnce) {
  testing::TempDir dir;
  write_rows(dir / "rows.jsonl", 60);
  Gate full_gate;
  auto full = gated(full_gate);
  run(full.pipeline(), options_for(dir, "full"));

  for (int stop_after : {1, 23, 59}) {
    Gate gate;
    std::atomic<bool> stop{false};
    gate.stop = &stop;
    gate.stop_after = stop_after;
    auto p = gated(gate);
    const std::string name = fmt::format("cut{}", stop_after);
    RunOptions o = options_for(dir, name);
    o.stop = &stop;
    const RunReport first = run(p.pipeline(), o);
    EXPECT_TRUE(first.interrupted);
    EXPECT_LT(first.counters.succeeded, 60);
    o.stop = nullptr;
    o.resume = true;
    const RunReport second = run(p.pipeline(), o);
    EXPECT_FALSE(second.interrupted);
    EXPECT_EQ(second.total_counters.succeeded, 60);
    EXPECT_EQ(first.counters.succeeded + second.counters.succeeded, 60);
    EXPECT_EQ(written_outputs(dir / name), written_outputs(dir / "full")) << "stop after " << stop_after;
    EXPECT_EQ(line_count(second.output_path), 60u);
  }
}

TEST(Engine, ResumeRejectsChangedConfig) {
  testing::TempDir dir;
  write_rows(dir / "rows.jsonl", 3);
  Gate gate;
  auto p = gated(gate);
  run(p.pipeline(), options_for(dir, "r"));
  p.config.output.output_map.pop_back();
  RunOptions o = options_for(dir, "r");
  o.resume = true;
  try {
    run(p.pipeline(), o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::resume);
    EXPECT_NE(std::string(e.what()).find("hash"), std::string::npos);
  }
  o.force_resume = true;
  EXPECT_EQ(run(p.pipeline(), o).warnings.size(), 1u);
  o.run_dir = dir / "never-ran";
  EXPECT_THROW(run(p.pipeline(), o), Error);
}

TEST(Engine, FailedRecordsAreRetriedOnRequest) {
  testing::TempDir dir;
  write_rows(dir / "rows.jsonl", 10);
  Gate gate;
  gate.fail_odd = true;
  auto p = gated(gate);
  const RunReport first = run(p.pipeline(), options_for(dir, "r"));
  EXPECT_EQ(first.counters.succeeded, 5);
  EXPECT_EQ(first.counters.failed, 5);
  const Value failure = Value::parse(testing::read_file(dir / "r" / "failures.jsonl").substr(
      0, testing::read_file(dir / "r" / "failures.jsonl").find('\n')));
  EXPECT_EQ(failure.at("node"), "gate");

  gate.fail_odd = false;
  RunOptions o = options_for(dir, "r");
  o.resume = true;
  EXPECT_EQ(run(p.pipeline(), o).counters.processed, 0);  // failures stay failed by default
  o.retry_failed = true;
  const RunReport retried = run(p.pipeline(), o);
  EXPECT_EQ(retried.counters.succeeded, 5);
  EXPECT_EQ(written_outputs(dir / "r").size(), 10u);
}

TEST(Engine, SchemaViolationsAreSkipped) {
  testing::TempDir dir;
  std::string rows;
  for (int i = 0; i < 10; ++i) {
    const std::string score = i == 2 ? "5" : i == 5 ? "\"high\"" : i == 8 ? "99999" : std::to_string(100000 + i);
    rows += fmt::format(R"({{"id": {}, "score": {}}})", i, score) + "\n";
  }
  testing::write_file(dir / "rows.jsonl", rows);
  InlinePipeline p(R"(
data_config:
  source: {type: disk, file_path: rows.jsonl, file_format: jsonl}
graph_config:
  nodes:
    note:
      node_type: llm
      prompt: [{user: "Comment on {score}"}]
      model: {name: m}
  edges:
    - {from: START, to: note}
    - {from: note, to: END}
output_config:
  output_map:
    id: {from: id}
    score: {from: score}
    note: {from: note}
schema_config:
  fields:
    - {name: id, type: int}
    - {name: score, type: int, is_greater_than: 99999}
    - {name: note, type: str}
)",
                   kHashModel);
  const RunReport r = run(p.pipeline(), options_for(dir, "r"));
  EXPECT_EQ(r.counters.succeeded, 7);
  EXPECT_EQ(r.counters.skipped, 3);
  EXPECT_EQ(r.counters.succeeded + r.counters.skipped, 10);
  EXPECT_EQ(line_count(r.output_path), 7u);
  std::istringstream failures(testing::read_file(dir / "r" / "failures.jsonl"));
  std::set<int> ids;
  for (std::string line; std::getline(failures, line);) {
    const Value f = Value::parse(line);
    EXPECT_EQ(f.at("error_kind"), "schema");
    ids.insert(f.at("record_id").get<int>());
  }
  EXPECT_EQ(ids, (std::set<int>{2, 5, 8}));
}

TEST(Engine, OutputIndependentOfConcurrency) {
  for (const std::string task : {"b1_dataless", "b2_conditional", "research_agent", "structured_answer", "evolve_instruct"}) {
    std::multiset<std::string> reference;
    for (int k : {1, 4, 16}) {
      testing::TempDir dir;
      auto loaded = testing::load_fixture_task(task, testing::builtins());
      ASSERT_TRUE(loaded.ok()) << task;
      ModelPool pool = make_pool(loaded.models);
      RunOptions o;
      o.run_dir = dir / "run";
      o.base_dir = testing::task_dir(task);
      o.concurrency = k;
      o.run_seed = 5;
      o.num_records = 12;
      run(Pipeline{*loaded.config, *loaded.graph, testing::builtins(), pool}, o);
      std::multiset<std::string> lines;
      for (auto& [id, line] : written_outputs(dir / "run")) lines.insert(line);
      EXPECT_FALSE(lines.empty()) << task;
      if (k == 1) {
        reference = lines;
      } else {
        EXPECT_EQ(lines, reference) << task << " at concurrency " << k;
      }
    }
  }
}

TEST(Engine, DatalessModeGeneratesRequestedCount) {
  testing::TempDir dir;
  auto loaded = testing::load_fixture_task("b1_dataless", testing::builtins());
  ASSERT_TRUE(loaded.ok());
  ModelPool pool = make_pool(loaded.models);
  RunOptions o;
  o.run_dir = dir / "run";
  o.num_records = 9;
  const RunReport r = run(Pipeline{*loaded.config, *loaded.graph, testing::builtins(), pool}, o);
  EXPECT_EQ(r.counters.succeeded, 9);
  const auto outputs = written_outputs(dir / "run");
  std::set<std::string> distinct;
  for (auto& [id, line] : outputs) distinct.insert(line);
  EXPECT_EQ(distinct.size(), 9u);
}

TEST(Engine, CheckpointRoundTrips) {
  Checkpoint cp;
  cp.manifest.run_id = "run-x";
  cp.manifest.run_seed = 18446744073709551615ull;
  cp.manifest.counters = {4, 2, 1, 1};
  cp.completed = {1, 2, 5};
  cp.failed[3] = FailureEntry{3, "gate", "NodeFailure", "boom", 2, {}};
  cp.sink_positions["output"] = 120;
  const Checkpoint back = Checkpoint::from_value(Value::parse(cp.to_value().dump()));
  EXPECT_EQ(back.to_value(), cp.to_value());
  EXPECT_EQ(back.manifest.run_seed, cp.manifest.run_seed);
  EXPECT_EQ(back.manifest.counters, cp.manifest.counters);
}

}  // namespace
}  // namespace grasp
