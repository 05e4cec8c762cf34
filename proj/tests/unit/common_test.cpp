#include <gtest/gtest.h>

#include "grasp/common.hpp"
#include "helpers.hpp"

namespace grasp {
namespace {

using testing::oracle;

TEST(Common, Sha256MatchesReference) {
  for (const auto& [input, digest] : oracle().at("sha256").items()) {
    EXPECT_EQ(sha256_hex(input), digest.get<std::string>()) << input;
  }
}

TEST(Common, Base64MatchesReference) {
  for (const auto& [input, encoded] : oracle().at("base64").items()) {
    EXPECT_EQ(base64_encode(input), encoded.get<std::string>());
    EXPECT_EQ(base64_decode(encoded.get<std::string>()), input);
  }
}

TEST(Common, Base64RoundTripsArbitraryBytes) {
  testing::for_all(
      11, 200,
      [](std::mt19937& rng) {
        std::uniform_int_distribution<int> len(0, 64), byte(0, 255);
        std::string s;
        for (int n = len(rng); n > 0; --n) s += static_cast<char>(byte(rng));
        return s;
      },
      [](const std::string& bytes, int) { EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes); });
}

TEST(Common, SeedMixersMatchReference) {
  for (const auto& [input, value] : oracle().at("splitmix64").items()) {
    EXPECT_EQ(std::to_string(splitmix64(std::stoull(input))), value.get<std::string>());
  }
  for (const auto& [input, value] : oracle().at("hash64").items()) {
    EXPECT_EQ(std::to_string(hash64(input)), value.get<std::string>());
  }
}

TEST(Common, StringHelpers) {
  EXPECT_EQ(trim("  a b \n"), "a b");
  EXPECT_EQ(split("a,,b", ','), (std::vector<std::string>{"a", "", "b"}));
  EXPECT_TRUE(starts_with("prefix.rest", "prefix"));
  EXPECT_TRUE(ends_with("file.jsonl", ".jsonl"));
  EXPECT_EQ(to_lower("MiXeD"), "mixed");
}

TEST(Common, Utf8Validation) {
  EXPECT_TRUE(valid_utf8("plain"));
  EXPECT_TRUE(valid_utf8("caf\xc3\xa9 \xe2\x82\xac \xf0\x9f\x98\x80"));
  EXPECT_FALSE(valid_utf8("\xc3"));
  EXPECT_FALSE(valid_utf8("\xff\xfe"));
  EXPECT_FALSE(valid_utf8("\xc0\xaf"));  // overlong
  EXPECT_FALSE(valid_utf8("\xed\xa0\x80"));  // surrogate
}

TEST(Common, CanonicalDumpIgnoresKeyOrder) {
  testing::for_all(
      5, 100,
      [](std::mt19937& rng) {
        std::vector<std::pair<std::string, int>> entries;
        for (int i = 0; i < 6; ++i) entries.emplace_back(testing::random_word(rng) + std::to_string(i), i);
        return entries;
      },
      [](std::vector<std::pair<std::string, int>> entries, int) {
        Value forward = Value::object(), backward = Value::object();
        for (const auto& [k, v] : entries) forward[k] = {{"n", v}, {"k", k}};
        for (auto it = entries.rbegin(); it != entries.rend(); ++it) backward[it->first] = {{"k", it->first}, {"n", it->second}};
        EXPECT_EQ(canonical_dump(forward), canonical_dump(backward));
      });
}

TEST(Common, DiagnosticsRender) {
  Diagnostic d = make_error("graph_config.edges[0]", "unknown node x");
  d.line = 3;
  d.column = 7;
  EXPECT_EQ(render(d), "ERROR graph_config.edges[0]: unknown node x (line 3, column 7)");
  const std::vector<Diagnostic> only_warnings = {make_warning("a", "b"), make_note("c", "d")};
  EXPECT_FALSE(has_errors(only_warnings));
  EXPECT_TRUE(has_errors(std::vector<Diagnostic>{d}));
}

TEST(Common, TransportErrorTransience) {
  EXPECT_TRUE(TransportError(0, "").transient());
  EXPECT_TRUE(TransportError(429, "").transient());
  EXPECT_TRUE(TransportError(503, "").transient());
  EXPECT_FALSE(TransportError(400, "").transient());
  EXPECT_FALSE(TransportError(404, "").transient());
}

}  // namespace
}  // namespace grasp
