#include "grasp/registry.hpp"

#include <cctype>
#include <cmath>

#include <fmt/format.h>

namespace grasp {

Value ToolSpec::signature() const {
  return {{"type", "function"},
          {"function", {{"name", name}, {"description", description}, {"parameters", parameters}}}};
}

void Registry::add_lambda(const std::string& name, LambdaFn fn) { lambdas_[name] = std::move(fn); }
void Registry::add_router(const std::string& name, RouterFn fn) { routers_[name] = std::move(fn); }
void Registry::add_hook(const std::string& name, HookFn fn) { hooks_[name] = std::move(fn); }
void Registry::add_output_transform(const std::string& name, OutputTransformFn fn) {
  output_transforms_[name] = std::move(fn);
}
void Registry::add_generator(const std::string& name, GeneratorFn fn) { generators_[name] = std::move(fn); }
void Registry::add_record_validator(const std::string& name, RecordValidatorFn fn) {
  record_validators_[name] = std::move(fn);
}
void Registry::add_tool(const std::string& name, ToolSpec tool) {
  if (tool.name.empty()) {
    const auto dot = name.rfind('.');
    tool.name = dot == std::string::npos ? name : name.substr(dot + 1);
  }
  tools_[name] = std::move(tool);
}
void Registry::add_schema_class(const std::string& name, std::vector<FieldDef> fields) {
  schema_classes_[name] = std::move(fields);
}

namespace {

template <typename Map>
const typename Map::mapped_type* lookup(const Map& map, const std::string& name) {
  const auto it = map.find(name);
  return it == map.end() ? nullptr : &it->second;
}

}  // namespace

const LambdaFn* Registry::lambda(const std::string& name) const { return lookup(lambdas_, name); }
const RouterFn* Registry::router(const std::string& name) const { return lookup(routers_, name); }
const HookFn* Registry::hook(const std::string& name) const { return lookup(hooks_, name); }
const OutputTransformFn* Registry::output_transform(const std::string& name) const {
  return lookup(output_transforms_, name);
}
const GeneratorFn* Registry::generator(const std::string& name) const { return lookup(generators_, name); }
const RecordValidatorFn* Registry::record_validator(const std::string& name) const {
  return lookup(record_validators_, name);
}
const ToolSpec* Registry::tool(const std::string& name) const { return lookup(tools_, name); }
const std::vector<FieldDef>* Registry::schema_class(const std::string& name) const {
  return lookup(schema_classes_, name);
}

namespace builtins {

bool looks_like_valid_code(std::string_view code) {
  std::string text = trim(code);
  if (starts_with(text, "```")) {
    const auto first_newline = text.find('\n');
    const auto closing = text.rfind("```");
    if (first_newline == std::string::npos || closing <= first_newline) return false;
    text = trim(std::string_view(text).substr(first_newline + 1, closing - first_newline - 1));
  }
  if (text.empty()) return false;

  std::vector<char> stack;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '#') {
      while (i < text.size() && text[i] != '\n') ++i;
      continue;
    }
    if (c == '"' || c == '\'') {
      const bool triple = text.compare(i, 3, std::string(3, c)) == 0;
      const std::string quote = triple ? std::string(3, c) : std::string(1, c);
      i += quote.size();
      bool closed = false;
      while (i < text.size()) {
        if (text[i] == '\\') {
          i += 2;
          continue;
        }
        if (!triple && text[i] == '\n') return false;
        if (text.compare(i, quote.size(), quote) == 0) {
          i += quote.size();
          closed = true;
          break;
        }
        ++i;
      }
      if (!closed) return false;
      continue;
    }
    if (c == '(' || c == '[' || c == '{') {
      stack.push_back(c);
    } else if (c == ')' || c == ']' || c == '}') {
      const char open = c == ')' ? '(' : c == ']' ? '[' : '{';
      if (stack.empty() || stack.back() != open) return false;
      stack.pop_back();
    }
    ++i;
  }
  return stack.empty();
}

namespace {

class Arithmetic {
 public:
  explicit Arithmetic(std::string_view text) : text_(text) {}

  double run() {
    const double value = expression();
    skip();
    if (pos_ != text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    return value;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw std::invalid_argument(fmt::format("cannot evaluate '{}': {}", text_, why));
  }

  void skip() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool eat(char c) {
    skip();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  double expression() {
    double value = term();
    while (true) {
      if (eat('+')) {
        value += term();
      } else if (eat('-')) {
        value -= term();
      } else {
        return value;
      }
    }
  }

  double term() {
    double value = power();
    while (true) {
      if (eat('*')) {
        value *= power();
      } else if (eat('/')) {
        const double divisor = power();
        if (divisor == 0.0) fail("division by zero");
        value /= divisor;
      } else {
        return value;
      }
    }
  }

  double power() {
    const double base = unary();
    if (eat('^')) return std::pow(base, power());
    return base;
  }

  double unary() {
    if (eat('-')) return -unary();
    if (eat('+')) return unary();
    return primary();
  }

  double primary() {
    if (eat('(')) {
      const double value = expression();
      if (!eat(')')) fail("missing ')'");
      return value;
    }
    skip();
    const std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) {
      ++pos_;
    }
    if (start == pos_) fail("expected a number");
    try {
      return std::stod(std::string(text_.substr(start, pos_ - start)));
    } catch (const std::exception&) {
      fail("bad number");
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

bool truthy(const Value& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number()) return v.get<double>() != 0.0;
  if (v.is_string()) {
    const std::string s = to_lower(trim(v.get<std::string>()));
    return s == "true" || s == "yes" || s == "1" || s == "valid";
  }
  return false;
}

std::string text_of(const Value& values, std::initializer_list<const char*> keys) {
  for (const char* key : keys) {
    if (values.contains(key) && values.at(key).is_string()) return values.at(key).get<std::string>();
  }
  return {};
}

Value lowercase_strings(const Value& v) {
  if (v.is_string()) return to_lower(v.get<std::string>());
  if (v.is_array() || v.is_object()) {
    Value out = v;
    for (auto& item : out) item = lowercase_strings(item);
    return out;
  }
  return v;
}

Value strip_strings(const Value& v) {
  if (v.is_string()) return trim(v.get<std::string>());
  if (v.is_array() || v.is_object()) {
    Value out = v;
    for (auto& item : out) item = strip_strings(item);
    return out;
  }
  return v;
}

}  // namespace

double evaluate_arithmetic(std::string_view expression) { return Arithmetic(expression).run(); }

}  // namespace builtins

Registry Registry::with_builtins() {
  Registry r;

  // Code validation loop.
  r.add_lambda("validators.code.check_validity", [](const Value& values) {
    return Value{{"is_valid", builtins::looks_like_valid_code(builtins::text_of(values, {"solution", "code"}))}};
  });
  r.add_router("validators.code.RouteBasedOnValidity", [](const Value& values) -> std::string {
    return values.contains("is_valid") && builtins::truthy(values.at("is_valid")) ? "END" : "generate";
  });

  // Agent tools.
  r.add_tool("tasks.sim.tools.search_tool.search",
             ToolSpec{"search",
                      "Search a small offline corpus and return matching snippets.",
                      {{"type", "object"},
                       {"properties", {{"query", {{"type", "string"}, {"description", "search terms"}}}}},
                       {"required", {"query"}}},
                      [](const Value& args) -> Value {
                        if (!args.contains("query") || !args.at("query").is_string()) {
                          throw std::invalid_argument("search requires a string 'query'");
                        }
                        const std::string query = args.at("query").get<std::string>();
                        const std::uint64_t h = hash64(query);
                        return fmt::format("Top result for \"{}\": reference #{} (source: offline-index/{:04x}).",
                                           query, h % 1000, h & 0xffff);
                      }});
  r.add_tool("tasks.sim.tools.calculator_tool.calculate",
             ToolSpec{"calculate",
                      "Evaluate an arithmetic expression with + - * / ^ and parentheses.",
                      {{"type", "object"},
                       {"properties", {{"expression", {{"type", "string"}, {"description", "e.g. (2+3)*4"}}}}},
                       {"required", {"expression"}}},
                      [](const Value& args) -> Value {
                        if (!args.contains("expression") || !args.at("expression").is_string()) {
                          throw std::invalid_argument("calculate requires a string 'expression'");
                        }
                        const double result =
                            builtins::evaluate_arithmetic(args.at("expression").get<std::string>());
                        if (std::floor(result) == result && std::fabs(result) < 9e15) {
                          return static_cast<long long>(result);
                        }
                        return result;
                      }});

  // Evolve-instruct recipe.
  r.add_router("recipes.evolve_instruct.StrategyRouter", [](const Value& values) -> std::string {
    const std::string strategy = builtins::text_of(values, {"evolution_strategy"});
    return strategy.empty() ? "depth" : strategy;
  });
  r.add_lambda("recipes.evolve_instruct.collect", [](const Value& values) {
    const std::string strategy = builtins::text_of(values, {"evolution_strategy"});
    const std::string key = strategy == "breadth" ? "evolved_breadth" : "evolved_depth";
    return Value{{"evolved_instruction", builtins::text_of(values, {key.c_str()})}};
  });
  r.add_router("recipes.evolve_instruct.JudgeRouter", [](const Value& values) -> std::string {
    const std::string verdict = builtins::text_of(values, {"judgment"});
    return verdict.find("PASS") != std::string::npos ? "pass" : "fail";
  });

  // Generic helpers.
  r.add_lambda("grasp.lambdas.identity", [](const Value&) { return Value::object(); });
  r.add_hook("hooks.text.lowercase", [](const Value& values) { return builtins::lowercase_strings(values); });
  r.add_hook("hooks.text.strip", [](const Value& values) { return builtins::strip_strings(values); });
  r.add_output_transform("grasp.output.turn_count", [](const Value& values) -> Value {
    return values.contains("messages") && values.at("messages").is_array() ? values.at("messages").size() : 0;
  });
  r.add_generator("grasp.generators.passthrough",
                  [](const Value&, const Value& record, const PipelineConfig&) { return record; });

  // Schema classes.
  r.add_schema_class("schemas.qa.AnswerWithConfidence",
                     {{"answer", "str", "Main answer text"},
                      {"confidence", "float", "Confidence score between 0 and 1"}});
  r.add_record_validator("validators.custom_schemas.CustomUserSchema", [](const Value& record) {
    std::vector<std::string> reasons;
    if (!record.contains("id") || !record.at("id").is_number_integer()) {
      reasons.push_back("id: expected int");
    } else if (record.at("id").get<long long>() <= 99999) {
      reasons.push_back(fmt::format("id: {} not > 99999", record.at("id").get<long long>()));
    }
    if (!record.contains("conversation") || !record.at("conversation").is_array()) {
      reasons.push_back("conversation: expected list");
    }
    return reasons;
  });
  return r;
}

}  // namespace grasp
