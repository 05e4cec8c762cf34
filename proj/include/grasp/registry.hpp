#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "grasp/common.hpp"
#include "grasp/config.hpp"

namespace grasp {

/// Lambda node body: read view of the state values in, partial update out.
using LambdaFn = std::function<Value(const Value& values)>;

/// Router for a conditional edge: state values in, path_map label out.
using RouterFn = std::function<std::string(const Value& values)>;

/// Pre/post hook: returns the transformed values.
using HookFn = std::function<Value(const Value& values)>;

/// Output-map transform: whole state values in, field value out.
using OutputTransformFn = std::function<Value(const Value& values)>;

/// Custom output generator: may replace the assembled record.
using GeneratorFn =
    std::function<Value(const Value& values, const Value& record, const PipelineConfig& config)>;

/// Record-level validator for `schema_config.schema`: returns rejection reasons.
using RecordValidatorFn = std::function<std::vector<std::string>(const Value& record)>;

struct ToolSpec {
  std::string name;
  std::string description;
  Value parameters = Value::object();  // JSON schema
  std::function<Value(const Value& arguments)> call;
  bool serialized = false;  // callable is not safe for concurrent use

  /// The signature as sent on the wire.
  Value signature() const;
};

/// Named callables addressed by dotted strings in the YAML.
class Registry {
 public:
  /// Registry preloaded with every built-in callable.
  static Registry with_builtins();

  void add_lambda(const std::string& name, LambdaFn fn);
  void add_router(const std::string& name, RouterFn fn);
  void add_hook(const std::string& name, HookFn fn);
  void add_output_transform(const std::string& name, OutputTransformFn fn);
  void add_generator(const std::string& name, GeneratorFn fn);
  void add_record_validator(const std::string& name, RecordValidatorFn fn);
  void add_tool(const std::string& name, ToolSpec tool);
  void add_schema_class(const std::string& name, std::vector<FieldDef> fields);

  const LambdaFn* lambda(const std::string& name) const;
  const RouterFn* router(const std::string& name) const;
  const HookFn* hook(const std::string& name) const;
  const OutputTransformFn* output_transform(const std::string& name) const;
  const GeneratorFn* generator(const std::string& name) const;
  const RecordValidatorFn* record_validator(const std::string& name) const;
  const ToolSpec* tool(const std::string& name) const;
  const std::vector<FieldDef>* schema_class(const std::string& name) const;

 private:
  std::map<std::string, LambdaFn> lambdas_;
  std::map<std::string, RouterFn> routers_;
  std::map<std::string, HookFn> hooks_;
  std::map<std::string, OutputTransformFn> output_transforms_;
  std::map<std::string, GeneratorFn> generators_;
  std::map<std::string, RecordValidatorFn> record_validators_;
  std::map<std::string, ToolSpec> tools_;
  std::map<std::string, std::vector<FieldDef>> schema_classes_;
};

namespace builtins {

/// Bracket and quote balance check used by `validators.code.check_validity`.
bool looks_like_valid_code(std::string_view code);

/// Arithmetic evaluator behind the calculator tool (+ - * / ^, parentheses).
double evaluate_arithmetic(std::string_view expression);

}  // namespace builtins

}  // namespace grasp
