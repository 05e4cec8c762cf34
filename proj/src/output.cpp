#include "grasp/output.hpp"

#include <map>
#include <mutex>
#include <regex>

#include <fmt/format.h>

#include "grasp/type_expr.hpp"

namespace grasp {

namespace {

Value state_view(const RecordState& state) {
  Value view = state.values;
  if (!view.contains("messages")) view["messages"] = state.history_value();
  if (!view.contains("record_id")) view["record_id"] = state.record_id;
  return view;
}

const std::regex& cached_regex(const std::string& pattern) {
  static std::mutex mutex;
  static std::map<std::string, std::regex> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(pattern);
  if (it == cache.end()) it = cache.emplace(pattern, std::regex(pattern, std::regex::ECMAScript)).first;
  return it->second;
}

}  // namespace

BuildResult build_record(const RecordState& state, const OutputConfig& output, const PipelineConfig& config,
                         const Registry& registry) {
  BuildResult result;
  const Value view = state_view(state);
  Value record = Value::object();
  if (output.output_map.empty()) {
    record = state.values;
  }
  for (const auto& field : output.output_map) {
    try {
      switch (field.kind) {
        case OutputField::Kind::from:
          if (!view.contains(field.from)) {
            throw Error(ErrorKind::missing_key, fmt::format("state key '{}' missing", field.from));
          }
          record[field.name] = view.at(field.from);
          break;
        case OutputField::Kind::value:
          record[field.name] = field.value.is_string() ? substitute_config_paths(config, field.value.get<std::string>())
                                                       : field.value;
          break;
        case OutputField::Kind::transform: {
          const OutputTransformFn* fn = registry.output_transform(field.transform);
          if (!fn) throw Error(ErrorKind::config, "unknown output transform " + field.transform);
          record[field.name] = (*fn)(view);
          break;
        }
      }
    } catch (const std::exception& e) {
      result.errors.push_back(fmt::format("{}: {}", field.name, e.what()));
    }
  }
  if (!result.errors.empty()) return result;
  if (!output.generator.empty()) {
    const GeneratorFn* gen = registry.generator(output.generator);
    if (!gen) {
      result.errors.push_back("unknown output generator " + output.generator);
      return result;
    }
    try {
      record = (*gen)(view, record, config);
    } catch (const std::exception& e) {
      result.errors.push_back(fmt::format("generator {}: {}", output.generator, e.what()));
      return result;
    }
  }
  result.record = std::move(record);
  return result;
}

Validation validate_record(const Value& record, const std::optional<SchemaConfig>& schema, const Registry& registry) {
  Validation v;
  if (!schema) return v;
  auto fail = [&](std::string reason) {
    v.valid = false;
    v.reasons.push_back(std::move(reason));
  };
  if (!record.is_object()) {
    fail("record is not an object");
    return v;
  }
  if (!schema->schema_class.empty()) {
    const RecordValidatorFn* fn = registry.record_validator(schema->schema_class);
    if (!fn) {
      fail("unknown schema validator " + schema->schema_class);
    } else {
      for (auto& reason : (*fn)(record)) fail(std::move(reason));
    }
  }
  for (const auto& field : schema->fields) {
    if (!record.contains(field.name)) {
      fail(field.name + ": missing");
      continue;
    }
    const Value& value = record.at(field.name);
    const auto type = parse_type_expr(field.type);
    if (!type) {
      fail(fmt::format("{}: unknown type {}", field.name, field.type));
      continue;
    }
    if (!type_matches(*type, value)) {
      fail(fmt::format("{}: expected {}", field.name, to_string(*type)));
      continue;
    }
    for (const auto& rule : field.rules) {
      switch (rule.kind) {
        case SchemaRule::Kind::is_greater_than:
          if (!value.is_number() || !rule.operand.is_number() || !(value.get<double>() > rule.operand.get<double>())) {
            fail(fmt::format("{}: {} not > {}", field.name, display(value), display(rule.operand)));
          }
          break;
        case SchemaRule::Kind::is_less_than:
          if (!value.is_number() || !rule.operand.is_number() || !(value.get<double>() < rule.operand.get<double>())) {
            fail(fmt::format("{}: {} not < {}", field.name, display(value), display(rule.operand)));
          }
          break;
        case SchemaRule::Kind::regex: {
          const std::string pattern = display(rule.operand);
          bool matched = false;
          try {
            matched = value.is_string() && std::regex_match(value.get<std::string>(), cached_regex(pattern));
          } catch (const std::regex_error&) {
            fail(fmt::format("{}: invalid regex /{}/", field.name, pattern));
            break;
          }
          if (!matched) fail(fmt::format("{}: {} does not match /{}/", field.name, value.dump(), pattern));
          break;
        }
        case SchemaRule::Kind::non_empty: {
          if (!rule.operand.is_boolean() || !rule.operand.get<bool>()) break;
          const bool empty = value.is_null() || (value.is_string() && value.get<std::string>().empty()) ||
                             ((value.is_array() || value.is_object()) && value.empty());
          if (empty) fail(field.name + ": empty");
          break;
        }
      }
    }
  }
  return v;
}

}  // namespace grasp
