#include "grasp/json_schema.hpp"

#include <fmt/format.h>

#include "grasp/type_expr.hpp"

namespace grasp {

Value fields_to_json_schema(const std::vector<FieldDef>& fields) {
  Value properties = Value::object();
  Value required = Value::array();
  for (const auto& field : fields) {
    const auto type = parse_type_expr(field.type);
    Value schema = type ? to_json_schema(*type) : Value::object();
    if (!field.description.empty()) schema["description"] = field.description;
    properties[field.name] = std::move(schema);
    required.push_back(field.name);
  }
  return Value{{"type", "object"}, {"properties", std::move(properties)}, {"required", std::move(required)}};
}

std::vector<std::string> validate_fields(const Value& value, const std::vector<FieldDef>& fields) {
  if (!value.is_object()) return {"expected a JSON object"};
  std::vector<std::string> problems;
  for (const auto& field : fields) {
    if (!value.contains(field.name)) {
      problems.push_back(fmt::format("{}: missing", field.name));
      continue;
    }
    const auto type = parse_type_expr(field.type);
    if (type && !type_matches(*type, value.at(field.name))) {
      problems.push_back(fmt::format("{}: expected {}, got {}", field.name, to_string(*type),
                                     value.at(field.name).dump()));
    }
  }
  return problems;
}

std::optional<Value> extract_json(std::string_view text) {
  auto attempt = [](std::string_view s) -> std::optional<Value> {
    const Value v = Value::parse(s, nullptr, false);
    if (v.is_discarded()) return std::nullopt;
    return v;
  };
  const std::string trimmed = trim(text);
  if (auto v = attempt(trimmed)) return v;
  if (starts_with(trimmed, "```")) {
    const auto body = trimmed.find('\n');
    const auto close = trimmed.rfind("```");
    if (body != std::string::npos && close != std::string::npos && close > body) {
      if (auto v = attempt(std::string_view(trimmed).substr(body + 1, close - body - 1))) return v;
    }
  }
  const auto open = trimmed.find('{');
  const auto close = trimmed.rfind('}');
  if (open != std::string::npos && close != std::string::npos && close > open) {
    return attempt(std::string_view(trimmed).substr(open, close - open + 1));
  }
  return std::nullopt;
}

}  // namespace grasp
