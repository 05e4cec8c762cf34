#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "grasp/common.hpp"

namespace grasp {

/// A field type as written in schema and structured-output blocks:
/// `str`, `int`, `float`, `bool`, `any`, `list[T]`, `dict[K, V]`.
struct TypeExpr {
  enum class Kind { str, integer, number, boolean, any, list, dict };

  Kind kind = Kind::any;
  std::vector<TypeExpr> args;  // list: {element}; dict: {key, value}

  bool operator==(const TypeExpr&) const = default;

  bool is_numeric() const { return kind == Kind::integer || kind == Kind::number; }
};

/// Parses a type expression. Accepts Python-style spellings
/// (`List[Dict[str, Any]]`, `string`, `integer`) as aliases.
std::optional<TypeExpr> parse_type_expr(std::string_view text);

std::string to_string(const TypeExpr& type);

/// True when `value` inhabits `type`. Integers satisfy `float`; booleans never
/// satisfy `int`.
bool type_matches(const TypeExpr& type, const Value& value);

/// JSON-schema fragment describing `type`.
Value to_json_schema(const TypeExpr& type);

}  // namespace grasp
