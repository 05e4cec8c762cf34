#include "grasp/type_expr.hpp"

#include <cctype>

namespace grasp {

namespace {

class TypeParser {
 public:
  explicit TypeParser(std::string_view text) : text_(text) {}

  std::optional<TypeExpr> parse_all() {
    auto type = parse();
    skip_space();
    if (!type || pos_ != text_.size()) return std::nullopt;
    return type;
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::string identifier() {
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_' ||
            text_[pos_] == '.')) {
      ++pos_;
    }
    return to_lower(text_.substr(start, pos_ - start));
  }

  bool consume(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  std::optional<TypeExpr> parse() {
    std::string name = identifier();
    if (const auto dot = name.rfind('.'); dot != std::string::npos) {
      name = name.substr(dot + 1);  // typing.List -> list
    }
    TypeExpr type;
    if (name == "str" || name == "string") {
      type.kind = TypeExpr::Kind::str;
    } else if (name == "int" || name == "integer") {
      type.kind = TypeExpr::Kind::integer;
    } else if (name == "float" || name == "number" || name == "double") {
      type.kind = TypeExpr::Kind::number;
    } else if (name == "bool" || name == "boolean") {
      type.kind = TypeExpr::Kind::boolean;
    } else if (name == "any" || name == "object") {
      type.kind = TypeExpr::Kind::any;
    } else if (name == "list" || name == "array") {
      type.kind = TypeExpr::Kind::list;
      if (consume('[')) {
        auto element = parse();
        if (!element || !consume(']')) return std::nullopt;
        type.args.push_back(std::move(*element));
      } else {
        type.args.push_back(TypeExpr{});
      }
    } else if (name == "dict" || name == "map") {
      type.kind = TypeExpr::Kind::dict;
      if (consume('[')) {
        auto key = parse();
        if (!key || !consume(',')) return std::nullopt;
        auto value = parse();
        if (!value || !consume(']')) return std::nullopt;
        if (key->kind != TypeExpr::Kind::str && key->kind != TypeExpr::Kind::any) {
          return std::nullopt;  // JSON object keys are always strings
        }
        type.args.push_back(std::move(*key));
        type.args.push_back(std::move(*value));
      } else {
        type.args.push_back(TypeExpr{TypeExpr::Kind::str, {}});
        type.args.push_back(TypeExpr{});
      }
    } else {
      return std::nullopt;
    }
    return type;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

std::optional<TypeExpr> parse_type_expr(std::string_view text) {
  return TypeParser(text).parse_all();
}

std::string to_string(const TypeExpr& type) {
  switch (type.kind) {
    case TypeExpr::Kind::str: return "str";
    case TypeExpr::Kind::integer: return "int";
    case TypeExpr::Kind::number: return "float";
    case TypeExpr::Kind::boolean: return "bool";
    case TypeExpr::Kind::any: return "any";
    case TypeExpr::Kind::list: return "list[" + to_string(type.args.at(0)) + "]";
    case TypeExpr::Kind::dict:
      return "dict[" + to_string(type.args.at(0)) + ", " + to_string(type.args.at(1)) + "]";
  }
  return "any";
}

bool type_matches(const TypeExpr& type, const Value& value) {
  switch (type.kind) {
    case TypeExpr::Kind::any: return true;
    case TypeExpr::Kind::str: return value.is_string();
    case TypeExpr::Kind::integer: return value.is_number_integer();
    case TypeExpr::Kind::number: return value.is_number();
    case TypeExpr::Kind::boolean: return value.is_boolean();
    case TypeExpr::Kind::list:
      if (!value.is_array()) return false;
      for (const auto& element : value) {
        if (!type_matches(type.args.at(0), element)) return false;
      }
      return true;
    case TypeExpr::Kind::dict:
      if (!value.is_object()) return false;
      for (const auto& [key, element] : value.items()) {
        if (!type_matches(type.args.at(1), element)) return false;
      }
      return true;
  }
  return false;
}

Value to_json_schema(const TypeExpr& type) {
  switch (type.kind) {
    case TypeExpr::Kind::any: return Value::object();
    case TypeExpr::Kind::str: return {{"type", "string"}};
    case TypeExpr::Kind::integer: return {{"type", "integer"}};
    case TypeExpr::Kind::number: return {{"type", "number"}};
    case TypeExpr::Kind::boolean: return {{"type", "boolean"}};
    case TypeExpr::Kind::list:
      return {{"type", "array"}, {"items", to_json_schema(type.args.at(0))}};
    case TypeExpr::Kind::dict:
      return {{"type", "object"}, {"additionalProperties", to_json_schema(type.args.at(1))}};
  }
  return Value::object();
}

}  // namespace grasp
