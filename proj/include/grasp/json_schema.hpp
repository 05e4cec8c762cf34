#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "grasp/common.hpp"
#include "grasp/config.hpp"

namespace grasp {

/// JSON-schema object document for a structured-output field list.
Value fields_to_json_schema(const std::vector<FieldDef>& fields);

/// Problems with `value` against `fields`: not an object, missing fields,
/// type mismatches. Extra fields are allowed. Empty means valid.
std::vector<std::string> validate_fields(const Value& value, const std::vector<FieldDef>& fields);

/// Parses model text as JSON, tolerating a surrounding ``` fence or prose
/// around a single top-level object. nullopt when nothing parses.
std::optional<Value> extract_json(std::string_view text);

}  // namespace grasp
