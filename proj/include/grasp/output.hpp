#pragma once

#include <optional>
#include <string>
#include <vector>

#include "grasp/config.hpp"
#include "grasp/registry.hpp"
#include "grasp/runtime.hpp"

namespace grasp {

struct BuildResult {
  std::optional<Value> record;      // unset when any field failed
  std::vector<std::string> errors;  // one per failed field
};

/// Assembles the output record in output_map order. With an empty output_map
/// the record is the state values. A configured generator sees the
/// assembled record last and may replace it.
BuildResult build_record(const RecordState& state, const OutputConfig& output, const PipelineConfig& config,
                         const Registry& registry);

struct Validation {
  bool valid = true;
  std::vector<std::string> reasons;  // field order
};

/// Type checks, then rule checks, for every declared field. Absent schema
/// means valid.
Validation validate_record(const Value& record, const std::optional<SchemaConfig>& schema, const Registry& registry);

}  // namespace grasp
