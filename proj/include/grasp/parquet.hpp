#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "grasp/common.hpp"

namespace grasp::parquet {

// Minimal Parquet codec: flat schemas, uncompressed pages.
//
// Reading supports BOOLEAN/INT32/INT64/FLOAT/DOUBLE/BYTE_ARRAY leaves, REQUIRED
// or OPTIONAL repetition, PLAIN and dictionary encodings, data page v1 and v2,
// and any number of row groups. Writing emits one row group with one PLAIN data
// page per column. Columns whose values are not all of one primitive JSON type
// are stored as JSON text and listed under the `grasp.json_columns` footer key,
// so records round-trip exactly. A missing field and a null field differ: a
// missing field is an undefined cell; a null is only representable in a JSON
// column.

std::vector<Value> decode(std::string_view bytes);
std::string encode(const std::vector<Value>& records);

std::vector<Value> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<Value>& records);

}  // namespace grasp::parquet
