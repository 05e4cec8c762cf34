#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace grasp {

/// Every record, node output and config subtree is held as an insertion-ordered
/// JSON value so that field order survives serialization.
using Value = nlohmann::ordered_json;

using RecordId = std::int64_t;

enum class ErrorKind {
  config,
  path_not_found,
  non_scalar_path,
  source_not_found,
  source_schema,
  row_decode,
  sink,
  transport,
  backend_exhausted,
  backend_rejected,
  structured_output,
  media_load,
  missing_key,
  undeclared_output,
  node_failure,
  agent_budget_exceeded,
  routing,
  loop_budget_exceeded,
  resume,
  conversion,
  merge,
  parquet,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// HTTP-level failure from a transport. status 0 means the request never got
/// a response (connect failure, timeout).
class TransportError : public Error {
 public:
  TransportError(int status, const std::string& message)
      : Error(ErrorKind::transport, message), status_(status) {}

  int status() const noexcept { return status_; }
  bool transient() const noexcept {
    return status_ == 0 || status_ == 429 || status_ >= 500;
  }

 private:
  int status_;
};

enum class Severity { error, warning, note };

struct Diagnostic {
  Severity severity = Severity::error;
  std::string path;
  std::string message;
  int line = 0;  // 1-based; 0 when unknown
  int column = 0;

  bool operator==(const Diagnostic&) const = default;
};

std::string_view to_string(Severity severity);

/// `LEVEL path: message`, with `(line L, column C)` appended when known.
std::string render(const Diagnostic& diagnostic);

bool has_errors(std::span<const Diagnostic> diagnostics);

Diagnostic make_error(std::string path, std::string message);
Diagnostic make_warning(std::string path, std::string message);
Diagnostic make_note(std::string path, std::string message);

// Hashing and encoding helpers (OpenSSL-backed).
std::string sha256_hex(std::string_view data);
std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

/// Deterministic 64-bit mix used to derive RNG seeds.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t hash64(std::string_view data);

std::string trim(std::string_view text);
bool starts_with(std::string_view text, std::string_view prefix);
bool ends_with(std::string_view text, std::string_view suffix);
std::vector<std::string> split(std::string_view text, char delimiter);
std::string to_lower(std::string_view text);
bool valid_utf8(std::string_view text);

/// Canonical serialization with object keys sorted; used for stable digests.
std::string canonical_dump(const Value& value);

/// A value rendered for text substitution: strings verbatim, everything else
/// as compact JSON.
std::string display(const Value& value);

}  // namespace grasp
