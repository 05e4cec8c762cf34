#include "grasp/common.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include <fmt/format.h>
#include <openssl/evp.h>
#include <openssl/sha.h>

namespace grasp {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "ConfigError";
    case ErrorKind::path_not_found: return "PathNotFound";
    case ErrorKind::non_scalar_path: return "NonScalarPath";
    case ErrorKind::source_not_found: return "SourceNotFound";
    case ErrorKind::source_schema: return "SourceSchemaError";
    case ErrorKind::row_decode: return "RowDecodeError";
    case ErrorKind::sink: return "SinkError";
    case ErrorKind::transport: return "TransportError";
    case ErrorKind::backend_exhausted: return "BackendExhausted";
    case ErrorKind::backend_rejected: return "BackendRejected";
    case ErrorKind::structured_output: return "StructuredOutputError";
    case ErrorKind::media_load: return "MediaLoadError";
    case ErrorKind::missing_key: return "MissingKeyError";
    case ErrorKind::undeclared_output: return "UndeclaredOutput";
    case ErrorKind::node_failure: return "NodeFailure";
    case ErrorKind::agent_budget_exceeded: return "AgentBudgetExceeded";
    case ErrorKind::routing: return "RoutingError";
    case ErrorKind::loop_budget_exceeded: return "LoopBudgetExceeded";
    case ErrorKind::resume: return "ResumeError";
    case ErrorKind::conversion: return "ConversionError";
    case ErrorKind::merge: return "MergeError";
    case ErrorKind::parquet: return "ParquetError";
  }
  return "Error";
}

std::string_view to_string(Severity severity) {
  switch (severity) {
    case Severity::error: return "ERROR";
    case Severity::warning: return "WARNING";
    case Severity::note: return "NOTE";
  }
  return "ERROR";
}

std::string render(const Diagnostic& d) {
  std::string out = fmt::format("{} {}: {}", to_string(d.severity),
                                d.path.empty() ? "<root>" : d.path, d.message);
  if (d.line > 0) {
    out += fmt::format(" (line {}, column {})", d.line, d.column);
  }
  return out;
}

bool has_errors(std::span<const Diagnostic> diagnostics) {
  return std::any_of(diagnostics.begin(), diagnostics.end(),
                     [](const Diagnostic& d) { return d.severity == Severity::error; });
}

Diagnostic make_error(std::string path, std::string message) {
  return {Severity::error, std::move(path), std::move(message)};
}
Diagnostic make_warning(std::string path, std::string message) {
  return {Severity::warning, std::move(path), std::move(message)};
}
Diagnostic make_note(std::string path, std::string message) {
  return {Severity::note, std::move(path), std::move(message)};
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * SHA256_DIGEST_LENGTH);
  for (unsigned char byte : digest) {
    out.push_back(kHex[byte >> 4]);
    out.push_back(kHex[byte & 0x0f]);
  }
  return out;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int written =
      EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                      reinterpret_cast<const unsigned char*>(bytes.data()),
                      static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(written));
  return out;
}

std::string base64_decode(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) cleaned.push_back(c);
  }
  if (cleaned.size() % 4 != 0) {
    throw Error(ErrorKind::media_load, "invalid base64 length");
  }
  std::string out(3 * cleaned.size() / 4, '\0');
  const int written =
      EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                      reinterpret_cast<const unsigned char*>(cleaned.data()),
                      static_cast<int>(cleaned.size()));
  if (written < 0) throw Error(ErrorKind::media_load, "invalid base64 payload");
  std::size_t size = static_cast<std::size_t>(written);
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  if (!cleaned.empty() && cleaned.back() == '=') --size;
  if (cleaned.size() > 1 && cleaned[cleaned.size() - 2] == '=') --size;
  out.resize(size);
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash64(std::string_view data) {
  // FNV-1a followed by a splitmix finalizer.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(h);
}

std::string trim(std::string_view text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  return std::string(text.substr(begin, end - begin));
}

bool starts_with(std::string_view text, std::string_view prefix) {
  return text.substr(0, prefix.size()) == prefix;
}

bool ends_with(std::string_view text, std::string_view suffix) {
  return text.size() >= suffix.size() &&
         text.substr(text.size() - suffix.size()) == suffix;
}

std::vector<std::string> split(std::string_view text, char delimiter) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(delimiter, start);
    if (pos == std::string_view::npos) {
      parts.emplace_back(text.substr(start));
      return parts;
    }
    parts.emplace_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool valid_utf8(std::string_view text) {
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t extra = 0;
    std::uint32_t code = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      code = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      code = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      code = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= text.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(text[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      code = (code << 6) | (cc & 0x3F);
    }
    static constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
    if (code < kMin[extra] || code > 0x10FFFF || (code >= 0xD800 && code <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

namespace {

nlohmann::json sorted_copy(const Value& value) {
  // nlohmann::json (non-ordered) stores objects in a std::map, so a plain
  // conversion sorts keys recursively.
  return nlohmann::json::parse(value.dump());
}

}  // namespace

std::string canonical_dump(const Value& value) { return sorted_copy(value).dump(); }

std::string display(const Value& value) {
  if (value.is_string()) return value.get<std::string>();
  return value.dump();
}

}  // namespace grasp
