#pragma once

#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace grasp::csv {

/// Incremental RFC-4180 reader: comma separated, `"` quoting with `""`
/// escapes, CRLF or LF line endings, quoted fields may span lines.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  /// Next row, or nullopt at end of input. Throws std::runtime_error on an
  /// unterminated quoted field.
  std::optional<std::vector<std::string>> next();

  /// 1-based line on which the last returned row started.
  std::size_t line() const { return row_line_; }

 private:
  std::istream& in_;
  std::size_t current_line_ = 1;
  std::size_t row_line_ = 0;
};

/// Quotes a field when it contains a comma, quote, CR or LF.
std::string escape(const std::string& field);

}  // namespace grasp::csv
