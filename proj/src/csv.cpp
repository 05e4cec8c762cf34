#include "grasp/csv.hpp"

#include <stdexcept>

namespace grasp::csv {

std::optional<std::vector<std::string>> Reader::next() {
  int c = in_.get();
  if (c == std::char_traits<char>::eof()) return std::nullopt;
  row_line_ = current_line_;

  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool after_quote = false;
  while (true) {
    if (c == std::char_traits<char>::eof()) {
      if (quoted) throw std::runtime_error("unterminated quoted field starting on line " + std::to_string(row_line_));
      row.push_back(std::move(field));
      return row;
    }
    const char ch = static_cast<char>(c);
    if (quoted) {
      if (ch == '"') {
        if (in_.peek() == '"') {
          in_.get();
          field.push_back('"');
        } else {
          quoted = false;
          after_quote = true;
        }
      } else {
        if (ch == '\n') ++current_line_;
        field.push_back(ch);
      }
    } else if (ch == ',') {
      row.push_back(std::move(field));
      field.clear();
      after_quote = false;
    } else if (ch == '\r' && in_.peek() == '\n') {
      // handled with the following \n
    } else if (ch == '\n') {
      ++current_line_;
      row.push_back(std::move(field));
      return row;
    } else if (ch == '"' && field.empty() && !after_quote) {
      quoted = true;
    } else {
      field.push_back(ch);
    }
    c = in_.get();
  }
}

std::string escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace grasp::csv
