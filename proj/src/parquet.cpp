#include "grasp/parquet.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

#include <fmt/format.h>

namespace grasp::parquet {

namespace {

[[noreturn]] void fail(const std::string& message) { throw Error(ErrorKind::parquet, message); }

// ---------------------------------------------------------------------------
// Thrift compact protocol
// ---------------------------------------------------------------------------

enum CompactType : int {
  kStop = 0,
  kTrue = 1,
  kFalse = 2,
  kByte = 3,
  kI16 = 4,
  kI32 = 5,
  kI64 = 6,
  kDouble = 7,
  kBinary = 8,
  kList = 9,
  kSet = 10,
  kMap = 11,
  kStruct = 12,
};

struct TValue {
  int type = kStop;
  std::int64_t i = 0;
  double d = 0.0;
  std::string s;
  std::vector<TValue> items;     // list/set/map (map as alternating k, v)
  std::vector<int> field_ids;    // struct
  std::vector<TValue> fields;    // struct

  const TValue* field(int id) const {
    for (std::size_t k = 0; k < field_ids.size(); ++k) {
      if (field_ids[k] == id) return &fields[k];
    }
    return nullptr;
  }
  std::int64_t int_or(int id, std::int64_t fallback) const {
    const TValue* f = field(id);
    return f ? f->i : fallback;
  }
};

class CompactReader {
 public:
  CompactReader(const std::uint8_t* data, std::size_t size) : p_(data), begin_(data), end_(data + size) {}

  std::size_t consumed() const { return static_cast<std::size_t>(p_ - begin_); }

  TValue read_struct(int depth = 0) {
    if (depth > 64) fail("thrift nesting too deep");
    TValue out;
    out.type = kStruct;
    int last_id = 0;
    while (true) {
      const std::uint8_t header = byte();
      if (header == kStop) break;
      const int type = header & 0x0F;
      const int delta = header >> 4;
      const int id = delta != 0 ? last_id + delta : static_cast<int>(zigzag(varint()));
      last_id = id;
      TValue value;
      if (type == kTrue || type == kFalse) {
        value.type = type;
        value.i = type == kTrue ? 1 : 0;
      } else {
        value = read_value(type, depth + 1);
      }
      out.field_ids.push_back(id);
      out.fields.push_back(std::move(value));
    }
    return out;
  }

 private:
  std::uint8_t byte() {
    if (p_ >= end_) fail("truncated thrift data");
    return *p_++;
  }

  std::uint64_t varint() {
    std::uint64_t result = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      const std::uint8_t b = byte();
      result |= static_cast<std::uint64_t>(b & 0x7F) << shift;
      if (!(b & 0x80)) return result;
    }
    fail("varint too long");
  }

  static std::int64_t zigzag(std::uint64_t n) {
    return static_cast<std::int64_t>(n >> 1) ^ -static_cast<std::int64_t>(n & 1);
  }

  TValue read_value(int type, int depth) {
    if (depth > 64) fail("thrift nesting too deep");
    TValue v;
    v.type = type;
    switch (type) {
      case kTrue:
      case kFalse:
        // Inside collections a bool is a whole byte.
        v.i = byte() == 1 ? 1 : 0;
        break;
      case kByte:
        v.i = static_cast<std::int8_t>(byte());
        break;
      case kI16:
      case kI32:
      case kI64:
        v.i = zigzag(varint());
        break;
      case kDouble: {
        if (end_ - p_ < 8) fail("truncated double");
        std::memcpy(&v.d, p_, 8);
        p_ += 8;
        break;
      }
      case kBinary: {
        const std::uint64_t n = varint();
        if (n > static_cast<std::uint64_t>(end_ - p_)) fail("truncated binary");
        v.s.assign(reinterpret_cast<const char*>(p_), n);
        p_ += n;
        break;
      }
      case kList:
      case kSet: {
        const std::uint8_t header = byte();
        std::uint64_t size = header >> 4;
        const int element = header & 0x0F;
        if (size == 15) size = varint();
        if (size > static_cast<std::uint64_t>(end_ - p_)) fail("implausible list size");
        for (std::uint64_t k = 0; k < size; ++k) v.items.push_back(read_value(element, depth + 1));
        break;
      }
      case kMap: {
        const std::uint64_t size = varint();
        if (size > static_cast<std::uint64_t>(end_ - p_)) fail("implausible map size");
        if (size > 0) {
          const std::uint8_t types = byte();
          for (std::uint64_t k = 0; k < size; ++k) {
            v.items.push_back(read_value(types >> 4, depth + 1));
            v.items.push_back(read_value(types & 0x0F, depth + 1));
          }
        }
        break;
      }
      case kStruct:
        v = read_struct(depth + 1);
        break;
      default:
        fail(fmt::format("unknown thrift type {}", type));
    }
    return v;
  }

  const std::uint8_t* p_;
  const std::uint8_t* begin_;
  const std::uint8_t* end_;
};

class CompactWriter {
 public:
  std::string& out() { return out_; }

  void begin() { last_.push_back(0); }
  void end() {
    out_.push_back(static_cast<char>(kStop));
    last_.pop_back();
  }

  void i32(int id, std::int64_t v) {
    header(kI32, id);
    varint(zigzag(v));
  }
  void i64(int id, std::int64_t v) {
    header(kI64, id);
    varint(zigzag(v));
  }
  void binary(int id, std::string_view s) {
    header(kBinary, id);
    raw_binary(s);
  }
  void struct_field(int id) {
    header(kStruct, id);
    begin();
  }
  void list_field(int id, int element, std::size_t size) {
    header(kList, id);
    if (size < 15) {
      out_.push_back(static_cast<char>((size << 4) | element));
    } else {
      out_.push_back(static_cast<char>(0xF0 | element));
      varint(size);
    }
  }
  void list_i32(std::int64_t v) { varint(zigzag(v)); }
  void raw_binary(std::string_view s) {
    varint(s.size());
    out_.append(s);
  }

 private:
  void header(int type, int id) {
    const int delta = id - last_.back();
    if (delta > 0 && delta <= 15) {
      out_.push_back(static_cast<char>((delta << 4) | type));
    } else {
      out_.push_back(static_cast<char>(type));
      varint(zigzag(id));
    }
    last_.back() = id;
  }
  void varint(std::uint64_t v) {
    while (v >= 0x80) {
      out_.push_back(static_cast<char>((v & 0x7F) | 0x80));
      v >>= 7;
    }
    out_.push_back(static_cast<char>(v));
  }
  static std::uint64_t zigzag(std::int64_t v) {
    return (static_cast<std::uint64_t>(v) << 1) ^ static_cast<std::uint64_t>(v >> 63);
  }

  std::string out_;
  std::vector<int> last_;
};

// ---------------------------------------------------------------------------
// format constants
// ---------------------------------------------------------------------------

enum PhysicalType { kBoolean = 0, kInt32 = 1, kInt64 = 2, kInt96 = 3, kFloat = 4, kDoubleType = 5, kByteArray = 6, kFixed = 7 };
enum Encoding { kPlain = 0, kPlainDictionary = 2, kRle = 3, kRleDictionary = 8 };
enum PageType { kDataPage = 0, kDictionaryPage = 2, kDataPageV2 = 3 };
constexpr int kUtf8Converted = 0;
constexpr int kJsonConverted = 19;
constexpr std::string_view kMagic = "PAR1";
constexpr std::string_view kJsonColumnsKey = "grasp.json_columns";

// ---------------------------------------------------------------------------
// decoding
// ---------------------------------------------------------------------------

struct Column {
  std::string name;
  int type = kByteArray;
  bool optional = true;
  bool text = false;
  bool json = false;
  int type_length = 0;
};

class ByteCursor {
 public:
  ByteCursor(const std::uint8_t* data, std::size_t size) : p_(data), end_(data + size) {}

  std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }
  const std::uint8_t* take(std::size_t n) {
    if (n > remaining()) fail("page data truncated");
    const std::uint8_t* at = p_;
    p_ += n;
    return at;
  }
  std::uint32_t u32() {
    const std::uint8_t* b = take(4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::uint64_t varint() {
    std::uint64_t result = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      const std::uint8_t b = *take(1);
      result |= static_cast<std::uint64_t>(b & 0x7F) << shift;
      if (!(b & 0x80)) return result;
    }
    fail("varint too long");
  }

 private:
  const std::uint8_t* p_;
  const std::uint8_t* end_;
};

/// RLE / bit-packed hybrid run decoder.
std::vector<std::uint32_t> decode_hybrid(ByteCursor& in, int bit_width, std::size_t count) {
  std::vector<std::uint32_t> out;
  out.reserve(count);
  if (bit_width < 0 || bit_width > 32) fail("bad bit width");
  if (bit_width == 0) {
    out.assign(count, 0);
    return out;
  }
  const std::size_t value_bytes = static_cast<std::size_t>((bit_width + 7) / 8);
  while (out.size() < count) {
    const std::uint64_t header = in.varint();
    if (header & 1) {
      const std::size_t groups = header >> 1;
      const std::size_t nbytes = groups * static_cast<std::size_t>(bit_width);
      const std::uint8_t* data = in.take(nbytes);
      const std::size_t values = groups * 8;
      for (std::size_t k = 0; k < values && out.size() < count; ++k) {
        std::uint64_t v = 0;
        for (int b = 0; b < bit_width; ++b) {
          const std::size_t bit = k * static_cast<std::size_t>(bit_width) + static_cast<std::size_t>(b);
          if ((data[bit / 8] >> (bit % 8)) & 1) v |= 1ULL << b;
        }
        out.push_back(static_cast<std::uint32_t>(v));
      }
    } else {
      const std::size_t run = header >> 1;
      const std::uint8_t* data = in.take(value_bytes);
      std::uint32_t v = 0;
      for (std::size_t b = 0; b < value_bytes; ++b) v |= static_cast<std::uint32_t>(data[b]) << (8 * b);
      if (run == 0) fail("empty RLE run");
      for (std::size_t k = 0; k < run && out.size() < count; ++k) out.push_back(v);
    }
  }
  return out;
}

Value bytes_value(const Column& column, std::string bytes) {
  if (column.text || valid_utf8(bytes)) return bytes;
  return Value{{"bytes", base64_encode(bytes)}};
}

std::vector<Value> decode_plain(ByteCursor& in, const Column& column, std::size_t count) {
  std::vector<Value> out;
  out.reserve(count);
  switch (column.type) {
    case kBoolean: {
      const std::uint8_t* data = in.take((count + 7) / 8);
      for (std::size_t k = 0; k < count; ++k) out.emplace_back(((data[k / 8] >> (k % 8)) & 1) != 0);
      break;
    }
    case kInt32:
      for (std::size_t k = 0; k < count; ++k) out.emplace_back(static_cast<std::int32_t>(in.u32()));
      break;
    case kInt64:
      for (std::size_t k = 0; k < count; ++k) {
        std::int64_t v;
        std::memcpy(&v, in.take(8), 8);
        out.emplace_back(v);
      }
      break;
    case kFloat:
      for (std::size_t k = 0; k < count; ++k) {
        float v;
        std::memcpy(&v, in.take(4), 4);
        out.emplace_back(static_cast<double>(v));
      }
      break;
    case kDoubleType:
      for (std::size_t k = 0; k < count; ++k) {
        double v;
        std::memcpy(&v, in.take(8), 8);
        out.emplace_back(v);
      }
      break;
    case kByteArray:
      for (std::size_t k = 0; k < count; ++k) {
        const std::uint32_t n = in.u32();
        const std::uint8_t* data = in.take(n);
        out.push_back(bytes_value(column, std::string(reinterpret_cast<const char*>(data), n)));
      }
      break;
    case kFixed:
      if (column.type_length <= 0) fail("fixed_len_byte_array without type_length");
      for (std::size_t k = 0; k < count; ++k) {
        const std::uint8_t* data = in.take(static_cast<std::size_t>(column.type_length));
        out.push_back(bytes_value(column, std::string(reinterpret_cast<const char*>(data),
                                                      static_cast<std::size_t>(column.type_length))));
      }
      break;
    default:
      fail(fmt::format("column '{}': physical type {} unsupported", column.name, column.type));
  }
  return out;
}

std::vector<Value> decode_values(ByteCursor& in, const Column& column, int encoding, std::size_t count,
                                 const std::vector<Value>& dictionary) {
  if (encoding == kPlain) return decode_plain(in, column, count);
  if (encoding == kRle && column.type == kBoolean) {
    const std::uint32_t len = in.u32();
    ByteCursor runs(in.take(len), len);
    std::vector<Value> out;
    for (std::uint32_t bit : decode_hybrid(runs, 1, count)) out.emplace_back(bit != 0);
    return out;
  }
  if (encoding == kPlainDictionary || encoding == kRleDictionary) {
    if (count == 0) return {};
    const int width = *in.take(1);
    const auto indices = decode_hybrid(in, width, count);
    std::vector<Value> out;
    out.reserve(count);
    for (std::uint32_t index : indices) {
      if (index >= dictionary.size()) fail(fmt::format("column '{}': dictionary index out of range", column.name));
      out.push_back(dictionary[index]);
    }
    return out;
  }
  fail(fmt::format("column '{}': encoding {} unsupported", column.name, encoding));
}

/// Decodes every value cell of one column chunk; undefined cells are discarded values.
std::vector<std::optional<Value>> read_chunk(std::string_view file, const Column& column, const TValue& meta) {
  const std::int64_t codec = meta.int_or(4, 0);
  if (codec != 0) fail(fmt::format("column '{}': compression codec {} unsupported (uncompressed only)", column.name, codec));
  const std::int64_t num_values = meta.int_or(5, 0);
  std::int64_t offset = meta.int_or(9, 0);
  const std::int64_t dict_offset = meta.int_or(11, 0);
  if (dict_offset > 0 && dict_offset < offset) offset = dict_offset;
  if (offset < 4 || static_cast<std::size_t>(offset) >= file.size()) fail("column chunk offset out of range");

  std::vector<std::optional<Value>> cells;
  std::vector<Value> dictionary;
  std::size_t pos = static_cast<std::size_t>(offset);
  while (static_cast<std::int64_t>(cells.size()) < num_values) {
    if (pos >= file.size()) fail("column chunk runs past end of file");
    CompactReader header_reader(reinterpret_cast<const std::uint8_t*>(file.data()) + pos, file.size() - pos);
    const TValue header = header_reader.read_struct();
    pos += header_reader.consumed();
    const std::int64_t size = header.int_or(3, -1);
    if (size < 0 || pos + static_cast<std::size_t>(size) > file.size()) fail("page size out of range");
    ByteCursor page(reinterpret_cast<const std::uint8_t*>(file.data()) + pos, static_cast<std::size_t>(size));
    pos += static_cast<std::size_t>(size);
    const std::int64_t page_type = header.int_or(1, -1);

    if (page_type == kDictionaryPage) {
      const TValue* dict = header.field(7);
      if (!dict) fail("dictionary page without header");
      dictionary = decode_plain(page, column, static_cast<std::size_t>(dict->int_or(1, 0)));
      continue;
    }
    std::vector<std::uint32_t> defs;
    std::size_t n = 0;
    int encoding = kPlain;
    if (page_type == kDataPage) {
      const TValue* dp = header.field(5);
      if (!dp) fail("data page without header");
      n = static_cast<std::size_t>(dp->int_or(1, 0));
      encoding = static_cast<int>(dp->int_or(2, 0));
      if (column.optional) {
        if (dp->int_or(3, kRle) != kRle) fail("definition levels must be RLE encoded");
        const std::uint32_t len = page.u32();
        ByteCursor levels(page.take(len), len);
        defs = decode_hybrid(levels, 1, n);
      }
    } else if (page_type == kDataPageV2) {
      const TValue* dp = header.field(8);
      if (!dp) fail("data page v2 without header");
      n = static_cast<std::size_t>(dp->int_or(1, 0));
      encoding = static_cast<int>(dp->int_or(4, 0));
      const std::size_t def_len = static_cast<std::size_t>(dp->int_or(5, 0));
      const std::size_t rep_len = static_cast<std::size_t>(dp->int_or(6, 0));
      page.take(rep_len);
      ByteCursor levels(page.take(def_len), def_len);
      if (column.optional) defs = decode_hybrid(levels, 1, n);
    } else {
      fail(fmt::format("page type {} unsupported", page_type));
    }
    std::size_t defined = n;
    if (column.optional) {
      defined = 0;
      for (std::uint32_t d : defs) defined += d != 0;
    }
    const std::vector<Value> values = decode_values(page, column, encoding, defined, dictionary);
    std::size_t next = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (!column.optional || defs[k] != 0) {
        cells.emplace_back(values[next++]);
      } else {
        cells.emplace_back(std::nullopt);
      }
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// encoding
// ---------------------------------------------------------------------------

enum class ColumnKind { boolean, int64, dbl, text, json };

void append_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void append_raw(std::string& out, const void* data, std::size_t n) {
  out.append(static_cast<const char*>(data), n);
}

std::string definition_levels(const std::vector<bool>& defined) {
  std::string body;
  const std::size_t groups = (defined.size() + 7) / 8;
  std::uint64_t header = (static_cast<std::uint64_t>(groups) << 1) | 1;
  while (header >= 0x80) {
    body.push_back(static_cast<char>((header & 0x7F) | 0x80));
    header >>= 7;
  }
  body.push_back(static_cast<char>(header));
  for (std::size_t g = 0; g < groups; ++g) {
    std::uint8_t byte = 0;
    for (std::size_t b = 0; b < 8; ++b) {
      const std::size_t k = g * 8 + b;
      if (k < defined.size() && defined[k]) byte |= static_cast<std::uint8_t>(1u << b);
    }
    body.push_back(static_cast<char>(byte));
  }
  std::string out;
  append_u32(out, static_cast<std::uint32_t>(body.size()));
  return out + body;
}

}  // namespace

std::vector<Value> decode(std::string_view file) {
  if (file.size() < 12 || file.substr(0, 4) != kMagic || file.substr(file.size() - 4) != kMagic) {
    fail("not a parquet file (bad magic)");
  }
  const auto* tail = reinterpret_cast<const std::uint8_t*>(file.data() + file.size() - 8);
  const std::uint32_t footer_len = static_cast<std::uint32_t>(tail[0]) | (static_cast<std::uint32_t>(tail[1]) << 8) |
                                   (static_cast<std::uint32_t>(tail[2]) << 16) |
                                   (static_cast<std::uint32_t>(tail[3]) << 24);
  if (footer_len > file.size() - 12) fail("footer length out of range");
  const std::size_t footer_at = file.size() - 8 - footer_len;
  CompactReader reader(reinterpret_cast<const std::uint8_t*>(file.data()) + footer_at, footer_len);
  const TValue meta = reader.read_struct();

  std::set<std::string> json_columns;
  if (const TValue* kv = meta.field(5)) {
    for (const auto& entry : kv->items) {
      const TValue* key = entry.field(1);
      const TValue* value = entry.field(2);
      if (key && value && key->s == kJsonColumnsKey) {
        try {
          for (const auto& name : nlohmann::json::parse(value->s)) json_columns.insert(name.get<std::string>());
        } catch (const std::exception&) {
          fail("malformed grasp.json_columns metadata");
        }
      }
    }
  }

  const TValue* schema = meta.field(2);
  if (!schema || schema->items.empty()) fail("missing schema");
  std::vector<Column> columns;
  for (std::size_t k = 1; k < schema->items.size(); ++k) {
    const TValue& element = schema->items[k];
    if (element.int_or(5, 0) > 0) fail("nested parquet schemas are unsupported");
    Column column;
    if (const TValue* name = element.field(4)) column.name = name->s;
    column.type = static_cast<int>(element.int_or(1, -1));
    const std::int64_t repetition = element.int_or(3, 0);
    if (repetition == 2) fail(fmt::format("column '{}': repeated fields are unsupported", column.name));
    column.optional = repetition == 1;
    column.type_length = static_cast<int>(element.int_or(2, 0));
    const std::int64_t converted = element.int_or(6, -1);
    const TValue* logical = element.field(10);
    column.text = converted == kUtf8Converted || converted == kJsonConverted ||
                  (logical && (logical->field(1) || logical->field(12)));
    column.json = json_columns.count(column.name) > 0;
    columns.push_back(std::move(column));
  }
  if (static_cast<std::int64_t>(columns.size()) != schema->items[0].int_or(5, 0)) {
    fail("schema child count mismatch");
  }

  std::vector<Value> records;
  if (const TValue* groups = meta.field(4)) {
    for (const auto& group : groups->items) {
      const TValue* chunks = group.field(1);
      const std::int64_t rows = group.int_or(3, 0);
      if (!chunks || chunks->items.size() != columns.size()) fail("row group column count mismatch");
      std::vector<std::vector<std::optional<Value>>> cells;
      for (std::size_t c = 0; c < columns.size(); ++c) {
        const TValue* column_meta = chunks->items[c].field(3);
        if (!column_meta) fail("column chunk without metadata");
        cells.push_back(read_chunk(file, columns[c], *column_meta));
        if (static_cast<std::int64_t>(cells.back().size()) != rows) fail("column length differs from row count");
      }
      for (std::int64_t r = 0; r < rows; ++r) {
        Value record = Value::object();
        for (std::size_t c = 0; c < columns.size(); ++c) {
          auto& cell = cells[c][static_cast<std::size_t>(r)];
          if (!cell) continue;
          if (columns[c].json && cell->is_string()) {
            try {
              record[columns[c].name] = Value::parse(cell->get<std::string>());
            } catch (const std::exception&) {
              fail(fmt::format("column '{}': invalid JSON cell", columns[c].name));
            }
          } else {
            record[columns[c].name] = std::move(*cell);
          }
        }
        records.push_back(std::move(record));
      }
    }
  }
  return records;
}

std::string encode(const std::vector<Value>& records) {
  std::vector<std::string> names;
  std::set<std::string> seen;
  for (const auto& record : records) {
    if (!record.is_object()) throw Error(ErrorKind::sink, "parquet rows must be objects");
    for (const auto& [key, value] : record.items()) {
      if (seen.insert(key).second) names.push_back(key);
    }
  }

  auto fits_int64 = [](const Value& v) {
    return v.is_number_integer() &&
           (!v.is_number_unsigned() || v.get<std::uint64_t>() <= static_cast<std::uint64_t>(INT64_MAX));
  };
  std::vector<ColumnKind> kinds;
  for (const auto& name : names) {
    bool all_bool = true, all_int = true, all_num = true, all_str = true;
    for (const auto& record : records) {
      if (!record.contains(name)) continue;
      const Value& v = record.at(name);
      all_bool &= v.is_boolean();
      all_int &= fits_int64(v);
      all_num &= v.is_number();
      all_str &= v.is_string();
    }
    const bool all_float = all_num && !all_int && std::all_of(records.begin(), records.end(), [&](const Value& r) {
      return !r.contains(name) || r.at(name).is_number_float();
    });
    kinds.push_back(all_bool ? ColumnKind::boolean
                    : all_int ? ColumnKind::int64
                    : all_float ? ColumnKind::dbl
                    : all_str ? ColumnKind::text
                              : ColumnKind::json);
  }

  std::string file(kMagic);
  struct ChunkInfo {
    std::int64_t offset;
    std::int64_t size;
  };
  std::vector<ChunkInfo> chunks;
  for (std::size_t c = 0; c < names.size(); ++c) {
    std::vector<bool> defined;
    std::string values;
    std::vector<bool> bits;
    for (const auto& record : records) {
      const bool has = record.contains(names[c]);
      defined.push_back(has);
      if (!has) continue;
      const Value& v = record.at(names[c]);
      switch (kinds[c]) {
        case ColumnKind::boolean:
          bits.push_back(v.get<bool>());
          break;
        case ColumnKind::int64: {
          const std::int64_t i = v.get<std::int64_t>();
          append_raw(values, &i, 8);
          break;
        }
        case ColumnKind::dbl: {
          const double d = v.get<double>();
          append_raw(values, &d, 8);
          break;
        }
        case ColumnKind::text:
        case ColumnKind::json: {
          const std::string s = kinds[c] == ColumnKind::text ? v.get<std::string>() : v.dump();
          append_u32(values, static_cast<std::uint32_t>(s.size()));
          values += s;
          break;
        }
      }
    }
    if (kinds[c] == ColumnKind::boolean) {
      std::string packed((bits.size() + 7) / 8, '\0');
      for (std::size_t k = 0; k < bits.size(); ++k) {
        if (bits[k]) packed[k / 8] = static_cast<char>(packed[k / 8] | (1 << (k % 8)));
      }
      values = packed;
    }
    const std::string page = definition_levels(defined) + values;

    CompactWriter header;
    header.begin();
    header.i32(1, kDataPage);
    header.i32(2, static_cast<std::int64_t>(page.size()));
    header.i32(3, static_cast<std::int64_t>(page.size()));
    header.struct_field(5);
    header.i32(1, static_cast<std::int64_t>(records.size()));
    header.i32(2, kPlain);
    header.i32(3, kRle);
    header.i32(4, kRle);
    header.end();
    header.end();

    const std::int64_t offset = static_cast<std::int64_t>(file.size());
    file += header.out();
    file += page;
    chunks.push_back({offset, static_cast<std::int64_t>(file.size()) - offset});
  }

  auto physical = [](ColumnKind kind) {
    switch (kind) {
      case ColumnKind::boolean: return kBoolean;
      case ColumnKind::int64: return kInt64;
      case ColumnKind::dbl: return kDoubleType;
      default: return kByteArray;
    }
  };

  CompactWriter meta;
  meta.begin();
  meta.i32(1, 1);
  meta.list_field(2, kStruct, names.size() + 1);
  meta.begin();
  meta.binary(4, "schema");
  meta.i32(5, static_cast<std::int64_t>(names.size()));
  meta.end();
  for (std::size_t c = 0; c < names.size(); ++c) {
    meta.begin();
    meta.i32(1, physical(kinds[c]));
    meta.i32(3, 1);
    meta.binary(4, names[c]);
    if (kinds[c] == ColumnKind::text || kinds[c] == ColumnKind::json) {
      meta.i32(6, kUtf8Converted);
      meta.struct_field(10);
      meta.struct_field(1);
      meta.end();
      meta.end();
    }
    meta.end();
  }
  meta.i64(3, static_cast<std::int64_t>(records.size()));
  meta.list_field(4, kStruct, 1);
  meta.begin();
  meta.list_field(1, kStruct, names.size());
  std::int64_t total = 0;
  for (std::size_t c = 0; c < names.size(); ++c) {
    meta.begin();
    meta.i64(2, chunks[c].offset);
    meta.struct_field(3);
    meta.i32(1, physical(kinds[c]));
    meta.list_field(2, kI32, 2);
    meta.list_i32(kPlain);
    meta.list_i32(kRle);
    meta.list_field(3, kBinary, 1);
    meta.raw_binary(names[c]);
    meta.i32(4, 0);
    meta.i64(5, static_cast<std::int64_t>(records.size()));
    meta.i64(6, chunks[c].size);
    meta.i64(7, chunks[c].size);
    meta.i64(9, chunks[c].offset);
    meta.end();
    meta.end();
    total += chunks[c].size;
  }
  meta.i64(2, total);
  meta.i64(3, static_cast<std::int64_t>(records.size()));
  meta.end();
  std::vector<std::string> json_names;
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (kinds[c] == ColumnKind::json) json_names.push_back(names[c]);
  }
  if (!json_names.empty()) {
    meta.list_field(5, kStruct, 1);
    meta.begin();
    meta.binary(1, kJsonColumnsKey);
    meta.binary(2, nlohmann::json(json_names).dump());
    meta.end();
  }
  meta.binary(6, "grasp");
  meta.end();

  file += meta.out();
  append_u32(file, static_cast<std::uint32_t>(meta.out().size()));
  file += kMagic;
  return file;
}

std::vector<Value> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::source_not_found, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

void write_file(const std::filesystem::path& path, const std::vector<Value>& records) {
  const std::string bytes = encode(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::sink, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::sink, "write failed for " + path.string());
}

}  // namespace grasp::parquet
