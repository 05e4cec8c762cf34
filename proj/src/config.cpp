#include "grasp/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>
#include <set>
#include <unordered_map>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "grasp/type_expr.hpp"

namespace grasp {

// ---------------------------------------------------------------------------
// enum spellings
// ---------------------------------------------------------------------------

std::string_view to_string(SourceKind kind) {
  switch (kind) {
    case SourceKind::none: return "none";
    case SourceKind::disk: return "disk";
    case SourceKind::hf: return "hf";
  }
  return "none";
}

std::string_view to_string(FileFormat format) {
  switch (format) {
    case FileFormat::json: return "json";
    case FileFormat::jsonl: return "jsonl";
    case FileFormat::csv: return "csv";
    case FileFormat::parquet: return "parquet";
  }
  return "jsonl";
}

std::optional<FileFormat> parse_file_format(std::string_view text) {
  const std::string lower = to_lower(text);
  if (lower == "json") return FileFormat::json;
  if (lower == "jsonl" || lower == "ndjson") return FileFormat::jsonl;
  if (lower == "csv") return FileFormat::csv;
  if (lower == "parquet") return FileFormat::parquet;
  return std::nullopt;
}

std::string_view to_string(NodeType type) {
  switch (type) {
    case NodeType::llm: return "llm";
    case NodeType::multi_llm: return "multi_llm";
    case NodeType::weighted_sampler: return "weighted_sampler";
    case NodeType::lambda: return "lambda";
    case NodeType::agent: return "agent";
    case NodeType::subgraph: return "subgraph";
  }
  return "llm";
}

std::optional<NodeType> parse_node_type(std::string_view text) {
  static const std::pair<std::string_view, NodeType> kTypes[] = {
      {"llm", NodeType::llm},
      {"multi_llm", NodeType::multi_llm},
      {"weighted_sampler", NodeType::weighted_sampler},
      {"lambda", NodeType::lambda},
      {"agent", NodeType::agent},
      {"subgraph", NodeType::subgraph},
  };
  for (const auto& [name, type] : kTypes) {
    if (name == text) return type;
  }
  return std::nullopt;
}

std::string_view to_string(PromptPart::Kind kind) {
  switch (kind) {
    case PromptPart::Kind::text: return "text";
    case PromptPart::Kind::image_url: return "image_url";
    case PromptPart::Kind::audio_url: return "audio_url";
  }
  return "text";
}

std::string_view to_string(SchemaRule::Kind kind) {
  switch (kind) {
    case SchemaRule::Kind::is_greater_than: return "is_greater_than";
    case SchemaRule::Kind::is_less_than: return "is_less_than";
    case SchemaRule::Kind::regex: return "regex";
    case SchemaRule::Kind::non_empty: return "non_empty";
  }
  return "regex";
}

const NodeSpec* GraphConfig::find_node(std::string_view name) const {
  for (const auto& [node_name, spec] : nodes) {
    if (node_name == name) return &spec;
  }
  return nullptr;
}

bool PipelineConfig::operator==(const PipelineConfig& other) const {
  return data == other.data && graph == other.graph && output == other.output &&
         schema == other.schema && quality == other.quality && oasst == other.oasst;
}

// ---------------------------------------------------------------------------
// YAML -> Value
// ---------------------------------------------------------------------------

namespace {

using MarkMap = std::unordered_map<std::string, std::pair<int, int>>;

constexpr int kMaxYamlDepth = 200;

std::string child_path(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

std::string index_path(const std::string& parent, std::size_t index) {
  return fmt::format("{}[{}]", parent, index);
}

Value plain_scalar(const std::string& text) {
  static const std::regex kInt(R"([-+]?[0-9]+)");
  static const std::regex kFloat(R"([-+]?(\.[0-9]+|[0-9]+(\.[0-9]*)?)([eE][-+]?[0-9]+)?)");
  if (text.empty() || text == "~" || text == "null" || text == "Null" || text == "NULL") {
    return nullptr;
  }
  if (text == "true" || text == "True" || text == "TRUE") return true;
  if (text == "false" || text == "False" || text == "FALSE") return false;
  if (std::regex_match(text, kInt)) {
    try {
      return std::stoll(text);
    } catch (const std::out_of_range&) {
      return text;
    }
  }
  if (std::regex_match(text, kFloat)) {
    try {
      return std::stod(text);
    } catch (const std::out_of_range&) {
      return text;
    }
  }
  const std::string lower = to_lower(text);
  if (lower == ".inf" || lower == "+.inf") return std::numeric_limits<double>::infinity();
  if (lower == "-.inf") return -std::numeric_limits<double>::infinity();
  if (lower == ".nan") return std::numeric_limits<double>::quiet_NaN();
  return text;
}

struct YamlConverter {
  MarkMap* marks = nullptr;
  std::vector<Diagnostic>* diagnostics = nullptr;

  void mark(const std::string& path, const YAML::Node& node) {
    if (!marks) return;
    const YAML::Mark m = node.Mark();
    if (m.line >= 0) (*marks)[path] = {m.line + 1, m.column + 1};
  }

  Value convert(const YAML::Node& node, const std::string& path, int depth) {
    if (depth > kMaxYamlDepth) {
      throw Error(ErrorKind::config, "YAML nesting deeper than " + std::to_string(kMaxYamlDepth));
    }
    mark(path, node);
    switch (node.Type()) {
      case YAML::NodeType::Undefined:
      case YAML::NodeType::Null:
        return nullptr;
      case YAML::NodeType::Scalar:
        if (node.Tag() == "!") return node.Scalar();  // quoted or block scalar
        return plain_scalar(node.Scalar());
      case YAML::NodeType::Sequence: {
        Value out = Value::array();
        std::size_t i = 0;
        for (const auto& item : node) {
          out.push_back(convert(item, index_path(path, i), depth + 1));
          ++i;
        }
        return out;
      }
      case YAML::NodeType::Map: {
        Value out = Value::object();
        for (const auto& kv : node) {
          std::string key = kv.first.IsScalar() ? kv.first.Scalar() : YAML::Dump(kv.first);
          const std::string key_path = child_path(path, key);
          if (out.contains(key) && diagnostics) {
            Diagnostic d = make_warning(key_path, "duplicate key; later value wins");
            const YAML::Mark m = kv.first.Mark();
            d.line = m.line + 1;
            d.column = m.column + 1;
            diagnostics->push_back(std::move(d));
          }
          out[key] = convert(kv.second, key_path, depth + 1);
        }
        return out;
      }
    }
    return nullptr;
  }
};

Value load_yaml(std::string_view text, MarkMap* marks, std::vector<Diagnostic>* diagnostics) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    Diagnostic d = make_error("", "YAML syntax error: " + e.msg);
    if (e.mark.line >= 0) {
      d.line = e.mark.line + 1;
      d.column = e.mark.column + 1;
    }
    throw d;
  }
  YamlConverter converter{marks, diagnostics};
  try {
    return converter.convert(root, "", 0);
  } catch (const Error& e) {
    throw make_error("", e.what());
  } catch (const YAML::Exception& e) {
    throw make_error("", std::string("YAML error: ") + e.what());
  }
}

}  // namespace

Value yaml_to_value(std::string_view yaml_text) {
  try {
    return load_yaml(yaml_text, nullptr, nullptr);
  } catch (const Diagnostic& d) {
    throw Error(ErrorKind::config, render(d));
  }
}

// ---------------------------------------------------------------------------
// placeholders
// ---------------------------------------------------------------------------

std::vector<std::string> template_placeholders(std::string_view text) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '{') {
      if (i + 1 < text.size() && text[i + 1] == '{') {
        ++i;
        continue;
      }
      std::size_t j = i + 1;
      if (j < text.size() && (std::isalpha(static_cast<unsigned char>(text[j])) || text[j] == '_')) {
        while (j < text.size() &&
               (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_')) {
          ++j;
        }
        if (j < text.size() && text[j] == '}') {
          names.emplace_back(text.substr(i + 1, j - i - 1));
          i = j;
        }
      }
    } else if (c == '}' && i + 1 < text.size() && text[i + 1] == '}') {
      ++i;
    }
  }
  return names;
}

// ---------------------------------------------------------------------------
// Value -> typed config
// ---------------------------------------------------------------------------

namespace {

std::string type_name(const Value& v) {
  if (v.is_null()) return "null";
  if (v.is_boolean()) return "bool";
  if (v.is_number_integer()) return "int";
  if (v.is_number()) return "float";
  if (v.is_string()) return "str";
  if (v.is_array()) return "list";
  return "map";
}

class Reader {
 public:
  Reader(const MarkMap& marks, std::vector<Diagnostic>& diagnostics)
      : marks_(marks), diagnostics_(diagnostics) {}

  void error(const std::string& path, std::string message) { add(Severity::error, path, std::move(message)); }
  void warning(const std::string& path, std::string message) { add(Severity::warning, path, std::move(message)); }

  void warn_unknown_keys(const Value& object, const std::string& path,
                         std::initializer_list<std::string_view> known) {
    if (!object.is_object()) return;
    for (const auto& [key, value] : object.items()) {
      if (std::find(known.begin(), known.end(), key) == known.end()) {
        warning(child_path(path, key), "unknown key '" + key + "' ignored");
      }
    }
  }

  bool expect_map(const Value& v, const std::string& path) {
    if (v.is_object()) return true;
    error(path, "expected a map, found " + type_name(v));
    return false;
  }

  std::optional<std::string> string_at(const Value& object, const std::string& key,
                                       const std::string& path, bool required) {
    if (!object.contains(key) || object.at(key).is_null()) {
      if (required) error(child_path(path, key), "missing required key '" + key + "'");
      return std::nullopt;
    }
    const Value& v = object.at(key);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number() || v.is_boolean()) return v.dump();
    error(child_path(path, key), "expected a string, found " + type_name(v));
    return std::nullopt;
  }

  std::optional<bool> bool_at(const Value& object, const std::string& key, const std::string& path) {
    if (!object.contains(key) || object.at(key).is_null()) return std::nullopt;
    const Value& v = object.at(key);
    if (v.is_boolean()) return v.get<bool>();
    error(child_path(path, key), "expected a bool, found " + type_name(v));
    return std::nullopt;
  }

  std::optional<long long> int_at(const Value& object, const std::string& key, const std::string& path) {
    if (!object.contains(key) || object.at(key).is_null()) return std::nullopt;
    const Value& v = object.at(key);
    if (v.is_number_integer()) return v.get<long long>();
    error(child_path(path, key), "expected an int, found " + type_name(v));
    return std::nullopt;
  }

  std::optional<double> number_at(const Value& object, const std::string& key, const std::string& path) {
    if (!object.contains(key) || object.at(key).is_null()) return std::nullopt;
    const Value& v = object.at(key);
    if (v.is_number()) return v.get<double>();
    error(child_path(path, key), "expected a number, found " + type_name(v));
    return std::nullopt;
  }

  std::vector<std::string> string_list_at(const Value& object, const std::string& key,
                                          const std::string& path) {
    std::vector<std::string> out;
    if (!object.contains(key) || object.at(key).is_null()) return out;
    const Value& v = object.at(key);
    const std::string p = child_path(path, key);
    if (v.is_string()) {
      out.push_back(v.get<std::string>());
    } else if (v.is_array()) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i].is_string()) {
          out.push_back(v[i].get<std::string>());
        } else {
          error(index_path(p, i), "expected a string, found " + type_name(v[i]));
        }
      }
    } else {
      error(p, "expected a string or list of strings, found " + type_name(v));
    }
    return out;
  }

 private:
  void add(Severity severity, const std::string& path, std::string message) {
    Diagnostic d{severity, path, std::move(message)};
    // Report the deepest location we have a mark for.
    std::string probe = path;
    while (true) {
      if (auto it = marks_.find(probe); it != marks_.end()) {
        d.line = it->second.first;
        d.column = it->second.second;
        break;
      }
      const auto cut = probe.find_last_of(".[");
      if (cut == std::string::npos) break;
      probe = probe.substr(0, cut);
    }
    diagnostics_.push_back(std::move(d));
  }

  const MarkMap& marks_;
  std::vector<Diagnostic>& diagnostics_;
};

// ---- data_config ----------------------------------------------------------

void classify_type(Reader& r, const std::string& type, const std::string& path, SourceKind& kind,
                   std::optional<FileFormat>& format, bool sink) {
  const std::string lower = to_lower(type);
  if (lower == "hf" || lower == "huggingface") {
    kind = SourceKind::hf;
  } else if (lower == "disk" || lower == "local") {
    kind = SourceKind::disk;
  } else if (lower == "none") {
    kind = SourceKind::none;
    if (sink) r.error(path, "a sink cannot have type none");
  } else if (auto f = parse_file_format(lower)) {
    kind = SourceKind::disk;
    format = f;
  } else {
    r.error(path, "unknown type '" + type + "' (expected hf, disk, or a file format)");
  }
}

std::optional<FileFormat> format_from_extension(const std::string& file_path) {
  const auto dot = file_path.rfind('.');
  if (dot == std::string::npos) return std::nullopt;
  return parse_file_format(file_path.substr(dot + 1));
}

std::optional<SourceSpec> parse_source(Reader& r, const Value& v, const std::string& path) {
  if (!r.expect_map(v, path)) return std::nullopt;
  r.warn_unknown_keys(v, path, {"type", "file_path", "file_format", "repo_id", "config_name",
                                "split", "splits", "streaming", "shard", "token"});
  SourceSpec spec;
  spec.kind = SourceKind::disk;
  if (auto type = r.string_at(v, "type", path, false)) {
    classify_type(r, *type, child_path(path, "type"), spec.kind, spec.file_format, false);
  } else if (v.contains("repo_id")) {
    spec.kind = SourceKind::hf;
  }
  spec.file_path = r.string_at(v, "file_path", path, false).value_or("");
  if (auto fmt_text = r.string_at(v, "file_format", path, false)) {
    if (auto f = parse_file_format(*fmt_text)) {
      spec.file_format = f;
    } else {
      r.error(child_path(path, "file_format"),
              "unknown file_format '" + *fmt_text + "' (expected json, jsonl, csv, parquet)");
    }
  }
  spec.repo_id = r.string_at(v, "repo_id", path, false).value_or("");
  spec.config_name = r.string_at(v, "config_name", path, false).value_or("");
  spec.splits = r.string_list_at(v, "split", path);
  for (auto& s : r.string_list_at(v, "splits", path)) spec.splits.push_back(std::move(s));
  spec.streaming = r.bool_at(v, "streaming", path).value_or(false);

  if (spec.kind == SourceKind::disk) {
    if (spec.file_path.empty()) r.error(path, "disk source requires file_path");
    if (!spec.file_format) {
      r.error(path, "disk source requires file_format");
    }
  } else if (spec.kind == SourceKind::hf && spec.repo_id.empty()) {
    r.error(path, "hf source requires repo_id");
  }
  return spec;
}

std::optional<SinkSpec> parse_sink(Reader& r, const Value& v, const std::string& path) {
  if (!r.expect_map(v, path)) return std::nullopt;
  r.warn_unknown_keys(v, path, {"type", "file_path", "file_format", "repo_id", "config_name",
                                "split", "push_to_hub", "private", "token"});
  SinkSpec spec;
  if (auto type = r.string_at(v, "type", path, false)) {
    classify_type(r, *type, child_path(path, "type"), spec.kind, spec.file_format, true);
  } else if (v.contains("repo_id")) {
    spec.kind = SourceKind::hf;
  }
  spec.file_path = r.string_at(v, "file_path", path, false).value_or("");
  if (auto fmt_text = r.string_at(v, "file_format", path, false)) {
    if (auto f = parse_file_format(*fmt_text)) {
      spec.file_format = f;
    } else {
      r.error(child_path(path, "file_format"), "unknown file_format '" + *fmt_text + "'");
    }
  }
  // `type: json` pointing at a .jsonl file means line-delimited output.
  if (spec.file_format == FileFormat::json && ends_with(spec.file_path, ".jsonl")) {
    spec.file_format = FileFormat::jsonl;
  }
  if (!spec.file_format && !spec.file_path.empty()) spec.file_format = format_from_extension(spec.file_path);
  spec.repo_id = r.string_at(v, "repo_id", path, false).value_or("");
  spec.config_name = r.string_at(v, "config_name", path, false).value_or("");
  spec.split = r.string_at(v, "split", path, false).value_or("");
  spec.push_to_hub = r.bool_at(v, "push_to_hub", path).value_or(false);
  spec.private_repo = r.bool_at(v, "private", path).value_or(false);
  spec.has_token = v.contains("token") && !v.at("token").is_null();
  if (spec.push_to_hub) r.warning(child_path(path, "push_to_hub"), "hub push disabled; writing locally");
  if (spec.private_repo) r.warning(child_path(path, "private"), "hub flag 'private' ignored");
  if (spec.has_token) r.warning(child_path(path, "token"), "hub token ignored");

  if (spec.kind == SourceKind::disk) {
    if (spec.file_path.empty()) r.error(path, "disk sink requires file_path");
    if (!spec.file_format) r.error(path, "disk sink requires a file format");
  } else if (spec.kind == SourceKind::hf && spec.repo_id.empty()) {
    r.error(path, "hf sink requires repo_id");
  }
  return spec;
}

std::string normalize_transform_name(std::string name) {
  if (const auto dot = name.rfind('.'); dot != std::string::npos) name = name.substr(dot + 1);
  name = to_lower(name);
  std::erase(name, '_');
  if (ends_with(name, "transform") && name != "transform") name.resize(name.size() - 9);
  return name;
}

std::optional<FieldStrategy> parse_strategy(Reader& r, const Value& v, const std::string& path) {
  FieldStrategy strategy;
  if (v.is_string()) {
    const std::string s = to_lower(v.get<std::string>());
    if (s == "first") {
      strategy.kind = FieldStrategy::Kind::first;
    } else if (s == "last") {
      strategy.kind = FieldStrategy::Kind::last;
    } else if (s == "join") {
      strategy.kind = FieldStrategy::Kind::join;
      strategy.delimiter = "\n";
    } else {
      r.error(path, "unknown field strategy '" + v.get<std::string>() + "' (expected join, first, last)");
      return std::nullopt;
    }
    return strategy;
  }
  if (v.is_object() && v.size() == 1 && v.contains("join")) {
    strategy.kind = FieldStrategy::Kind::join;
    if (!v.at("join").is_string()) {
      r.error(child_path(path, "join"), "join delimiter must be a string");
      return std::nullopt;
    }
    strategy.delimiter = v.at("join").get<std::string>();
    return strategy;
  }
  r.error(path, "unknown field strategy (expected join, {join: delimiter}, first, last)");
  return std::nullopt;
}

std::optional<TransformSpec> parse_transform(Reader& r, const Value& v, const std::string& path) {
  if (!r.expect_map(v, path)) return std::nullopt;
  r.warn_unknown_keys(v, path, {"transform", "params"});
  auto name = r.string_at(v, "transform", path, true);
  if (!name) return std::nullopt;
  const Value params = v.contains("params") && v.at("params").is_object() ? v.at("params") : Value::object();
  if (v.contains("params") && !v.at("params").is_object() && !v.at("params").is_null()) {
    r.error(child_path(path, "params"), "params must be a map");
  }
  const std::string ppath = child_path(path, "params");
  const std::string kind = normalize_transform_name(*name);

  if (kind == "renamefields" || kind == "rename") {
    r.warn_unknown_keys(params, ppath, {"mapping", "overwrite"});
    RenameParams rename;
    if (!params.contains("mapping") || !params.at("mapping").is_object()) {
      r.error(child_path(ppath, "mapping"), "rename transform requires a mapping of old->new names");
      return std::nullopt;
    }
    std::set<std::string> targets;
    for (const auto& [from, to] : params.at("mapping").items()) {
      if (!to.is_string() || to.get<std::string>().empty()) {
        r.error(child_path(child_path(ppath, "mapping"), from), "rename target must be a non-empty string");
        continue;
      }
      if (!targets.insert(to.get<std::string>()).second) {
        r.error(child_path(child_path(ppath, "mapping"), from),
                "rename target '" + to.get<std::string>() + "' used twice");
      }
      rename.mapping.emplace_back(from, to.get<std::string>());
    }
    rename.overwrite = r.bool_at(params, "overwrite", ppath).value_or(false);
    return rename;
  }
  if (kind == "combinerecords" || kind == "combine") {
    r.warn_unknown_keys(params, ppath, {"num_records", "shift", "field_strategies"});
    CombineParams combine;
    combine.num_records = static_cast<int>(r.int_at(params, "num_records", ppath).value_or(2));
    combine.shift = static_cast<int>(r.int_at(params, "shift", ppath).value_or(1));
    if (combine.num_records < 2) r.error(child_path(ppath, "num_records"), "num_records must be >= 2");
    if (combine.shift < 1) r.error(child_path(ppath, "shift"), "shift must be >= 1");
    if (params.contains("field_strategies")) {
      const Value& fs = params.at("field_strategies");
      const std::string fpath = child_path(ppath, "field_strategies");
      if (r.expect_map(fs, fpath)) {
        for (const auto& [field, strategy] : fs.items()) {
          if (auto s = parse_strategy(r, strategy, child_path(fpath, field))) {
            combine.field_strategies.emplace_back(field, *s);
          }
        }
      }
    }
    return combine;
  }
  if (kind == "skiprecords" || kind == "skip") {
    r.warn_unknown_keys(params, ppath, {"from_start", "from_beginning", "from_end"});
    SkipParams skip;
    skip.from_start = static_cast<int>(
        r.int_at(params, "from_start", ppath).value_or(r.int_at(params, "from_beginning", ppath).value_or(0)));
    skip.from_end = static_cast<int>(r.int_at(params, "from_end", ppath).value_or(0));
    if (skip.from_start < 0) r.error(child_path(ppath, "from_start"), "from_start must be >= 0");
    if (skip.from_end < 0) r.error(child_path(ppath, "from_end"), "from_end must be >= 0");
    return skip;
  }
  r.error(child_path(path, "transform"),
          "unknown transform '" + *name + "' (expected rename_fields, combine_records, skip_records)");
  return std::nullopt;
}

std::optional<DataConfig> parse_data(Reader& r, const Value& v, const std::string& path) {
  if (!r.expect_map(v, path)) return std::nullopt;
  r.warn_unknown_keys(v, path, {"source", "sink", "transformations", "transforms"});
  DataConfig data;
  if (v.contains("source") && !v.at("source").is_null()) {
    data.source = parse_source(r, v.at("source"), child_path(path, "source"));
  }
  if (v.contains("sink") && !v.at("sink").is_null()) {
    data.sink = parse_sink(r, v.at("sink"), child_path(path, "sink"));
  }
  for (const char* key : {"transformations", "transforms"}) {
    if (!v.contains(key) || v.at(key).is_null()) continue;
    const Value& list = v.at(key);
    const std::string lpath = child_path(path, key);
    if (!list.is_array()) {
      r.error(lpath, "expected a list of transforms");
      continue;
    }
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (auto t = parse_transform(r, list[i], index_path(lpath, i))) data.transforms.push_back(std::move(*t));
    }
  }
  if (!data.source && !data.sink) {
    r.error(path, "data_config without a source needs a sink");
  }
  if (!data.transforms.empty() && !data.source) {
    r.warning(path, "transforms have no effect without a source");
  }
  return data;
}

// ---- graph_config ---------------------------------------------------------

std::optional<PromptPart> parse_part(Reader& r, const Value& v, const std::string& path) {
  if (!r.expect_map(v, path)) return std::nullopt;
  auto type = r.string_at(v, "type", path, true);
  if (!type) return std::nullopt;
  PromptPart part;
  if (*type == "text") {
    part.kind = PromptPart::Kind::text;
  } else if (*type == "image_url") {
    part.kind = PromptPart::Kind::image_url;
  } else if (*type == "audio_url") {
    part.kind = PromptPart::Kind::audio_url;
  } else {
    r.error(child_path(path, "type"), "unknown part type '" + *type + "' (expected text, image_url, audio_url)");
    return std::nullopt;
  }
  const std::string key(to_string(part.kind));
  r.warn_unknown_keys(v, path, {"type", key});
  if (!v.contains(key)) {
    r.error(path, "part of type " + key + " requires key '" + key + "'");
    return std::nullopt;
  }
  const Value& payload = v.at(key);
  if (payload.is_string()) {
    part.payload = payload.get<std::string>();
  } else if (payload.is_object() && payload.contains("url") && payload.at("url").is_string()) {
    part.payload = payload.at("url").get<std::string>();
  } else {
    r.error(child_path(path, key), "expected a string");
    return std::nullopt;
  }
  return part;
}

std::vector<PromptMessage> parse_prompt(Reader& r, const Value& v, const std::string& path) {
  std::vector<PromptMessage> messages;
  if (!v.is_array()) {
    r.error(path, "prompt must be a list of role-keyed messages");
    return messages;
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string mpath = index_path(path, i);
    const Value& item = v[i];
    if (!item.is_object() || item.size() != 1) {
      r.error(mpath, "each prompt entry must be a single-key map {role: content}");
      continue;
    }
    PromptMessage message;
    message.role = item.begin().key();
    if (message.role != "system" && message.role != "user" && message.role != "assistant") {
      r.error(mpath, "unknown prompt role '" + message.role + "' (expected system, user, assistant)");
      continue;
    }
    const Value& content = item.begin().value();
    const std::string cpath = child_path(mpath, message.role);
    if (content.is_string()) {
      message.parts.push_back({PromptPart::Kind::text, content.get<std::string>()});
    } else if (content.is_array()) {
      message.typed_parts = true;
      for (std::size_t j = 0; j < content.size(); ++j) {
        if (auto part = parse_part(r, content[j], index_path(cpath, j))) message.parts.push_back(*part);
      }
      if (content.empty()) r.error(cpath, "message has no parts");
    } else {
      r.error(cpath, "message content must be text or a list of typed parts");
      continue;
    }
    messages.push_back(std::move(message));
  }
  return messages;
}

std::optional<ModelSpec> parse_model(Reader& r, const Value& v, const std::string& path) {
  ModelSpec model;
  if (v.is_string()) {
    model.name = v.get<std::string>();
    return model;
  }
  if (!r.expect_map(v, path)) return std::nullopt;
  r.warn_unknown_keys(v, path, {"name", "parameters"});
  auto name = r.string_at(v, "name", path, true);
  if (!name) return std::nullopt;
  model.name = *name;
  if (v.contains("parameters") && !v.at("parameters").is_null()) {
    if (v.at("parameters").is_object()) {
      model.parameters = v.at("parameters");
    } else {
      r.error(child_path(path, "parameters"), "parameters must be a map");
    }
  }
  return model;
}

std::optional<StructuredOutputSpec> parse_structured(Reader& r, const Value& v, const std::string& path) {
  if (!r.expect_map(v, path)) return std::nullopt;
  r.warn_unknown_keys(v, path, {"enabled", "schema"});
  StructuredOutputSpec spec;
  spec.enabled = r.bool_at(v, "enabled", path).value_or(true);
  if (!v.contains("schema") || v.at("schema").is_null()) {
    r.error(path, "structured_output requires a schema");
    return spec;
  }
  const Value& schema = v.at("schema");
  const std::string spath = child_path(path, "schema");
  if (schema.is_string()) {
    spec.schema_class = schema.get<std::string>();
    return spec;
  }
  if (!r.expect_map(schema, spath)) return spec;
  const Value* fields = &schema;
  std::string fpath = spath;
  if (schema.contains("fields")) {
    fields = &schema.at("fields");
    fpath = child_path(spath, "fields");
  }
  if (!r.expect_map(*fields, fpath)) return spec;
  for (const auto& [name, def] : fields->items()) {
    const std::string dpath = child_path(fpath, name);
    FieldDef field;
    field.name = name;
    if (def.is_string()) {
      field.type = def.get<std::string>();
    } else if (r.expect_map(def, dpath)) {
      r.warn_unknown_keys(def, dpath, {"type", "description", "rules"});
      field.type = r.string_at(def, "type", dpath, true).value_or("");
      field.description = r.string_at(def, "description", dpath, false).value_or("");
    }
    if (!field.type.empty() && !parse_type_expr(field.type)) {
      r.error(child_path(dpath, "type"),
              "unsupported field type '" + field.type + "' (expected str, int, float, bool, list[...], dict[...])");
    }
    spec.fields.push_back(std::move(field));
  }
  if (spec.fields.empty()) r.error(fpath, "structured output schema has no fields");
  return spec;
}

std::vector<SamplerChoice> parse_sampler(Reader& r, const Value& v, const std::string& path) {
  std::vector<SamplerChoice> choices;
  if (v.is_object()) {
    for (const auto& [value, weight] : v.items()) {
      if (!weight.is_number()) {
        r.error(child_path(path, value), "weight must be a number");
        continue;
      }
      choices.push_back({Value(value), weight.get<double>()});
    }
  } else if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string cpath = index_path(path, i);
      if (!r.expect_map(v[i], cpath)) continue;
      r.warn_unknown_keys(v[i], cpath, {"value", "weight"});
      if (!v[i].contains("value")) {
        r.error(cpath, "sampler choice requires 'value'");
        continue;
      }
      const double weight = r.number_at(v[i], "weight", cpath).value_or(1.0);
      choices.push_back({v[i].at("value"), weight});
    }
  } else {
    r.error(path, "sampler must be a list of {value, weight}");
  }
  return choices;
}

std::optional<NodeSpec> parse_node(Reader& r, const std::string& name, const Value& v, const std::string& path) {
  if (!r.expect_map(v, path)) return std::nullopt;
  r.warn_unknown_keys(v, path,
                      {"node_type", "prompt", "model", "models", "output_keys", "lambda", "tools",
                       "inject_system_messages", "structured_output", "pre_process", "post_process",
                       "sampler", "subgraph", "max_turns"});
  auto type_text = r.string_at(v, "node_type", path, true);
  if (!type_text) return std::nullopt;
  auto type = parse_node_type(*type_text);
  if (!type) {
    r.error(child_path(path, "node_type"), "unknown node_type '" + *type_text + "'");
    return std::nullopt;
  }
  NodeSpec node;
  node.type = *type;
  if (v.contains("prompt") && !v.at("prompt").is_null()) {
    node.prompt = parse_prompt(r, v.at("prompt"), child_path(path, "prompt"));
  }
  if (v.contains("model") && !v.at("model").is_null()) {
    node.model = parse_model(r, v.at("model"), child_path(path, "model"));
  }
  if (v.contains("models") && !v.at("models").is_null()) {
    const Value& models = v.at("models");
    const std::string mpath = child_path(path, "models");
    if (models.is_array()) {
      std::set<std::string> seen;
      for (std::size_t i = 0; i < models.size(); ++i) {
        if (auto m = parse_model(r, models[i], index_path(mpath, i))) {
          if (!seen.insert(m->name).second) r.error(index_path(mpath, i), "model '" + m->name + "' listed twice");
          node.models.push_back(std::move(*m));
        }
      }
    } else {
      r.error(mpath, "models must be a list");
    }
  }
  node.output_keys = r.string_list_at(v, "output_keys", path);
  node.lambda = r.string_at(v, "lambda", path, false).value_or("");
  node.tools = r.string_list_at(v, "tools", path);
  if (v.contains("inject_system_messages") && !v.at("inject_system_messages").is_null()) {
    const Value& inject = v.at("inject_system_messages");
    const std::string ipath = child_path(path, "inject_system_messages");
    if (r.expect_map(inject, ipath)) {
      for (const auto& [turn, text] : inject.items()) {
        int index = 0;
        try {
          std::size_t used = 0;
          index = std::stoi(turn, &used);
          if (used != turn.size()) throw std::invalid_argument(turn);
        } catch (const std::exception&) {
          r.error(child_path(ipath, turn), "turn index must be an integer");
          continue;
        }
        if (index < 1) r.error(child_path(ipath, turn), "turn index must be >= 1");
        if (!text.is_string()) {
          r.error(child_path(ipath, turn), "injected message must be a string");
          continue;
        }
        node.inject_system_messages[index] = text.get<std::string>();
      }
    }
  }
  if (v.contains("structured_output") && !v.at("structured_output").is_null()) {
    node.structured_output = parse_structured(r, v.at("structured_output"), child_path(path, "structured_output"));
  }
  node.pre_process = r.string_at(v, "pre_process", path, false).value_or("");
  node.post_process = r.string_at(v, "post_process", path, false).value_or("");
  if (v.contains("sampler") && !v.at("sampler").is_null()) {
    node.sampler = parse_sampler(r, v.at("sampler"), child_path(path, "sampler"));
  }
  node.subgraph = r.string_at(v, "subgraph", path, false).value_or("");
  node.max_turns = static_cast<int>(r.int_at(v, "max_turns", path).value_or(8));

  std::set<std::string> keys;
  for (const auto& key : node.output_keys) {
    if (!keys.insert(key).second) r.error(child_path(path, "output_keys"), "output key '" + key + "' listed twice");
  }

  switch (node.type) {
    case NodeType::llm:
      if (node.prompt.empty()) r.error(path, "llm node '" + name + "' requires a prompt");
      if (!node.model) r.error(path, "llm node '" + name + "' requires a model");
      break;
    case NodeType::multi_llm:
      if (node.prompt.empty()) r.error(path, "multi_llm node '" + name + "' requires a prompt");
      if (node.models.empty()) r.error(path, "multi_llm node '" + name + "' requires a non-empty models list");
      if (node.output_keys.size() > 1) r.error(child_path(path, "output_keys"), "multi_llm writes a single output key");
      break;
    case NodeType::weighted_sampler: {
      if (node.sampler.empty()) {
        r.error(path, "weighted_sampler node '" + name + "' requires a sampler");
        break;
      }
      double total = 0.0;
      for (std::size_t i = 0; i < node.sampler.size(); ++i) {
        const double w = node.sampler[i].weight;
        if (!(w >= 0.0) || !std::isfinite(w)) {
          r.error(index_path(child_path(path, "sampler"), i), "weights must be finite and >= 0");
        }
        total += w;
      }
      if (!(total > 0.0)) r.error(child_path(path, "sampler"), "sampler weights must sum to > 0");
      if (node.output_keys.size() > 1) r.error(child_path(path, "output_keys"), "weighted_sampler writes a single output key");
      break;
    }
    case NodeType::lambda:
      if (node.lambda.empty()) r.error(path, "lambda node '" + name + "' requires 'lambda'");
      break;
    case NodeType::agent:
      if (!node.model) r.error(path, "agent node '" + name + "' requires a model");
      if (node.prompt.empty()) r.error(path, "agent node '" + name + "' requires a prompt");
      if (node.max_turns < 1) r.error(child_path(path, "max_turns"), "max_turns must be >= 1");
      {
        std::set<std::string> tools;
        for (const auto& tool : node.tools) {
          if (!tools.insert(tool).second) r.error(child_path(path, "tools"), "tool '" + tool + "' listed twice");
        }
      }
      break;
    case NodeType::subgraph:
      if (node.subgraph.empty()) r.error(path, "subgraph node '" + name + "' requires 'subgraph'");
      break;
  }
  if (node.structured_output && node.type != NodeType::llm) {
    r.warning(child_path(path, "structured_output"), "structured_output only applies to llm nodes");
  }
  return node;
}

std::optional<EdgeSpec> parse_edge(Reader& r, const Value& v, const std::string& path) {
  if (!r.expect_map(v, path)) return std::nullopt;
  r.warn_unknown_keys(v, path, {"from", "to", "condition", "path_map"});
  EdgeSpec edge;
  auto from = r.string_at(v, "from", path, true);
  if (!from) return std::nullopt;
  edge.from = *from;
  edge.to = r.string_at(v, "to", path, false).value_or("");
  edge.condition = r.string_at(v, "condition", path, false).value_or("");
  const bool has_path_map = v.contains("path_map") && !v.at("path_map").is_null();
  if (has_path_map) {
    const Value& pm = v.at("path_map");
    if (r.expect_map(pm, child_path(path, "path_map"))) {
      for (const auto& [label, target] : pm.items()) {
        if (!target.is_string()) {
          r.error(child_path(child_path(path, "path_map"), label), "path_map target must be a node name or END");
          continue;
        }
        edge.path_map.emplace_back(label, target.get<std::string>());
      }
    }
  }
  if (!edge.to.empty() && (!edge.condition.empty() || has_path_map)) {
    r.error(path, "edge sets both to and condition");
  } else if (edge.to.empty() && edge.condition.empty()) {
    r.error(path, "edge has neither to nor condition");
  } else if (!edge.condition.empty() && edge.path_map.empty()) {
    r.error(path, "conditional edge requires a non-empty path_map");
  }
  if (edge.from == kEnd) r.error(child_path(path, "from"), "END has no outgoing edges");
  if (edge.to == kStart) r.error(child_path(path, "to"), "START cannot be an edge target");
  return edge;
}

void parse_settings(Reader& r, const Value& v, const std::string& path, GraphSettings& settings) {
  for (const auto& [key, value] : v.items()) {
    const std::string kpath = child_path(path, key);
    if (key == "chat_conversation") {
      const std::string mode = value.is_string() ? value.get<std::string>() : "";
      if (mode == "singleturn") {
        settings.chat_conversation = ChatMode::singleturn;
      } else if (mode == "multiturn") {
        settings.chat_conversation = ChatMode::multiturn;
      } else {
        r.error(kpath, "chat_conversation must be singleturn or multiturn");
      }
    } else if (key == "chat_history_window_size") {
      if (value.is_number_integer() && value.get<long long>() > 0) {
        settings.chat_history_window_size = static_cast<int>(value.get<long long>());
      } else {
        r.error(kpath, "chat_history_window_size must be a positive int");
      }
    } else if (key == "loop_budget") {
      if (value.is_number_integer() && value.get<long long>() > 0) {
        settings.loop_budget = static_cast<int>(value.get<long long>());
      } else {
        r.error(kpath, "loop_budget must be a positive int");
      }
    } else if (value.is_primitive()) {
      settings.extra[key] = value;
    } else {
      r.warning(kpath, "non-scalar graph setting ignored");
    }
  }
}

std::optional<GraphConfig> parse_graph(Reader& r, const Value& v, const std::string& path) {
  if (!r.expect_map(v, path)) return std::nullopt;
  GraphConfig graph;
  for (const auto& [key, value] : v.items()) {
    const std::string kpath = child_path(path, key);
    if (key == "nodes" || key == "edges") continue;
    if (key == "settings" || key == "graph_properties") {
      if (r.expect_map(value, kpath)) parse_settings(r, value, kpath, graph.settings);
    } else if (key == "chat_conversation" || key == "chat_history_window_size" || key == "loop_budget") {
      parse_settings(r, Value{{key, value}}, path, graph.settings);
    } else {
      r.warning(kpath, "unknown key '" + key + "' ignored");
    }
  }
  const std::string npath = child_path(path, "nodes");
  if (!v.contains("nodes") || v.at("nodes").is_null()) {
    r.error(npath, "graph_config requires nodes");
  } else if (r.expect_map(v.at("nodes"), npath)) {
    for (const auto& [name, spec] : v.at("nodes").items()) {
      if (name == kStart || name == kEnd) {
        r.error(child_path(npath, name), "START and END are reserved node names");
        continue;
      }
      if (name.empty() || name.find('/') != std::string::npos) {
        r.error(child_path(npath, name), "node names must be non-empty and must not contain '/'");
        continue;
      }
      if (auto node = parse_node(r, name, spec, child_path(npath, name))) {
        graph.nodes.emplace_back(name, std::move(*node));
      }
    }
    if (v.at("nodes").empty()) r.error(npath, "graph has no nodes");
  }
  const std::string epath = child_path(path, "edges");
  if (!v.contains("edges") || v.at("edges").is_null()) {
    r.error(epath, "graph_config requires edges");
  } else if (!v.at("edges").is_array()) {
    r.error(epath, "edges must be a list");
  } else {
    const Value& edges = v.at("edges");
    std::set<std::string> names;
    if (v.contains("nodes") && v.at("nodes").is_object()) {
      for (const auto& [name, spec] : v.at("nodes").items()) names.insert(name);
    }
    auto known = [&](const std::string& n) { return n == kStart || n == kEnd || names.count(n) > 0; };
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const std::string ip = index_path(epath, i);
      auto edge = parse_edge(r, edges[i], ip);
      if (!edge) continue;
      if (!known(edge->from)) r.error(child_path(ip, "from"), "unknown node " + edge->from);
      if (!edge->to.empty() && !known(edge->to)) r.error(child_path(ip, "to"), "unknown node " + edge->to);
      for (const auto& [label, target] : edge->path_map) {
        if (!known(target) || target == kStart) {
          r.error(child_path(child_path(ip, "path_map"), label), "unknown node " + target);
        }
      }
      graph.edges.push_back(std::move(*edge));
    }
  }
  return graph;
}

// ---- output / schema / post-processing ------------------------------------

bool looks_like_output_entry(const Value& v) {
  return v.is_object() && (v.contains("from") || v.contains("value") || v.contains("transform"));
}

std::optional<OutputConfig> parse_output(Reader& r, const Value& v, const std::string& path) {
  if (!r.expect_map(v, path)) return std::nullopt;
  OutputConfig output;
  Value entries = Value::object();
  const std::string mpath = child_path(path, "output_map");
  bool flattened = false;
  if (v.contains("output_map") && v.at("output_map").is_object()) {
    entries = v.at("output_map");
  } else if (v.contains("output_map") && !v.at("output_map").is_null()) {
    r.error(mpath, "output_map must be a map");
  }
  for (const auto& [key, value] : v.items()) {
    if (key == "output_map" || key == "generator") continue;
    if (looks_like_output_entry(value) && (!v.contains("output_map") || v.at("output_map").is_null())) {
      // An output_map whose entries lost one level of indentation.
      entries[key] = value;
      flattened = true;
    } else {
      r.warning(child_path(path, key), "unknown key '" + key + "' ignored");
    }
  }
  if (flattened) {
    r.warning(mpath, "output_map entries found directly under output_config; treating them as output_map");
  }
  for (const auto& [name, spec] : entries.items()) {
    const std::string fpath = flattened ? child_path(path, name) : child_path(mpath, name);
    if (!r.expect_map(spec, fpath)) continue;
    r.warn_unknown_keys(spec, fpath, {"from", "value", "transform"});
    const int set = static_cast<int>(spec.contains("from")) + static_cast<int>(spec.contains("value")) +
                    static_cast<int>(spec.contains("transform"));
    if (set != 1) {
      r.error(fpath, "output field must set exactly one of from, value, transform");
      continue;
    }
    OutputField field;
    field.name = name;
    if (spec.contains("from")) {
      field.kind = OutputField::Kind::from;
      field.from = r.string_at(spec, "from", fpath, true).value_or("");
      if (field.from.empty()) r.error(child_path(fpath, "from"), "from must name a state key");
    } else if (spec.contains("value")) {
      field.kind = OutputField::Kind::value;
      field.value = spec.at("value");
    } else {
      field.kind = OutputField::Kind::transform;
      field.transform = r.string_at(spec, "transform", fpath, true).value_or("");
    }
    output.output_map.push_back(std::move(field));
  }
  output.generator = r.string_at(v, "generator", path, false).value_or("");
  if (output.output_map.empty() && output.generator.empty()) {
    r.error(mpath, "output_config requires a non-empty output_map or a generator");
  }
  return output;
}

std::optional<SchemaConfig> parse_schema(Reader& r, const Value& v, const std::string& path) {
  if (!r.expect_map(v, path)) return std::nullopt;
  r.warn_unknown_keys(v, path, {"schema", "fields"});
  SchemaConfig schema;
  schema.schema_class = r.string_at(v, "schema", path, false).value_or("");
  const bool has_fields = v.contains("fields") && !v.at("fields").is_null();
  if (!schema.schema_class.empty() && has_fields) {
    r.error(path, "schema_config sets both schema and fields");
  }
  if (schema.schema_class.empty() && !has_fields) {
    r.error(path, "schema_config requires schema or fields");
  }
  if (has_fields) {
    const Value& fields = v.at("fields");
    const std::string fpath = child_path(path, "fields");
    if (!fields.is_array()) {
      r.error(fpath, "fields must be a list");
      return schema;
    }
    std::set<std::string> names;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const std::string ip = index_path(fpath, i);
      if (!r.expect_map(fields[i], ip)) continue;
      SchemaField field;
      field.name = r.string_at(fields[i], "name", ip, true).value_or("");
      field.type = r.string_at(fields[i], "type", ip, true).value_or("");
      if (!field.name.empty() && !names.insert(field.name).second) {
        r.error(child_path(ip, "name"), "field '" + field.name + "' declared twice");
      }
      for (const auto& [key, operand] : fields[i].items()) {
        if (key == "name" || key == "type" || key == "description") continue;
        SchemaRule rule{SchemaRule::Kind::regex, operand};
        if (key == "is_greater_than") {
          rule.kind = SchemaRule::Kind::is_greater_than;
        } else if (key == "is_less_than") {
          rule.kind = SchemaRule::Kind::is_less_than;
        } else if (key == "regex") {
          rule.kind = SchemaRule::Kind::regex;
        } else if (key == "non_empty") {
          rule.kind = SchemaRule::Kind::non_empty;
        } else {
          r.warning(child_path(ip, key), "unknown rule '" + key + "' ignored");
          continue;
        }
        field.rules.push_back(std::move(rule));
      }
      schema.fields.push_back(std::move(field));
    }
  }
  return schema;
}

std::optional<QualityConfig> parse_quality(Reader& r, const Value& v, const std::string& path) {
  if (!r.expect_map(v, path)) return std::nullopt;
  r.warn_unknown_keys(v, path, {"conversation_key", "min_chars", "max_chars", "ngram", "repetition_threshold",
                                "refusal_phrases", "judge_model", "llm_threshold"});
  QualityConfig q;
  q.conversation_key = r.string_at(v, "conversation_key", path, false).value_or(q.conversation_key);
  auto non_negative = [&](const char* key, std::size_t fallback) {
    const auto value = r.int_at(v, key, path);
    if (value && *value < 0) {
      r.error(child_path(path, key), std::string(key) + " must be >= 0");
      return fallback;
    }
    return value ? static_cast<std::size_t>(*value) : fallback;
  };
  q.min_chars = non_negative("min_chars", q.min_chars);
  q.max_chars = non_negative("max_chars", q.max_chars);
  q.ngram = non_negative("ngram", q.ngram);
  if (q.ngram == 0) r.error(child_path(path, "ngram"), "ngram must be >= 1");
  q.repetition_threshold = r.number_at(v, "repetition_threshold", path).value_or(q.repetition_threshold);
  q.refusal_phrases = r.string_list_at(v, "refusal_phrases", path);
  q.judge_model = r.string_at(v, "judge_model", path, false).value_or("");
  q.llm_threshold = r.number_at(v, "llm_threshold", path).value_or(q.llm_threshold);
  if (q.min_chars > q.max_chars) r.error(path, "min_chars must not exceed max_chars");
  return q;
}

std::optional<OasstConfig> parse_oasst(Reader& r, const Value& v, const std::string& path) {
  if (!r.expect_map(v, path)) return std::nullopt;
  r.warn_unknown_keys(v, path, {"conversation_key", "quality_key", "lang"});
  OasstConfig o;
  o.conversation_key = r.string_at(v, "conversation_key", path, false).value_or(o.conversation_key);
  o.quality_key = r.string_at(v, "quality_key", path, false).value_or(o.quality_key);
  o.lang = r.string_at(v, "lang", path, false).value_or("");
  return o;
}

}  // namespace

ParseResult parse_pipeline_config(std::string_view yaml_text) {
  ParseResult result;
  MarkMap marks;
  Value document;
  try {
    document = load_yaml(yaml_text, &marks, &result.diagnostics);
  } catch (const Diagnostic& d) {
    result.diagnostics.push_back(d);
    return result;
  } catch (const std::exception& e) {
    result.diagnostics.push_back(make_error("", std::string("YAML error: ") + e.what()));
    return result;
  }

  try {
    Reader r(marks, result.diagnostics);
    if (document.is_null()) document = Value::object();
    if (!document.is_object()) {
      r.error("", "pipeline config must be a map");
      return result;
    }
    r.warn_unknown_keys(document, "", {"data_config", "graph_config", "output_config", "schema_config",
                                       "quality_config", "oasst_config"});
    PipelineConfig config;
    config.document = document;

    if (document.contains("data_config") && !document.at("data_config").is_null()) {
      config.data = parse_data(r, document.at("data_config"), "data_config");
    }
    if (!document.contains("graph_config") || document.at("graph_config").is_null()) {
      r.error("graph_config", "missing graph_config");
    } else if (auto graph = parse_graph(r, document.at("graph_config"), "graph_config")) {
      config.graph = std::move(*graph);
    }
    if (!document.contains("output_config") || document.at("output_config").is_null()) {
      r.error("output_config", "missing output_config");
    } else if (auto output = parse_output(r, document.at("output_config"), "output_config")) {
      config.output = std::move(*output);
    }
    if (document.contains("schema_config") && !document.at("schema_config").is_null()) {
      config.schema = parse_schema(r, document.at("schema_config"), "schema_config");
      if (config.schema) {
        for (auto& d : validate_schema_rules(*config.schema)) result.diagnostics.push_back(std::move(d));
      }
    }
    if (document.contains("quality_config") && !document.at("quality_config").is_null()) {
      config.quality = parse_quality(r, document.at("quality_config"), "quality_config");
    }
    if (document.contains("oasst_config") && !document.at("oasst_config").is_null()) {
      config.oasst = parse_oasst(r, document.at("oasst_config"), "oasst_config");
    }
    if (!has_errors(result.diagnostics)) result.config = std::move(config);
  } catch (const std::exception& e) {
    result.config.reset();
    result.diagnostics.push_back(make_error("", std::string("internal error while reading config: ") + e.what()));
  }
  return result;
}

GraphParseResult parse_graph_file(std::string_view yaml_text) {
  GraphParseResult result;
  MarkMap marks;
  Value document;
  try {
    document = load_yaml(yaml_text, &marks, &result.diagnostics);
  } catch (const Diagnostic& d) {
    result.diagnostics.push_back(d);
    return result;
  }
  try {
    Reader r(marks, result.diagnostics);
    if (!document.is_object()) {
      r.error("", "graph file must be a map");
      return result;
    }
    std::optional<GraphConfig> graph;
    if (document.contains("graph_config")) {
      graph = parse_graph(r, document.at("graph_config"), "graph_config");
    } else {
      graph = parse_graph(r, document, "");
    }
    if (!has_errors(result.diagnostics)) result.graph = std::move(graph);
  } catch (const std::exception& e) {
    result.diagnostics.push_back(make_error("", std::string("internal error while reading graph: ") + e.what()));
  }
  return result;
}

// ---------------------------------------------------------------------------
// typed config -> Value / YAML
// ---------------------------------------------------------------------------

namespace {

Value source_value(const SourceSpec& s) {
  Value v = Value::object();
  v["type"] = std::string(to_string(s.kind));
  if (!s.file_path.empty()) v["file_path"] = s.file_path;
  if (s.file_format) v["file_format"] = std::string(to_string(*s.file_format));
  if (!s.repo_id.empty()) v["repo_id"] = s.repo_id;
  if (!s.config_name.empty()) v["config_name"] = s.config_name;
  if (!s.splits.empty()) v["split"] = s.splits;
  if (s.streaming) v["streaming"] = true;
  return v;
}

Value sink_value(const SinkSpec& s) {
  Value v = Value::object();
  v["type"] = std::string(to_string(s.kind));
  if (!s.file_path.empty()) v["file_path"] = s.file_path;
  if (s.file_format) v["file_format"] = std::string(to_string(*s.file_format));
  if (!s.repo_id.empty()) v["repo_id"] = s.repo_id;
  if (!s.config_name.empty()) v["config_name"] = s.config_name;
  if (!s.split.empty()) v["split"] = s.split;
  if (s.push_to_hub) v["push_to_hub"] = true;
  if (s.private_repo) v["private"] = true;
  if (s.has_token) v["token"] = "<redacted>";
  return v;
}

Value transform_value(const TransformSpec& t) {
  return std::visit(
      [](const auto& p) -> Value {
        using T = std::decay_t<decltype(p)>;
        Value params = Value::object();
        std::string name;
        if constexpr (std::is_same_v<T, RenameParams>) {
          name = "rename_fields";
          params["mapping"] = Value::object();
          for (const auto& [from, to] : p.mapping) params["mapping"][from] = to;
          params["overwrite"] = p.overwrite;
        } else if constexpr (std::is_same_v<T, CombineParams>) {
          name = "combine_records";
          params["num_records"] = p.num_records;
          params["shift"] = p.shift;
          Value strategies = Value::object();
          for (const auto& [field, s] : p.field_strategies) {
            if (s.kind == FieldStrategy::Kind::join) {
              strategies[field] = Value{{"join", s.delimiter}};
            } else {
              strategies[field] = s.kind == FieldStrategy::Kind::first ? "first" : "last";
            }
          }
          params["field_strategies"] = strategies;
        } else {
          name = "skip_records";
          params["from_start"] = p.from_start;
          params["from_end"] = p.from_end;
        }
        return Value{{"transform", name}, {"params", params}};
      },
      t);
}

Value model_value(const ModelSpec& m) {
  Value v{{"name", m.name}};
  if (!m.parameters.empty()) v["parameters"] = m.parameters;
  return v;
}

Value node_value(const NodeSpec& n) {
  Value v = Value::object();
  v["node_type"] = std::string(to_string(n.type));
  if (!n.prompt.empty()) {
    Value prompt = Value::array();
    for (const auto& m : n.prompt) {
      if (!m.typed_parts && m.parts.size() == 1 && m.parts[0].kind == PromptPart::Kind::text) {
        prompt.push_back(Value{{m.role, m.parts[0].payload}});
      } else {
        Value parts = Value::array();
        for (const auto& p : m.parts) {
          const std::string key(to_string(p.kind));
          parts.push_back(Value{{"type", key}, {key, p.payload}});
        }
        prompt.push_back(Value{{m.role, parts}});
      }
    }
    v["prompt"] = prompt;
  }
  if (n.model) v["model"] = model_value(*n.model);
  if (!n.models.empty()) {
    v["models"] = Value::array();
    for (const auto& m : n.models) v["models"].push_back(model_value(m));
  }
  if (!n.output_keys.empty()) v["output_keys"] = n.output_keys;
  if (!n.lambda.empty()) v["lambda"] = n.lambda;
  if (!n.tools.empty()) v["tools"] = n.tools;
  if (!n.inject_system_messages.empty()) {
    Value inject = Value::object();
    for (const auto& [turn, text] : n.inject_system_messages) inject[std::to_string(turn)] = text;
    v["inject_system_messages"] = inject;
  }
  if (n.structured_output) {
    Value so{{"enabled", n.structured_output->enabled}};
    if (!n.structured_output->schema_class.empty()) {
      so["schema"] = n.structured_output->schema_class;
    } else {
      Value fields = Value::object();
      for (const auto& f : n.structured_output->fields) {
        Value def{{"type", f.type}};
        if (!f.description.empty()) def["description"] = f.description;
        fields[f.name] = def;
      }
      so["schema"] = Value{{"fields", fields}};
    }
    v["structured_output"] = so;
  }
  if (!n.pre_process.empty()) v["pre_process"] = n.pre_process;
  if (!n.post_process.empty()) v["post_process"] = n.post_process;
  if (!n.sampler.empty()) {
    v["sampler"] = Value::array();
    for (const auto& c : n.sampler) v["sampler"].push_back(Value{{"value", c.value}, {"weight", c.weight}});
  }
  if (!n.subgraph.empty()) v["subgraph"] = n.subgraph;
  if (n.max_turns != 8) v["max_turns"] = n.max_turns;
  return v;
}

}  // namespace

Value to_value(const GraphConfig& g) {
  Value v = Value::object();
  Value settings = Value::object();
  settings["chat_conversation"] = g.settings.chat_conversation == ChatMode::multiturn ? "multiturn" : "singleturn";
  settings["chat_history_window_size"] = g.settings.chat_history_window_size;
  if (g.settings.loop_budget) settings["loop_budget"] = *g.settings.loop_budget;
  for (const auto& [key, value] : g.settings.extra.items()) settings[key] = value;
  v["settings"] = settings;
  v["nodes"] = Value::object();
  for (const auto& [name, node] : g.nodes) v["nodes"][name] = node_value(node);
  v["edges"] = Value::array();
  for (const auto& e : g.edges) {
    Value edge{{"from", e.from}};
    if (!e.to.empty()) edge["to"] = e.to;
    if (!e.condition.empty()) {
      edge["condition"] = e.condition;
      Value pm = Value::object();
      for (const auto& [label, target] : e.path_map) pm[label] = target;
      edge["path_map"] = pm;
    }
    v["edges"].push_back(edge);
  }
  return v;
}

Value to_value(const PipelineConfig& c) {
  Value v = Value::object();
  if (c.data) {
    Value data = Value::object();
    if (c.data->source) data["source"] = source_value(*c.data->source);
    if (c.data->sink) data["sink"] = sink_value(*c.data->sink);
    if (!c.data->transforms.empty()) {
      data["transformations"] = Value::array();
      for (const auto& t : c.data->transforms) data["transformations"].push_back(transform_value(t));
    }
    v["data_config"] = data;
  }
  v["graph_config"] = to_value(c.graph);
  Value output = Value::object();
  Value map = Value::object();
  for (const auto& f : c.output.output_map) {
    switch (f.kind) {
      case OutputField::Kind::from: map[f.name] = Value{{"from", f.from}}; break;
      case OutputField::Kind::value: map[f.name] = Value{{"value", f.value}}; break;
      case OutputField::Kind::transform: map[f.name] = Value{{"transform", f.transform}}; break;
    }
  }
  if (!map.empty()) output["output_map"] = map;
  if (!c.output.generator.empty()) output["generator"] = c.output.generator;
  v["output_config"] = output;
  if (c.schema) {
    Value schema = Value::object();
    if (!c.schema->schema_class.empty()) schema["schema"] = c.schema->schema_class;
    if (!c.schema->fields.empty()) {
      schema["fields"] = Value::array();
      for (const auto& f : c.schema->fields) {
        Value field{{"name", f.name}, {"type", f.type}};
        for (const auto& rule : f.rules) field[std::string(to_string(rule.kind))] = rule.operand;
        schema["fields"].push_back(field);
      }
    }
    v["schema_config"] = schema;
  }
  if (c.quality) {
    const auto& q = *c.quality;
    Value quality{{"conversation_key", q.conversation_key}, {"min_chars", q.min_chars},
                  {"max_chars", q.max_chars},               {"ngram", q.ngram},
                  {"repetition_threshold", q.repetition_threshold}, {"llm_threshold", q.llm_threshold}};
    if (!q.refusal_phrases.empty()) quality["refusal_phrases"] = q.refusal_phrases;
    if (!q.judge_model.empty()) quality["judge_model"] = q.judge_model;
    v["quality_config"] = quality;
  }
  if (c.oasst) {
    Value oasst{{"conversation_key", c.oasst->conversation_key}, {"quality_key", c.oasst->quality_key}};
    if (!c.oasst->lang.empty()) oasst["lang"] = c.oasst->lang;
    v["oasst_config"] = oasst;
  }
  return v;
}

namespace {

void emit(YAML::Emitter& out, const Value& v) {
  if (v.is_object()) {
    out << YAML::BeginMap;
    for (const auto& [key, value] : v.items()) {
      out << YAML::Key << YAML::DoubleQuoted << key << YAML::Value;
      emit(out, value);
    }
    out << YAML::EndMap;
  } else if (v.is_array()) {
    out << YAML::BeginSeq;
    for (const auto& item : v) emit(out, item);
    out << YAML::EndSeq;
  } else if (v.is_string()) {
    out << YAML::DoubleQuoted << v.get<std::string>();
  } else if (v.is_null()) {
    out << YAML::Null;
  } else if (v.is_boolean()) {
    out << (v.get<bool>() ? "true" : "false");
  } else if (v.is_number_integer()) {
    out << v.dump();
  } else {
    // JSON number text round-trips doubles exactly.
    const double d = v.get<double>();
    if (std::isnan(d)) {
      out << ".nan";
    } else if (std::isinf(d)) {
      out << (d > 0 ? ".inf" : "-.inf");
    } else {
      std::string text = v.dump();
      if (text.find_first_of(".eE") == std::string::npos) text += ".0";
      out << text;
    }
  }
}

}  // namespace

std::string serialize_pipeline_config(const PipelineConfig& config) {
  YAML::Emitter out;
  emit(out, to_value(config));
  return std::string(out.c_str()) + "\n";
}

// ---------------------------------------------------------------------------
// $-paths
// ---------------------------------------------------------------------------

Value resolve_config_path(const PipelineConfig& config, std::string_view path) {
  if (path.empty() || path.front() != '$') {
    throw Error(ErrorKind::path_not_found, "config path must start with '$': " + std::string(path));
  }
  const Value* node = &config.document;
  const std::string_view body = path.substr(1);
  if (!body.empty()) {
    for (const auto& segment : split(body, '.')) {
      if (node->is_object() && node->contains(segment)) {
        node = &node->at(segment);
        continue;
      }
      if (node->is_array() && !segment.empty() &&
          std::all_of(segment.begin(), segment.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
        const std::size_t index = std::stoul(segment);
        if (index < node->size()) {
          node = &(*node)[index];
          continue;
        }
      }
      throw Error(ErrorKind::path_not_found, segment);
    }
  }
  if (node->is_structured()) {
    throw Error(ErrorKind::non_scalar_path, std::string(path) + " does not name a scalar");
  }
  return *node;
}

Value substitute_config_paths(const PipelineConfig& config, const std::string& text) {
  static const std::regex kPath(R"(\$([A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z0-9_\-]+)*))");
  std::smatch whole;
  if (std::regex_match(text, whole, kPath)) {
    const std::string head = split(whole[1].str(), '.').front();
    if (config.document.contains(head)) return resolve_config_path(config, text);
    return text;
  }
  std::string out;
  auto begin = text.cbegin();
  std::smatch m;
  while (std::regex_search(begin, text.cend(), m, kPath)) {
    out.append(begin, m[0].first);
    const std::string head = split(m[1].str(), '.').front();
    if (config.document.contains(head)) {
      out += display(resolve_config_path(config, m[0].str()));
    } else {
      out += m[0].str();
    }
    begin = m[0].second;
  }
  out.append(begin, text.cend());
  return out;
}

// ---------------------------------------------------------------------------
// schema rules
// ---------------------------------------------------------------------------

std::vector<Diagnostic> validate_schema_rules(const SchemaConfig& schema) {
  std::vector<Diagnostic> out;
  for (std::size_t i = 0; i < schema.fields.size(); ++i) {
    const SchemaField& field = schema.fields[i];
    const std::string path = fmt::format("schema_config.fields[{}]", i);
    const auto type = parse_type_expr(field.type);
    if (!type) {
      out.push_back(make_error(path + ".type", "unsupported type '" + field.type + "' for field " + field.name));
      continue;
    }
    for (const auto& rule : field.rules) {
      const std::string rpath = path + "." + std::string(to_string(rule.kind));
      switch (rule.kind) {
        case SchemaRule::Kind::is_greater_than:
        case SchemaRule::Kind::is_less_than:
          if (!type->is_numeric()) {
            out.push_back(make_error(rpath, "numeric rule on " + to_string(*type) + " field " + field.name));
          }
          if (!rule.operand.is_number()) {
            out.push_back(make_error(rpath, "operand must be a number"));
          }
          break;
        case SchemaRule::Kind::regex:
          if (type->kind != TypeExpr::Kind::str) {
            out.push_back(make_error(rpath, "regex rule on " + to_string(*type) + " field " + field.name));
          }
          if (!rule.operand.is_string()) {
            out.push_back(make_error(rpath, "regex operand must be a string"));
          } else {
            try {
              std::regex re(rule.operand.get<std::string>());
            } catch (const std::regex_error& e) {
              out.push_back(make_error(rpath, std::string("invalid regex: ") + e.what()));
            }
          }
          break;
        case SchemaRule::Kind::non_empty:
          if (type->kind != TypeExpr::Kind::str && type->kind != TypeExpr::Kind::list &&
              type->kind != TypeExpr::Kind::dict) {
            out.push_back(make_error(rpath, "non_empty rule on " + to_string(*type) + " field " + field.name));
          }
          if (!rule.operand.is_boolean()) {
            out.push_back(make_error(rpath, "non_empty operand must be a bool"));
          }
          break;
      }
    }
  }
  return out;
}

}  // namespace grasp
