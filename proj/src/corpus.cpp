#include "debias/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>
#include "json.hpp"

#include "debias/error.hpp"

namespace debias {

using json = nlohmann::json;

namespace {

constexpr std::string_view kClitic = "n't";

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)); }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)); }

std::string_view strip_punct(std::string_view s) {
  while (!s.empty() && is_punct(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_punct(s.back())) s.remove_suffix(1);
  return s;
}

// Splits one whitespace-delimited word. The prefix left by a clitic split is
// stripped and split again, so tokenize(join(tokenize(x))) == tokenize(x).
void emit_word(std::string_view word, std::vector<std::string>& out) {
  word = strip_punct(word);
  if (word.empty()) return;
  if (word.size() > kClitic.size() && word.ends_with(kClitic)) {
    emit_word(word.substr(0, word.size() - kClitic.size()), out);
    out.emplace_back(kClitic);
    return;
  }
  out.emplace_back(word);
}

const json& require_field(const json& obj, const std::string& name,
                          std::size_t line) {
  auto it = obj.find(name);
  if (it == obj.end()) {
    throw ValidationError(
        fmt::format("line {}: missing field '{}'", line, name));
  }
  return *it;
}

std::string require_string(const json& value, const std::string& name,
                           std::size_t line) {
  if (!value.is_string()) {
    throw ValidationError(
        fmt::format("line {}: field '{}' is not a string", line, name));
  }
  return value.get<std::string>();
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::string lowered(text);
  for (char& c : lowered) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  std::vector<std::string> tokens;
  std::string_view rest(lowered);
  while (!rest.empty()) {
    std::size_t start = 0;
    while (start < rest.size() && is_space(rest[start])) ++start;
    std::size_t end = start;
    while (end < rest.size() && !is_space(rest[end])) ++end;
    if (end > start) emit_word(rest.substr(start, end - start), tokens);
    rest.remove_prefix(end);
  }
  return tokens;
}

void Dataset::validate() const {
  if (label_names.size() < 2) {
    throw ValidationError(fmt::format(
        "dataset '{}' needs at least 2 labels, has {}", provenance,
        label_names.size()));
  }
  std::unordered_set<std::string_view> ids;
  for (const Example& ex : examples) {
    if (ex.label < 0 || ex.label >= num_classes()) {
      throw ValidationError(fmt::format("example '{}': label {} out of range",
                                        ex.id, ex.label));
    }
    if (ex.text_a.empty()) {
      throw ValidationError(fmt::format("example '{}': empty text_a", ex.id));
    }
    if (!ids.insert(ex.id).second) {
      throw ValidationError(fmt::format("duplicate example id '{}'", ex.id));
    }
  }
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices,
                        std::string provenance_suffix) const {
  Dataset out;
  out.label_names = label_names;
  out.provenance = provenance + provenance_suffix;
  out.examples.reserve(indices.size());
  for (std::size_t i : indices) out.examples.push_back(examples.at(i));
  return out;
}

Dataset parse_jsonl(std::string_view contents, const Schema& schema,
                    std::string provenance) {
  if (schema.label_names.size() < 2) {
    throw ValidationError("schema must list at least 2 label names");
  }
  std::map<std::string, LabelId, std::less<>> label_index;
  for (std::size_t i = 0; i < schema.label_names.size(); ++i) {
    label_index.emplace(schema.label_names[i], static_cast<LabelId>(i));
  }

  Dataset ds;
  ds.label_names = schema.label_names;
  ds.provenance = std::move(provenance);

  std::istringstream in{std::string(contents)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::all_of(line.begin(), line.end(), is_space)) continue;

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError(
          fmt::format("line {}: malformed JSON: {}", line_no, e.what()));
    }
    if (!obj.is_object()) {
      throw ValidationError(
          fmt::format("line {}: expected a JSON object", line_no));
    }

    Example ex;
    if (auto it = obj.find(schema.id_field); it != obj.end()) {
      ex.id = it->is_string() ? it->get<std::string>() : it->dump();
    } else {
      ex.id = fmt::format("line-{}", line_no);
    }
    ex.text_a = require_string(require_field(obj, schema.text_a_field, line_no),
                               schema.text_a_field, line_no);
    if (!schema.text_b_field.empty()) {
      auto it = obj.find(schema.text_b_field);
      if (it != obj.end() && !it->is_null()) {
        ex.text_b = require_string(*it, schema.text_b_field, line_no);
      } else if (!schema.text_b_optional) {
        throw ValidationError(fmt::format("line {}: missing field '{}'",
                                          line_no, schema.text_b_field));
      }
    }

    const json& label = require_field(obj, schema.label_field, line_no);
    if (label.is_string()) {
      auto it = label_index.find(label.get<std::string>());
      if (it == label_index.end()) {
        throw ValidationError(fmt::format("line {}: unknown label '{}'",
                                          line_no, label.get<std::string>()));
      }
      ex.label = it->second;
    } else if (label.is_number_integer()) {
      ex.label = label.get<int>();
      if (ex.label < 0 || ex.label >= static_cast<int>(ds.label_names.size())) {
        throw ValidationError(fmt::format("line {}: unknown label '{}'",
                                          line_no, label.dump()));
      }
    } else {
      throw ValidationError(fmt::format("line {}: unknown label '{}'", line_no,
                                        label.dump()));
    }
    ds.examples.push_back(std::move(ex));
  }
  ds.validate();
  return ds;
}

Dataset load_jsonl(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError(fmt::format("cannot open '{}'", path.string()));
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_jsonl(buf.str(), schema, path.string());
}

Schema default_schema(const Dataset& dataset) {
  Schema s;
  s.id_field = "id";
  s.text_a_field = "text_a";
  s.text_b_field = "text_b";
  s.text_b_optional = true;
  s.label_field = "label";
  s.label_names = dataset.label_names;
  return s;
}

std::string to_jsonl(const Dataset& dataset, const Schema& schema) {
  std::string out;
  for (const Example& ex : dataset.examples) {
    // ordered_json keeps a stable field order, so hashes of the output are
    // reproducible.
    nlohmann::ordered_json obj;
    obj[schema.id_field] = ex.id;
    obj[schema.text_a_field] = ex.text_a;
    if (!schema.text_b_field.empty() && ex.text_b) {
      obj[schema.text_b_field] = *ex.text_b;
    }
    obj[schema.label_field] = dataset.label_names.at(ex.label);
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void write_jsonl(const Dataset& dataset, const Schema& schema,
                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ValidationError(fmt::format("cannot write '{}'", path.string()));
  }
  out << to_jsonl(dataset, schema);
}

Vocab::Vocab() : tokens_{std::string(kUnknownToken)} {
  index_.emplace(tokens_[0], kUnknown);
}

Vocab::Vocab(std::vector<std::string> tokens, int min_count)
    : Vocab() {
  min_count_ = min_count;
  for (std::string& t : tokens) {
    if (t == kUnknownToken) continue;
    auto [it, inserted] =
        index_.emplace(t, static_cast<int>(tokens_.size()));
    if (!inserted) {
      throw ValidationError(fmt::format("duplicate vocab token '{}'", t));
    }
    tokens_.push_back(std::move(t));
  }
}

int Vocab::index(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnknown : it->second;
}

Vocab build_vocab(const Dataset& dataset, int min_count) {
  if (min_count < 1) throw ValidationError("min_count must be >= 1");
  std::unordered_map<std::string, long> counts;
  for (const Example& ex : dataset.examples) {
    for (auto& t : tokenize(ex.text_a)) ++counts[t];
    if (ex.text_b) {
      for (auto& t : tokenize(*ex.text_b)) ++counts[t];
    }
  }
  std::vector<std::pair<std::string, long>> sorted;
  for (auto& [tok, n] : counts) {
    if (n >= min_count && tok != Vocab::kUnknownToken) sorted.emplace_back(tok, n);
  }
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(sorted.size());
  for (auto& [tok, n] : sorted) tokens.push_back(tok);
  return Vocab(std::move(tokens), min_count);
}

}  // namespace debias
