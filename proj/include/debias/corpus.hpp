#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace debias {

using LabelId = int;

// One labeled instance. text_a is the premise/claim, text_b the optional
// hypothesis/evidence.
struct Example {
  std::string id;
  std::string text_a;
  std::optional<std::string> text_b;
  LabelId label = 0;

  friend bool operator==(const Example&, const Example&) = default;
};

// Ordered examples over a fixed label set. Equality ignores provenance.
struct Dataset {
  std::vector<Example> examples;
  std::vector<std::string> label_names;
  std::string provenance;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  int num_classes() const { return static_cast<int>(label_names.size()); }

  // Throws ValidationError if C < 2, a label is out of range, an id repeats,
  // or a text_a is empty.
  void validate() const;

  // New dataset with the same label set holding the examples at `indices`.
  Dataset subset(const std::vector<std::size_t>& indices,
                 std::string provenance_suffix = {}) const;

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.examples == b.examples && a.label_names == b.label_names;
  }
};

// Maps JSONL field names onto Example fields. Label order comes from
// label_names, never from the data.
struct Schema {
  std::string id_field = "id";
  std::string text_a_field = "premise";
  std::string text_b_field = "hypothesis";  // empty: single-text task
  bool text_b_optional = false;
  std::string label_field = "label";
  std::vector<std::string> label_names;
};

// Lowercased whitespace tokens with surrounding ASCII punctuation stripped and
// the clitic "n't" split off ("isn't" -> "is", "n't").
std::vector<std::string> tokenize(std::string_view text);

// Lines without the id field get the id "line-<n>". Labels may be given as a
// label-name string or as an integer index.
Dataset load_jsonl(const std::filesystem::path& path, const Schema& schema);
Dataset parse_jsonl(std::string_view contents, const Schema& schema,
                    std::string provenance = "<memory>");

std::string to_jsonl(const Dataset& dataset, const Schema& schema);
void write_jsonl(const Dataset& dataset, const Schema& schema,
                 const std::filesystem::path& path);

// Schema that write_jsonl output for this dataset can be read back with.
Schema default_schema(const Dataset& dataset);

class Vocab {
 public:
  static constexpr int kUnknown = 0;
  static constexpr std::string_view kUnknownToken = "<unk>";

  Vocab();
  // `tokens` excludes the unknown token and is taken in index order 1..n.
  Vocab(std::vector<std::string> tokens, int min_count);

  int index(std::string_view token) const;
  const std::string& token(int index) const { return tokens_.at(index); }
  std::size_t size() const { return tokens_.size(); }
  int min_count() const { return min_count_; }
  // All tokens including "<unk>" at index 0.
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.tokens_ == b.tokens_ && a.min_count_ == b.min_count_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int min_count_ = 1;
};

// Counts tokens over text_a and text_b. Indices are assigned by descending
// count, then ascending token; tokens seen fewer than min_count times are
// dropped.
Vocab build_vocab(const Dataset& dataset, int min_count = 1);

}  // namespace debias
