#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "debias/corpus.hpp"

namespace debias {

using Tokens = std::vector<std::string>;

enum class BiasFeatureKind {
  kAllInP,
  kHIsSubseq,
  kPercentInP,
  kNegInH,
  kSingleInputA,
  kSingleInputB,
  kPlanted,
};

enum class SubseqMode { kContiguous, kInOrder };

// Tokens planted by a generator (or known a priori) that signal a label.
//   kOneHot: tokens[k] present -> bias label k.
//   kXor:    tokens = {x0, x1, y0, y1}; pattern present when one of x0/x1 and
//            one of y0/y1 occur; bias label = [x1 present] xor [y1 present].
struct PlantedRule {
  enum class Combine { kOneHot, kXor };
  enum class Field { kA, kB, kAny };
  Combine combine = Combine::kOneHot;
  Field field = Field::kB;
  std::vector<std::string> tokens;

  friend bool operator==(const PlantedRule&, const PlantedRule&) = default;
};

struct BiasFeatureSpec {
  std::string name;
  BiasFeatureKind kind = BiasFeatureKind::kAllInP;
  LabelId bias_target_label = 0;      // unused by kPlanted
  std::optional<double> threshold;    // kPercentInP only, in (0, 1]
  std::optional<PlantedRule> planted; // kPlanted only

  bool is_predicate() const {
    return kind != BiasFeatureKind::kSingleInputA &&
           kind != BiasFeatureKind::kSingleInputB;
  }
  // Throws ValidationError on an inconsistent spec for a C-class task.
  void validate(int num_classes) const;

  friend bool operator==(const BiasFeatureSpec&, const BiasFeatureSpec&) = default;
};

std::set<std::string> default_negation_lexicon();
// One token per line; blank lines and lines starting with '#' are skipped.
std::set<std::string> load_negation_lexicon(const std::string& path);

bool all_in_p(std::span<const std::string> hyp, std::span<const std::string> prem);
bool h_is_subseq(std::span<const std::string> hyp, std::span<const std::string> prem,
                 SubseqMode mode = SubseqMode::kContiguous);
double percent_in_p(std::span<const std::string> hyp, std::span<const std::string> prem);
bool neg_in_h(std::span<const std::string> hyp, const std::set<std::string>& lexicon);

// Which handcrafted features make up the vector, in this fixed order:
//   all_in_p, h_is_subseq, percent_in_p, neg_in_h, length_ratio,
//   then the bias-of-interest block (one indicator for a predicate spec,
//   one per planted token for a planted spec).
struct FeatureConfig {
  bool all_in_p = true;
  bool h_is_subseq = true;
  bool percent_in_p = true;
  bool neg_in_h = true;
  bool length_ratio = true;
  std::optional<BiasFeatureSpec> bias_of_interest;
  std::set<std::string> negation_lexicon = default_negation_lexicon();
  SubseqMode subseq_mode = SubseqMode::kContiguous;

  std::size_t dimension() const;
  std::vector<std::string> names() const;

  friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

// Tokenized views shared by the predicates. Premise is text_a, hypothesis is
// text_b (empty when absent).
struct TokenizedPair {
  Tokens prem;
  Tokens hyp;
};
TokenizedPair tokenize_pair(const Example& ex);

// Predicate value of a spec on an example. For kPlanted: pattern present.
// Throws ValidationError for kSingleInput* (model-based, no predicate).
bool has_feature(const Example& ex, const BiasFeatureSpec& spec,
                 const FeatureConfig& cfg);
bool has_feature(const TokenizedPair& tp, const BiasFeatureSpec& spec,
                 const FeatureConfig& cfg);

// The label the bias pattern points to, or nullopt when the example does not
// carry the feature. Predicate specs point to bias_target_label.
std::optional<LabelId> bias_label(const Example& ex, const BiasFeatureSpec& spec,
                                  const FeatureConfig& cfg);

std::vector<double> feature_vector(const Example& ex, const FeatureConfig& cfg);
std::vector<double> feature_vector(const TokenizedPair& tp, const FeatureConfig& cfg);

std::string to_string(BiasFeatureKind kind);
BiasFeatureKind parse_bias_feature_kind(const std::string& s);

}  // namespace debias
