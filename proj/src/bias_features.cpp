#include "debias/bias_features.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include <fmt/format.h>

#include "debias/error.hpp"

namespace debias {

namespace {

constexpr double kMaxLengthRatio = 4.0;

bool pair_features_enabled(const FeatureConfig& cfg) {
  return cfg.all_in_p || cfg.h_is_subseq || cfg.percent_in_p || cfg.neg_in_h ||
         cfg.length_ratio;
}

bool contains(std::span<const std::string> haystack, const std::string& token) {
  return std::find(haystack.begin(), haystack.end(), token) != haystack.end();
}

// Indicator per planted token, looked up in the rule's field(s).
std::vector<bool> planted_indicators(const TokenizedPair& tp,
                                     const PlantedRule& rule) {
  std::vector<bool> present(rule.tokens.size(), false);
  for (std::size_t i = 0; i < rule.tokens.size(); ++i) {
    const std::string& t = rule.tokens[i];
    switch (rule.field) {
      case PlantedRule::Field::kA: present[i] = contains(tp.prem, t); break;
      case PlantedRule::Field::kB: present[i] = contains(tp.hyp, t); break;
      case PlantedRule::Field::kAny:
        present[i] = contains(tp.prem, t) || contains(tp.hyp, t);
        break;
    }
  }
  return present;
}

std::optional<LabelId> planted_label(const TokenizedPair& tp,
                                     const PlantedRule& rule) {
  std::vector<bool> present = planted_indicators(tp, rule);
  if (rule.combine == PlantedRule::Combine::kOneHot) {
    // Several class tokens at once resolve to the smallest class.
    for (std::size_t k = 0; k < present.size(); ++k) {
      if (present[k]) return static_cast<LabelId>(k);
    }
    return std::nullopt;
  }
  const bool x0 = present[0], x1 = present[1], y0 = present[2], y1 = present[3];
  if (!(x0 || x1) || !(y0 || y1)) return std::nullopt;
  return static_cast<LabelId>(x1 != y1);
}

void require_hypothesis(const TokenizedPair&, const Example& ex,
                        const FeatureConfig& cfg) {
  if (!ex.text_b && pair_features_enabled(cfg)) {
    throw ValidationError(fmt::format(
        "example '{}': pair features need text_b (hypothesis)", ex.id));
  }
}

}  // namespace

void BiasFeatureSpec::validate(int num_classes) const {
  if (kind == BiasFeatureKind::kPlanted) {
    if (!planted || planted->tokens.empty()) {
      throw ValidationError(fmt::format("feature '{}': planted rule without tokens", name));
    }
    if (planted->combine == PlantedRule::Combine::kOneHot &&
        static_cast<int>(planted->tokens.size()) != num_classes) {
      throw ValidationError(fmt::format(
          "feature '{}': one-hot planted rule needs {} tokens, has {}", name,
          num_classes, planted->tokens.size()));
    }
    if (planted->combine == PlantedRule::Combine::kXor &&
        (planted->tokens.size() != 4 || num_classes != 2)) {
      throw ValidationError(fmt::format(
          "feature '{}': xor planted rule needs 4 tokens and 2 classes", name));
    }
    return;
  }
  if (bias_target_label < 0 || bias_target_label >= num_classes) {
    throw ValidationError(fmt::format("feature '{}': bias target label {} out of range",
                                      name, bias_target_label));
  }
  if (threshold) {
    if (kind != BiasFeatureKind::kPercentInP) {
      throw ValidationError(fmt::format("feature '{}': threshold only applies to percent_in_p", name));
    }
    if (!(*threshold > 0.0 && *threshold <= 1.0)) {
      throw ValidationError(fmt::format("feature '{}': threshold must be in (0, 1]", name));
    }
  }
}

std::set<std::string> default_negation_lexicon() {
  return {"no", "not", "none", "nothing", "never", "nobody", "neither", "nor", "n't"};
}

std::set<std::string> load_negation_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open negation lexicon '{}'", path));
  std::set<std::string> lexicon;
  std::string line;
  while (std::getline(in, line)) {
    auto toks = tokenize(line);
    if (line.empty() || line.front() == '#' || toks.empty()) continue;
    lexicon.insert(toks.begin(), toks.end());
  }
  return lexicon;
}

bool all_in_p(std::span<const std::string> hyp, std::span<const std::string> prem) {
  std::unordered_set<std::string_view> types(prem.begin(), prem.end());
  return std::all_of(hyp.begin(), hyp.end(),
                     [&](const std::string& t) { return types.contains(t); });
}

bool h_is_subseq(std::span<const std::string> hyp, std::span<const std::string> prem,
                 SubseqMode mode) {
  if (hyp.empty()) return true;
  if (mode == SubseqMode::kContiguous) {
    return std::search(prem.begin(), prem.end(), hyp.begin(), hyp.end()) != prem.end();
  }
  std::size_t matched = 0;
  for (const std::string& t : prem) {
    if (matched < hyp.size() && t == hyp[matched]) ++matched;
  }
  return matched == hyp.size();
}

double percent_in_p(std::span<const std::string> hyp, std::span<const std::string> prem) {
  if (hyp.empty()) return 1.0;
  std::unordered_set<std::string_view> types(prem.begin(), prem.end());
  std::size_t covered = 0;
  for (const std::string& t : hyp) covered += types.contains(t);
  return static_cast<double>(covered) / static_cast<double>(hyp.size());
}

bool neg_in_h(std::span<const std::string> hyp, const std::set<std::string>& lexicon) {
  return std::any_of(hyp.begin(), hyp.end(),
                     [&](const std::string& t) { return lexicon.contains(t); });
}

std::size_t FeatureConfig::dimension() const { return names().size(); }

std::vector<std::string> FeatureConfig::names() const {
  std::vector<std::string> out;
  if (all_in_p) out.emplace_back("all_in_p");
  if (h_is_subseq) out.emplace_back("h_is_subseq");
  if (percent_in_p) out.emplace_back("percent_in_p");
  if (neg_in_h) out.emplace_back("neg_in_h");
  if (length_ratio) out.emplace_back("length_ratio");
  if (bias_of_interest) {
    if (bias_of_interest->kind == BiasFeatureKind::kPlanted) {
      for (const auto& t : bias_of_interest->planted->tokens) {
        out.push_back("planted:" + t);
      }
    } else if (bias_of_interest->is_predicate()) {
      out.push_back("bias:" + bias_of_interest->name);
    }
  }
  return out;
}

TokenizedPair tokenize_pair(const Example& ex) {
  return {tokenize(ex.text_a), ex.text_b ? tokenize(*ex.text_b) : Tokens{}};
}

bool has_feature(const TokenizedPair& tp, const BiasFeatureSpec& spec,
                 const FeatureConfig& cfg) {
  switch (spec.kind) {
    case BiasFeatureKind::kAllInP: return all_in_p(tp.hyp, tp.prem);
    case BiasFeatureKind::kHIsSubseq: return h_is_subseq(tp.hyp, tp.prem, cfg.subseq_mode);
    case BiasFeatureKind::kPercentInP:
      return percent_in_p(tp.hyp, tp.prem) >= spec.threshold.value_or(1.0);
    case BiasFeatureKind::kNegInH: return neg_in_h(tp.hyp, cfg.negation_lexicon);
    case BiasFeatureKind::kPlanted: return planted_label(tp, *spec.planted).has_value();
    case BiasFeatureKind::kSingleInputA:
    case BiasFeatureKind::kSingleInputB: break;
  }
  throw ValidationError(fmt::format(
      "feature '{}' is model-based and has no predicate", spec.name));
}

bool has_feature(const Example& ex, const BiasFeatureSpec& spec,
                 const FeatureConfig& cfg) {
  if (spec.kind != BiasFeatureKind::kPlanted && spec.is_predicate() && !ex.text_b) {
    throw ValidationError(fmt::format(
        "example '{}': feature '{}' needs text_b (hypothesis)", ex.id, spec.name));
  }
  return has_feature(tokenize_pair(ex), spec, cfg);
}

std::optional<LabelId> bias_label(const Example& ex, const BiasFeatureSpec& spec,
                                  const FeatureConfig& cfg) {
  if (spec.kind == BiasFeatureKind::kPlanted) {
    return planted_label(tokenize_pair(ex), *spec.planted);
  }
  if (has_feature(ex, spec, cfg)) return spec.bias_target_label;
  return std::nullopt;
}

std::vector<double> feature_vector(const TokenizedPair& tp, const FeatureConfig& cfg) {
  std::vector<double> v;
  v.reserve(cfg.dimension());
  if (cfg.all_in_p) v.push_back(all_in_p(tp.hyp, tp.prem) ? 1.0 : 0.0);
  if (cfg.h_is_subseq) v.push_back(h_is_subseq(tp.hyp, tp.prem, cfg.subseq_mode) ? 1.0 : 0.0);
  if (cfg.percent_in_p) v.push_back(percent_in_p(tp.hyp, tp.prem));
  if (cfg.neg_in_h) v.push_back(neg_in_h(tp.hyp, cfg.negation_lexicon) ? 1.0 : 0.0);
  if (cfg.length_ratio) {
    double ratio = tp.prem.empty()
                       ? kMaxLengthRatio
                       : static_cast<double>(tp.hyp.size()) / static_cast<double>(tp.prem.size());
    v.push_back(std::clamp(ratio, 0.0, kMaxLengthRatio));
  }
  if (cfg.bias_of_interest) {
    const BiasFeatureSpec& spec = *cfg.bias_of_interest;
    if (spec.kind == BiasFeatureKind::kPlanted) {
      for (bool b : planted_indicators(tp, *spec.planted)) v.push_back(b ? 1.0 : 0.0);
    } else if (spec.is_predicate()) {
      v.push_back(has_feature(tp, spec, cfg) ? 1.0 : 0.0);
    }
  }
  return v;
}

std::vector<double> feature_vector(const Example& ex, const FeatureConfig& cfg) {
  TokenizedPair tp = tokenize_pair(ex);
  require_hypothesis(tp, ex, cfg);
  return feature_vector(tp, cfg);
}

std::string to_string(BiasFeatureKind kind) {
  switch (kind) {
    case BiasFeatureKind::kAllInP: return "all_in_p";
    case BiasFeatureKind::kHIsSubseq: return "h_is_subseq";
    case BiasFeatureKind::kPercentInP: return "percent_in_p";
    case BiasFeatureKind::kNegInH: return "neg_in_h";
    case BiasFeatureKind::kSingleInputA: return "single_input_a";
    case BiasFeatureKind::kSingleInputB: return "single_input_b";
    case BiasFeatureKind::kPlanted: return "planted";
  }
  return "?";
}

BiasFeatureKind parse_bias_feature_kind(const std::string& s) {
  for (auto k : {BiasFeatureKind::kAllInP, BiasFeatureKind::kHIsSubseq,
                 BiasFeatureKind::kPercentInP, BiasFeatureKind::kNegInH,
                 BiasFeatureKind::kSingleInputA, BiasFeatureKind::kSingleInputB,
                 BiasFeatureKind::kPlanted}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError(fmt::format("unknown bias feature kind '{}'", s));
}

}  // namespace debias
