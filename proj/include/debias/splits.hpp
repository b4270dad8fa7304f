#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "debias/bias_features.hpp"
#include "debias/corpus.hpp"
#include "debias/model.hpp"

namespace debias {

struct SplitStats {
  std::size_t input = 0;             // examples in the evaluated split
  std::size_t feature_positive = 0;  // examples carrying the feature (or probed)
  std::size_t bias = 0;
  std::size_t easy = 0;
  std::size_t challenge = 0;
  double correlation = 0.0;  // P(label = bias label | feature) on the source split
  std::vector<std::string> warnings;
};

struct SplitResult {
  Dataset bias_set;
  Dataset easy_set;
  Dataset challenge_set;
  SplitStats stats;
};

enum class ProbeSide { kAOnly, kBOnly };

// bias_set = challenge complement among feature-positive examples:
//   bias/easy = feature present and label follows the pattern,
//   challenge = feature present and label breaks it.
// Throws ValidationError if the feature never co-occurs with its label.
SplitResult feature_split(const Dataset& dataset, const BiasFeatureSpec& spec,
                          const FeatureConfig& cfg = {});

// `probe` predicts from one field. bias_set = examples of `source` it gets
// right; easy/challenge = examples of `eval` it gets right/wrong. A pair
// probe has the other field blanked.
SplitResult model_based_split(const Dataset& source, const Dataset& eval, const Model& probe,
                              ProbeSide side);
inline SplitResult model_based_split(const Dataset& dataset, const Model& probe, ProbeSide side) {
  return model_based_split(dataset, dataset, probe, side);
}

struct EasyChallenge {
  Dataset easy;
  Dataset challenge;
};

// Predicate specs: feature-negative examples go to easy. Single-input specs
// require a probe and defer to model_based_split.
EasyChallenge dev_easy_challenge(const Dataset& dev, const BiasFeatureSpec& spec,
                                 const FeatureConfig& cfg = {}, const Model* probe = nullptr);

// bias_set.jsonl, easy.jsonl, challenge.jsonl and stats.json under out_dir.
void write_split(const SplitResult& split, const Schema& schema, const std::filesystem::path& out_dir,
                 const std::string& config_hash = {});

}  // namespace debias
