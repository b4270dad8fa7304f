#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "debias/bias_features.hpp"
#include "debias/corpus.hpp"
#include "debias/ensemble.hpp"
#include "debias/model.hpp"

namespace debias {

inline constexpr const char* kBaselineRow = "None";

struct RunStats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  std::vector<double> runs;
};

// Mean and sample (n - 1) standard deviation. Needs at least two values.
RunStats aggregate_runs(std::span<const double> values);

// Fraction of argmax-correct predictions (ties go to the smaller label).
double evaluate(const Model& model, const Dataset& data);

using NamedDataset = std::pair<std::string, Dataset>;

struct SelectionConfig {
  ModelSpec main_spec;
  TrainConfig bias_train;
  TrainConfig main_train;
  // Base configuration for feature-input candidates and gating predicates.
  FeatureConfig features;
  double epsilon = kDefaultClipEpsilon;
  double temperature = 1.0;
  double bias_weight = 1.0;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  // Means closer than this count as tied (challenge first, then dev).
  double tie_tolerance = 0.0;
  // When set, candidates whose dev mean falls more than this below the
  // baseline's are not eligible to win.
  std::optional<double> dev_guardrail;
  int vocab_min_count = 1;

  void validate() const;
};

struct CandidateRow {
  std::string id;
  bool baseline = false;
  std::size_t parameter_count = 0;  // bias model; 0 for the baseline
  RunStats dev;
  RunStats challenge;
  std::optional<RunStats> bias_set;  // bias model accuracy on its own training set
  std::vector<std::pair<std::string, RunStats>> extra;
  bool guardrail_rejected = false;
};

struct SelectionReport {
  std::string feature;
  std::vector<CandidateRow> rows;  // baseline first, then candidates in input order
  std::string winner;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
};

struct SelectionData {
  Dataset bias_train;
  Dataset main_train;
  Dataset dev;
  Dataset challenge;
  std::vector<NamedDataset> extra_eval;
  std::optional<BiasFeatureSpec> feature;  // feeds feature-input candidates
};

struct SelectionOutcome {
  SelectionReport report;
  std::vector<Model> winner_models;  // one per seed; empty when the baseline wins
};

// Winner: highest mean challenge accuracy; ties by higher dev mean, then fewer
// parameters, then input order. The baseline wins only if every eligible
// candidate's challenge mean is strictly below it.
std::string choose_winner(const std::vector<CandidateRow>& rows, double tie_tolerance,
                          std::optional<double> dev_guardrail);

SelectionOutcome select_bias_model(const std::vector<ModelSpec>& candidates,
                                   const SelectionData& data, const SelectionConfig& cfg);

SelectionReport select_bias_model(const std::vector<ModelSpec>& candidates,
                                  const Dataset& bias_train, const Dataset& main_train,
                                  const Dataset& dev, const Dataset& challenge,
                                  const SelectionConfig& cfg);

// A frozen bias source for fusion: one model, or one per seed.
struct FusionSource {
  BiasFeatureSpec feature;
  std::vector<Model> models;
  double weight = 1.0;
  bool gated = false;  // apply only where `feature` holds
};

struct FusionReport {
  std::string method;
  std::vector<std::string> sources;
  std::vector<std::pair<std::string, RunStats>> evals;
  std::vector<std::uint64_t> seeds;
};

// Trains one main model per seed under multi-source PoE and evaluates it on
// every named set.
FusionReport fuse_best(const std::vector<FusionSource>& sources, const Dataset& main_train,
                       const std::vector<NamedDataset>& eval_sets, const SelectionConfig& cfg);

// Baseline, PoE, Reweight and SelfDistill main models side by side. Several
// sources are combined into one bias distribution by their weighted product.
std::vector<FusionReport> compare_methods(const std::vector<FusionSource>& sources,
                                          const Dataset& main_train,
                                          const std::vector<NamedDataset>& eval_sets,
                                          const SelectionConfig& cfg);

// Content hash of a dataset (SHA-256 over its JSONL form).
std::string dataset_hash(const Dataset& ds);

}  // namespace debias
