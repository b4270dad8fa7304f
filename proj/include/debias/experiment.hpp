#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "debias/report.hpp"
#include "debias/selection.hpp"
#include "debias/splits.hpp"
#include "debias/synth.hpp"

// Config-driven pipeline shared by the CLI and the acceptance suite.
namespace debias {

struct DataConfig {
  std::optional<SynthConfig> synth;
  // File mode. Challenge files are keyed by bias feature name; features
  // without one get the challenge part of the dev split.
  std::filesystem::path train;
  std::filesystem::path dev;
  std::map<std::string, std::filesystem::path> challenge;
  Schema schema;
};

struct FusionSettings {
  std::vector<double> weights;  // per bias feature; default 1
  bool gated = false;
  bool compare_methods = false;
};

struct ExperimentConfig {
  DataConfig data;
  FeatureConfig features;
  std::vector<BiasFeatureSpec> bias_features;  // synth data supplies its own when empty
  std::optional<ModelSpec> probe;              // for single-input features
  std::vector<ModelSpec> candidates;
  SelectionConfig selection;
  FusionSettings fusion;
};

// Relative paths resolve against base_dir. Unknown enum values and missing
// required keys throw ValidationError.
ExperimentConfig parse_experiment(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Command-line overrides: the synth generation seed and the seed count
// (seeds become 1..n).
nlohmann::json apply_overrides(nlohmann::json config, std::optional<std::uint64_t> seed,
                               std::optional<int> num_seeds);

struct FeatureData {
  BiasFeatureSpec spec;
  Dataset bias_train;
  Dataset challenge;
  std::optional<Dataset> test_challenge;
  SplitStats split_stats;
};

struct PreparedData {
  Dataset train;
  Dataset dev;  // in-distribution dev (dev-easy for synthetic data)
  std::vector<FeatureData> features;
  Dataset union_challenge;
  std::vector<DatasetRecord> records;
  std::optional<SynthOutput> synth;
};

// Loads or generates the data and builds each feature's bias training set.
// Model specs in `cfg` get num_classes from the data.
PreparedData prepare_data(ExperimentConfig& cfg);

struct FeatureSelection {
  std::string feature;
  SelectionOutcome outcome;
};

std::vector<FeatureSelection> run_select(const ExperimentConfig& cfg, const PreparedData& data);

struct FuseResult {
  std::vector<FusionReport> fused;    // PoE, or every method when comparing
  std::vector<FusionReport> singles;  // PoE with one winning source each
  std::vector<std::string> skipped;   // features whose winner was the baseline
};

// Evaluates on dev, the union challenge set and each feature's challenge set.
FuseResult run_fuse(const ExperimentConfig& cfg, const PreparedData& data,
                    const std::vector<FeatureSelection>& selections);

nlohmann::json selection_results(const std::vector<FeatureSelection>& selections);
nlohmann::json fusion_results(const FuseResult& fuse);

}  // namespace debias
