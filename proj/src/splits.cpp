#include "debias/splits.hpp"

#include <fmt/format.h>

#include "debias/error.hpp"
#include "debias/json_io.hpp"
#include "debias/kernels.hpp"

namespace debias {

namespace {

struct Partition {
  std::vector<std::size_t> follows;  // feature present, label follows the pattern
  std::vector<std::size_t> breaks;   // feature present, label breaks it
  std::vector<std::size_t> absent;
};

Partition partition_by_feature(const Dataset& ds, const BiasFeatureSpec& spec,
                               const FeatureConfig& cfg) {
  if (!spec.is_predicate()) {
    throw ValidationError(fmt::format("feature '{}' is model-based; use a probe", spec.name));
  }
  spec.validate(ds.num_classes());
  Partition p;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Example& ex = ds.examples[i];
    auto b = bias_label(ex, spec, cfg);
    if (!b) {
      p.absent.push_back(i);
    } else if (*b == ex.label) {
      p.follows.push_back(i);
    } else {
      p.breaks.push_back(i);
    }
  }
  return p;
}

double ratio(std::size_t a, std::size_t b) {
  return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
}

}  // namespace

SplitResult feature_split(const Dataset& dataset, const BiasFeatureSpec& spec,
                          const FeatureConfig& cfg) {
  const Partition p = partition_by_feature(dataset, spec, cfg);
  if (p.follows.empty()) {
    throw ValidationError(fmt::format("feature '{}' never co-occurs with target label in '{}'",
                                      spec.name, dataset.provenance));
  }
  const std::string tag = " feature=" + spec.name;
  SplitResult r;
  r.bias_set = dataset.subset(p.follows, tag + " part=bias");
  r.easy_set = dataset.subset(p.follows, tag + " part=easy");
  r.challenge_set = dataset.subset(p.breaks, tag + " part=challenge");
  r.stats.input = dataset.size();
  r.stats.feature_positive = p.follows.size() + p.breaks.size();
  r.stats.bias = r.stats.easy = p.follows.size();
  r.stats.challenge = p.breaks.size();
  r.stats.correlation = ratio(p.follows.size(), r.stats.feature_positive);
  return r;
}

SplitResult model_based_split(const Dataset& source, const Dataset& eval, const Model& probe,
                              ProbeSide side) {
  if (probe.num_classes() != source.num_classes() || probe.num_classes() != eval.num_classes()) {
    throw ValidationError(fmt::format("probe '{}' has {} classes, datasets have {} and {}",
                                      probe.spec().name, probe.num_classes(),
                                      source.num_classes(), eval.num_classes()));
  }
  const InputMode mode = probe.spec().input_mode;
  BlankSide blank = BlankSide::kNone;
  if (mode == InputMode::kPair) {
    blank = side == ProbeSide::kAOnly ? BlankSide::kB : BlankSide::kA;
  } else if (!(side == ProbeSide::kAOnly && mode == InputMode::kAOnly) &&
             !(side == ProbeSide::kBOnly && mode == InputMode::kBOnly)) {
    throw ValidationError(fmt::format("probe '{}' reads input '{}', which does not match the "
                                      "requested side",
                                      probe.spec().name, to_string(mode)));
  }

  auto correct_indices = [&](const Dataset& ds, bool want_correct) {
    const auto pred = kernels::predict_labels(probe, kernels::encode_dataset(probe, ds, blank));
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if ((pred[i] == ds.examples[i].label) == want_correct) out.push_back(i);
    }
    return out;
  };

  const std::string tag = " probe=" + probe.spec().name;
  SplitResult r;
  const auto bias_idx = correct_indices(source, true);
  if (bias_idx.empty()) {
    throw ValidationError(fmt::format("probe '{}' never predicts the gold label on '{}'",
                                      probe.spec().name, source.provenance));
  }
  r.bias_set = source.subset(bias_idx, tag + " part=bias");
  r.easy_set = eval.subset(correct_indices(eval, true), tag + " part=easy");
  r.challenge_set = eval.subset(correct_indices(eval, false), tag + " part=challenge");
  r.stats.input = eval.size();
  r.stats.feature_positive = eval.size();
  r.stats.bias = r.bias_set.size();
  r.stats.easy = r.easy_set.size();
  r.stats.challenge = r.challenge_set.size();
  r.stats.correlation = ratio(bias_idx.size(), source.size());
  if (r.challenge_set.empty()) {
    r.stats.warnings.push_back(fmt::format(
        "probe '{}' is correct on every evaluation example; challenge set is empty",
        probe.spec().name));
  }
  return r;
}

EasyChallenge dev_easy_challenge(const Dataset& dev, const BiasFeatureSpec& spec,
                                 const FeatureConfig& cfg, const Model* probe) {
  if (!spec.is_predicate()) {
    if (!probe) {
      throw ValidationError(fmt::format("feature '{}' needs a probe model", spec.name));
    }
    const ProbeSide side =
        spec.kind == BiasFeatureKind::kSingleInputA ? ProbeSide::kAOnly : ProbeSide::kBOnly;
    SplitResult r = model_based_split(dev, dev, *probe, side);
    return {std::move(r.easy_set), std::move(r.challenge_set)};
  }
  if (probe) {
    throw ValidationError(fmt::format("feature '{}' is a predicate; no probe expected", spec.name));
  }
  const Partition p = partition_by_feature(dev, spec, cfg);
  // Easy keeps dev order across feature-negative and pattern-following examples.
  std::vector<std::size_t> easy;
  std::size_t a = 0, f = 0;
  while (a < p.absent.size() || f < p.follows.size()) {
    if (f == p.follows.size() || (a < p.absent.size() && p.absent[a] < p.follows[f])) {
      easy.push_back(p.absent[a++]);
    } else {
      easy.push_back(p.follows[f++]);
    }
  }
  const std::string tag = " feature=" + spec.name;
  return {dev.subset(easy, tag + " part=easy"), dev.subset(p.breaks, tag + " part=challenge")};
}

void write_split(const SplitResult& split, const Schema& schema,
                 const std::filesystem::path& out_dir, const std::string& config_hash) {
  std::filesystem::create_directories(out_dir);
  write_jsonl(split.bias_set, schema, out_dir / "bias_set.jsonl");
  write_jsonl(split.easy_set, schema, out_dir / "easy.jsonl");
  write_jsonl(split.challenge_set, schema, out_dir / "challenge.jsonl");
  json stats{{"input", split.stats.input},
             {"feature_positive", split.stats.feature_positive},
             {"bias", split.stats.bias},
             {"easy", split.stats.easy},
             {"challenge", split.stats.challenge},
             {"correlation", split.stats.correlation},
             {"warnings", split.stats.warnings},
             {"config_hash", config_hash}};
  write_json_file((out_dir / "stats.json").string(), stats);
}

}  // namespace debias
