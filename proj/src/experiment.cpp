#include "debias/experiment.hpp"

#include <set>

#include <fmt/format.h>

#include "debias/error.hpp"
#include "debias/json_io.hpp"

namespace debias {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

const json& section(const json& j, const char* key) {
  static const json kEmpty = json::object();
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return kEmpty;
  if (!it->is_object()) throw ValidationError(fmt::format("config key '{}' must be an object", key));
  return *it;
}

}  // namespace

ExperimentConfig parse_experiment(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ValidationError("experiment config must be a JSON object");
  ExperimentConfig cfg;

  const json& data = section(j, "data");
  std::vector<std::string> label_names;
  if (data.contains("synth")) {
    cfg.data.synth = data["synth"].get<SynthConfig>();
    for (int k = 0; k < cfg.data.synth->num_classes; ++k) label_names.push_back(fmt::format("c{}", k));
  } else {
    cfg.data.train = resolve(base_dir, get_required<std::string>(data, "train"));
    cfg.data.dev = resolve(base_dir, get_required<std::string>(data, "dev"));
    cfg.data.schema = get_required<Schema>(data, "schema");
    label_names = cfg.data.schema.label_names;
    for (const auto& [name, path] :
         get_or<std::map<std::string, std::string>>(data, "challenge", {}))
      cfg.data.challenge[name] = resolve(base_dir, path);
  }

  if (j.contains("features")) {
    json fj = j["features"];
    if (fj.contains("negation_lexicon_file"))
      fj["negation_lexicon_file"] =
          resolve(base_dir, fj["negation_lexicon_file"].get<std::string>()).string();
    cfg.features = fj.get<FeatureConfig>();
  }
  if (auto it = j.find("bias_features"); it != j.end())
    for (const auto& f : *it) cfg.bias_features.push_back(parse_bias_feature(f, label_names));
  if (!cfg.data.synth && cfg.bias_features.empty())
    throw ValidationError("file data needs at least one entry in 'bias_features'");
  if (j.contains("probe")) cfg.probe = j["probe"].get<ModelSpec>();

  cfg.candidates = get_required<std::vector<ModelSpec>>(j, "candidates");
  SelectionConfig& sel = cfg.selection;
  sel.main_spec = get_required<ModelSpec>(j, "main_model");
  sel.bias_train = get_or(j, "bias_train", TrainConfig{});
  sel.main_train = get_or(j, "main_train", TrainConfig{});
  sel.features = cfg.features;

  const json& ens = section(j, "ensemble");
  sel.epsilon = get_or(ens, "epsilon", sel.epsilon);
  sel.temperature = get_or(ens, "temperature", sel.temperature);
  sel.bias_weight = get_or(ens, "weight", sel.bias_weight);

  const json& sj = section(j, "selection");
  sel.seeds = get_or(sj, "seeds", sel.seeds);
  sel.tie_tolerance = get_or(sj, "tie_tolerance", sel.tie_tolerance);
  if (sj.contains("dev_guardrail") && !sj["dev_guardrail"].is_null())
    sel.dev_guardrail = get_required<double>(sj, "dev_guardrail");
  sel.vocab_min_count = get_or(sj, "vocab_min_count", sel.vocab_min_count);

  const json& fu = section(j, "fusion");
  cfg.fusion.weights = get_or<std::vector<double>>(fu, "weights", {});
  cfg.fusion.gated = get_or(fu, "gated", false);
  cfg.fusion.compare_methods = get_or(fu, "compare_methods", false);

  sel.validate();
  return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  return parse_experiment(read_json_file(path.string()), path.parent_path());
}

json apply_overrides(json config, std::optional<std::uint64_t> seed,
                     std::optional<int> num_seeds) {
  if (seed) {
    if (!config.contains("data") || !config["data"].contains("synth"))
      throw ValidationError("--seed only applies to synthetic data");
    config["data"]["synth"]["seed"] = *seed;
  }
  if (num_seeds) {
    if (*num_seeds < 2) throw ValidationError("--seeds must be at least 2");
    std::vector<std::uint64_t> seeds;
    for (int s = 1; s <= *num_seeds; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
    config["selection"]["seeds"] = seeds;
  }
  return config;
}

namespace {

void set_classes(ExperimentConfig& cfg, int C) {
  cfg.selection.main_spec.num_classes = C;
  for (auto& c : cfg.candidates) c.num_classes = C;
  if (cfg.probe) cfg.probe->num_classes = C;
}

DatasetRecord record(std::string name, const Dataset& ds, std::string path = {}) {
  return {std::move(name), dataset_hash(ds), std::move(path)};
}

ProbeSide probe_side(const BiasFeatureSpec& spec) {
  return spec.kind == BiasFeatureKind::kSingleInputA ? ProbeSide::kAOnly : ProbeSide::kBOnly;
}

Model train_probe(const ExperimentConfig& cfg, const BiasFeatureSpec& spec, const Dataset& data) {
  ModelSpec ps;
  if (cfg.probe) {
    ps = *cfg.probe;
  } else {
    ps.name = "probe";
    ps.arch = Arch::kBowLinear;
  }
  ps.num_classes = data.num_classes();
  if (ps.arch == Arch::kFeatureLogReg) throw ValidationError("probe models read text, not features");
  ps.input_mode = probe_side(spec) == ProbeSide::kAOnly ? InputMode::kAOnly : InputMode::kBOnly;
  auto vocab = std::make_shared<const Vocab>(build_vocab(data, cfg.selection.vocab_min_count));
  TrainConfig tc = cfg.selection.bias_train;
  tc.loss = LossKind::kPlainCe;
  return train(ps, data, vocab, cfg.features, tc).model;
}

}  // namespace

PreparedData prepare_data(ExperimentConfig& cfg) {
  PreparedData out;
  std::vector<std::optional<Dataset>> given_challenge;
  std::vector<std::optional<Dataset>> given_test;
  if (cfg.data.synth) {
    SynthOutput gen = generate(*cfg.data.synth);
    out.train = gen.train;
    out.dev = gen.dev_easy;
    if (cfg.bias_features.empty()) cfg.bias_features = gen.bias_specs;
    for (const auto& f : cfg.bias_features) {
      std::optional<Dataset> ch, te;
      for (std::size_t k = 0; k < gen.bias_specs.size(); ++k)
        if (gen.bias_specs[k].name == f.name) {
          ch = gen.dev_challenge_by_bias[k];
          te = gen.test_challenge_by_bias[k];
        }
      given_challenge.push_back(std::move(ch));
      given_test.push_back(std::move(te));
    }
    out.records = {record("train", gen.train), record("dev_pool", gen.dev_pool),
                   record("dev_easy", gen.dev_easy), record("dev_challenge", gen.dev_challenge),
                   record("test_challenge", gen.test_challenge)};
    out.synth = std::move(gen);
  } else {
    out.train = load_jsonl(cfg.data.train, cfg.data.schema);
    out.dev = load_jsonl(cfg.data.dev, cfg.data.schema);
    out.records = {record("train", out.train, cfg.data.train.string()),
                   record("dev", out.dev, cfg.data.dev.string())};
    for (const auto& f : cfg.bias_features) {
      std::optional<Dataset> ch;
      if (auto it = cfg.data.challenge.find(f.name); it != cfg.data.challenge.end()) {
        ch = load_jsonl(it->second, cfg.data.schema);
        out.records.push_back(record("challenge:" + f.name, *ch, it->second.string()));
      }
      given_challenge.push_back(std::move(ch));
      given_test.emplace_back();
    }
  }
  set_classes(cfg, out.train.num_classes());

  std::set<std::string> seen;
  for (std::size_t k = 0; k < cfg.bias_features.size(); ++k) {
    const BiasFeatureSpec& spec = cfg.bias_features[k];
    spec.validate(out.train.num_classes());
    if (!seen.insert(spec.name).second)
      throw ValidationError(fmt::format("duplicate bias feature '{}'", spec.name));
    FeatureData fd;
    fd.spec = spec;
    fd.test_challenge = given_test[k];
    if (spec.is_predicate()) {
      SplitResult split = feature_split(out.train, spec, cfg.features);
      fd.bias_train = std::move(split.bias_set);
      fd.split_stats = std::move(split.stats);
      fd.challenge = given_challenge[k]
                         ? *given_challenge[k]
                         : dev_easy_challenge(out.dev, spec, cfg.features).challenge;
    } else {
      Model probe = train_probe(cfg, spec, out.train);
      SplitResult split = model_based_split(out.train, out.dev, probe, probe_side(spec));
      fd.bias_train = std::move(split.bias_set);
      fd.split_stats = std::move(split.stats);
      fd.challenge = given_challenge[k] ? *given_challenge[k] : std::move(split.challenge_set);
    }
    if (fd.bias_train.empty())
      throw ValidationError(fmt::format("bias feature '{}' yields an empty bias training set",
                                        spec.name));
    if (fd.challenge.empty())
      throw ValidationError(fmt::format("bias feature '{}' yields an empty challenge set",
                                        spec.name));
    out.features.push_back(std::move(fd));
  }

  out.union_challenge.label_names = out.train.label_names;
  out.union_challenge.provenance = "union challenge";
  std::set<std::string> ids;
  for (const auto& fd : out.features)
    for (const auto& ex : fd.challenge.examples)
      if (ids.insert(ex.id).second) out.union_challenge.examples.push_back(ex);
  return out;
}

std::vector<FeatureSelection> run_select(const ExperimentConfig& cfg, const PreparedData& data) {
  std::vector<FeatureSelection> out;
  for (const auto& fd : data.features) {
    SelectionData sd{fd.bias_train, data.train, data.dev, fd.challenge, {}, fd.spec};
    if (fd.test_challenge) sd.extra_eval.emplace_back("test_challenge", *fd.test_challenge);
    out.push_back({fd.spec.name, select_bias_model(cfg.candidates, sd, cfg.selection)});
  }
  return out;
}

FuseResult run_fuse(const ExperimentConfig& cfg, const PreparedData& data,
                    const std::vector<FeatureSelection>& selections) {
  if (!cfg.fusion.weights.empty() && cfg.fusion.weights.size() != data.features.size())
    throw ValidationError(fmt::format("fusion has {} weights for {} bias features",
                                      cfg.fusion.weights.size(), data.features.size()));
  FuseResult out;
  std::vector<FusionSource> sources;
  for (std::size_t k = 0; k < selections.size(); ++k) {
    const auto& sel = selections[k];
    if (sel.outcome.winner_models.empty()) {
      out.skipped.push_back(sel.feature);
      continue;
    }
    FusionSource src;
    src.feature = data.features.at(k).spec;
    src.models = sel.outcome.winner_models;
    src.weight = cfg.fusion.weights.empty() ? 1.0 : cfg.fusion.weights[k];
    src.gated = cfg.fusion.gated && src.feature.is_predicate();
    sources.push_back(std::move(src));
  }
  if (sources.empty()) throw ValidationError("no bias feature has a winning bias model to fuse");

  std::vector<NamedDataset> evals = {{"dev", data.dev}, {"challenge", data.union_challenge}};
  for (const auto& fd : data.features) evals.emplace_back("challenge:" + fd.spec.name, fd.challenge);

  if (cfg.fusion.compare_methods)
    out.fused = compare_methods(sources, data.train, evals, cfg.selection);
  else
    out.fused = {fuse_best(sources, data.train, evals, cfg.selection)};
  if (sources.size() > 1)
    for (const auto& src : sources) {
      FusionReport r = fuse_best({src}, data.train, evals, cfg.selection);
      r.method = "PoE:" + src.feature.name;
      out.singles.push_back(std::move(r));
    }
  return out;
}

json selection_results(const std::vector<FeatureSelection>& selections) {
  json arr = json::array();
  for (const auto& s : selections) arr.push_back(json(s.outcome.report));
  return arr;
}

json fusion_results(const FuseResult& fuse) {
  return {{"fused", fuse.fused}, {"singles", fuse.singles}, {"skipped", fuse.skipped}};
}

}  // namespace debias
