#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"

#include "debias/error.hpp"
#include "debias/experiment.hpp"
#include "debias/json_io.hpp"
#include "debias/kernels.hpp"

namespace fs = std::filesystem;
using namespace debias;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> seeds;
  std::string out_dir = "out";
};

json absolutize(json config, const fs::path& base) {
  auto fix = [&](json& v) {
    fs::path p(v.get<std::string>());
    if (p.is_relative()) v = fs::absolute(base / p).lexically_normal().string();
  };
  if (config.contains("data")) {
    json& d = config["data"];
    for (const char* key : {"train", "dev"})
      if (d.contains(key)) fix(d[key]);
    if (d.contains("challenge"))
      for (auto& [name, v] : d["challenge"].items()) fix(v);
  }
  if (config.contains("features") && config["features"].contains("negation_lexicon_file"))
    fix(config["features"]["negation_lexicon_file"]);
  return config;
}

// Config JSON after overrides, with every path made absolute. The train-* commands
// read --seed as the training seed, so they leave the data seed alone.
json load_config(const Globals& g, bool seed_sets_data = true) {
  if (g.config.empty()) throw ValidationError("--config is required");
  json raw = read_json_file(g.config);
  const auto data_seed = seed_sets_data ? g.seed : std::nullopt;
  return absolutize(apply_overrides(std::move(raw), data_seed, g.seeds),
                    fs::path(g.config).parent_path());
}

fs::path out_dir(const Globals& g) {
  fs::path dir(g.out_dir);
  fs::create_directories(dir);
  return dir;
}

Schema io_schema(const ExperimentConfig& cfg, const Dataset& train) {
  return cfg.data.synth ? default_schema(train) : cfg.data.schema;
}

Schema io_schema(const ExperimentConfig& cfg) {
  if (!cfg.data.synth) return cfg.data.schema;
  Dataset labels;
  for (int k = 0; k < cfg.data.synth->num_classes; ++k) labels.label_names.push_back(fmt::format("c{}", k));
  return default_schema(labels);
}

void write_text(const fs::path& path, const std::string& text) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw ValidationError(fmt::format("cannot write '{}'", path.string()));
  std::fputs(text.c_str(), f);
  std::fclose(f);
}

const FeatureData& find_feature(const PreparedData& data, const std::string& name) {
  if (name.empty()) {
    if (data.features.size() != 1)
      throw ValidationError("several bias features configured; pass --feature");
    return data.features.front();
  }
  for (const auto& fd : data.features)
    if (fd.spec.name == name) return fd;
  throw ValidationError(fmt::format("unknown bias feature '{}'", name));
}

const ModelSpec& find_candidate(const ExperimentConfig& cfg, const std::string& name) {
  for (const auto& c : cfg.candidates)
    if (c.name == name) return c;
  throw ValidationError(fmt::format("unknown candidate '{}'", name));
}

std::shared_ptr<const Vocab> main_vocab(const ExperimentConfig& cfg, const Dataset& train) {
  return std::make_shared<const Vocab>(build_vocab(train, cfg.selection.vocab_min_count));
}

int cmd_generate(const Globals& g) {
  json raw = load_config(g);
  SynthConfig sc = raw.contains("data") ? raw["data"].at("synth").get<SynthConfig>()
                                        : raw.get<SynthConfig>();
  if (g.seed && !raw.contains("data")) sc.seed = *g.seed;
  SynthOutput gen = generate(sc);
  const fs::path dir = out_dir(g);
  const Schema schema = default_schema(gen.train);

  Manifest m;
  m.command = "generate";
  m.config = json(sc);
  auto put = [&](const std::string& name, const Dataset& ds) {
    const fs::path path = dir / (name + ".jsonl");
    write_jsonl(ds, schema, path);
    m.datasets.push_back({name, dataset_hash(ds), path.string()});
  };
  put("train", gen.train);
  put("dev_pool", gen.dev_pool);
  put("dev_easy", gen.dev_easy);
  put("dev_challenge", gen.dev_challenge);
  put("test_challenge", gen.test_challenge);
  for (std::size_t k = 0; k < gen.bias_specs.size(); ++k) {
    put("dev_challenge_" + gen.bias_specs[k].name, gen.dev_challenge_by_bias[k]);
    put("test_challenge_" + gen.bias_specs[k].name, gen.test_challenge_by_bias[k]);
  }
  json specs = json::array();
  for (const auto& s : gen.bias_specs) specs.push_back(s);
  m.results = {{"bias_features", specs}};
  write_manifest(m, dir / "manifest.json");
  fmt::print("wrote {} datasets to {}\n", m.datasets.size(), dir.string());
  return 0;
}

int cmd_extract(const Globals& g, const std::string& data_path, const std::string& matrix_out) {
  ExperimentConfig cfg = parse_experiment(load_config(g));
  PreparedData data = prepare_data(cfg);
  Dataset ds = data_path.empty() ? data.train : load_jsonl(data_path, io_schema(cfg));
  json stats = json::array();
  for (const auto& fd : data.features) {
    json e = {{"feature", fd.spec.name}, {"kind", to_string(fd.spec.kind)}};
    if (fd.spec.is_predicate()) {
      std::size_t positive = 0;
      for (const auto& ex : ds.examples) positive += has_feature(ex, fd.spec, cfg.features);
      e["positive"] = positive;
      e["total"] = ds.size();
      e["correlation"] =
          positive ? json(bias_label_correlation(ds, fd.spec, cfg.features)) : json(nullptr);
    }
    stats.push_back(std::move(e));
  }
  std::cout << stats.dump(2) << '\n';
  if (!matrix_out.empty()) {
    const auto rows = kernels::feature_matrix(ds, cfg.features);
    const auto names = cfg.features.names();
    std::string text;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      json line = {{"id", ds.examples[i].id}, {"features", rows[i]}};
      text += line.dump() + "\n";
    }
    write_text(matrix_out, text);
    fmt::print(stderr, "wrote {} feature rows ({} columns) to {}\n", rows.size(), names.size(),
               matrix_out);
  }
  return 0;
}

int cmd_split(const Globals& g, const std::string& feature) {
  ExperimentConfig cfg = parse_experiment(load_config(g));
  PreparedData data = prepare_data(cfg);
  const Schema schema = io_schema(cfg, data.train);
  const fs::path dir = out_dir(g) / "splits";
  for (const auto& fd : data.features) {
    if (!feature.empty() && fd.spec.name != feature) continue;
    SplitResult split;
    if (fd.spec.is_predicate()) {
      split = feature_split(data.train, fd.spec, cfg.features);
      split.challenge_set = fd.challenge;
      split.easy_set = dev_easy_challenge(data.dev, fd.spec, cfg.features).easy;
    } else {
      split.bias_set = fd.bias_train;
      split.challenge_set = fd.challenge;
      split.stats = fd.split_stats;
    }
    write_split(split, schema, dir / fd.spec.name);
    fmt::print("{}: bias_set {} easy {} challenge {}\n", fd.spec.name, split.bias_set.size(),
               split.easy_set.size(), split.challenge_set.size());
  }
  return 0;
}

int cmd_train_bias(const Globals& g, const std::string& candidate, const std::string& feature,
                   const std::string& data_path, std::string output) {
  ExperimentConfig cfg = parse_experiment(load_config(g, false));
  PreparedData data = prepare_data(cfg);
  const FeatureData& fd = find_feature(data, feature);
  Dataset bias_train = data_path.empty() ? fd.bias_train : load_jsonl(data_path, io_schema(cfg));
  ModelSpec spec = find_candidate(cfg, candidate);
  TrainConfig tc = cfg.selection.bias_train;
  tc.loss = LossKind::kPlainCe;
  if (g.seed) tc.seed = spec.init_seed = *g.seed;
  FeatureConfig fc = cfg.features;
  if (!fc.bias_of_interest) fc.bias_of_interest = fd.spec;
  auto result = train(spec, bias_train, main_vocab(cfg, data.train), fc, tc);
  if (output.empty()) output = (out_dir(g) / fmt::format("bias_{}.ckpt", spec.name)).string();
  save_model(result.model, output);
  fmt::print("{}: bias-set accuracy {:.4f}, saved {}\n", spec.name,
             evaluate(result.model, bias_train), output);
  return 0;
}

int cmd_train_main(const Globals& g, const std::string& loss_name,
                   const std::vector<std::string>& bias_paths, const std::string& teacher_path,
                   const std::string& data_path, std::string output) {
  ExperimentConfig cfg = parse_experiment(load_config(g, false));
  PreparedData data = prepare_data(cfg);
  Dataset main_train = data_path.empty() ? data.train : load_jsonl(data_path, io_schema(cfg));
  const LossKind loss = parse_loss_kind(loss_name);
  TrainConfig tc = cfg.selection.main_train;
  tc.loss = loss;
  ModelSpec spec = cfg.selection.main_spec;
  if (g.seed) tc.seed = spec.init_seed = *g.seed;
  auto vocab = main_vocab(cfg, data.train);

  EnsembleContext ctx;
  ctx.epsilon = cfg.selection.epsilon;
  ctx.temperature = cfg.selection.temperature;
  for (const auto& p : bias_paths) {
    Model bias = load_model(p);
    ctx.sources.push_back(make_bias_source(bias, main_train, cfg.selection.bias_weight));
    ctx.sources.back().name = p;
  }
  if (loss != LossKind::kPlainCe && ctx.sources.empty())
    throw ValidationError(fmt::format("loss '{}' needs at least one --bias checkpoint", loss_name));

  std::optional<PoeLoss> poe;
  std::optional<ReweightLoss> rw;
  std::optional<DistillLoss> distill;
  const LossAdapter* adapter = nullptr;
  switch (loss) {
    case LossKind::kPlainCe:
      break;
    case LossKind::kPoe:
      adapter = &poe.emplace(ctx);
      break;
    case LossKind::kReweight:
      adapter = &rw.emplace(ctx);
      break;
    case LossKind::kDistill: {
      if (teacher_path.empty()) throw ValidationError("loss 'distill' needs --teacher");
      if (ctx.sources.size() != 1) throw ValidationError("loss 'distill' takes exactly one --bias");
      Model teacher = load_model(teacher_path);
      auto enc = kernels::encode_dataset(teacher, main_train);
      auto tprobs = kernels::predict_proba_all(teacher, enc);
      std::vector<ProbVector> bprobs;
      for (const auto& p : ctx.sources.front().probs)
        bprobs.push_back(clip_and_normalize(p, ctx.epsilon, ctx.temperature));
      adapter = &distill.emplace(make_distill_targets(tprobs, bprobs, enc.labels, ctx.epsilon));
      break;
    }
  }
  auto result = train(spec, main_train, vocab, cfg.features, tc, adapter);
  if (output.empty()) output = (out_dir(g) / fmt::format("main_{}.ckpt", loss_name)).string();
  save_model(result.model, output);
  fmt::print("main model ({}): dev accuracy {:.4f}, saved {}\n", loss_name,
             evaluate(result.model, data.dev), output);
  return 0;
}

void print_selection(const std::vector<FeatureSelection>& selections, const fs::path& dir,
                     std::map<std::string, std::string>* tables) {
  for (const auto& s : selections) {
    const std::string text = render_table(selection_table(s.outcome.report));
    std::cout << text << "winner: " << s.outcome.report.winner << "\n\n";
    const fs::path path = dir / fmt::format("selection_{}.txt", s.feature);
    write_text(path, text);
    write_json_file((dir / fmt::format("selection_{}.json", s.feature)).string(),
                    json(s.outcome.report));
    if (tables) (*tables)["selection:" + s.feature] = path.string();
  }
}

void save_winners(const std::vector<FeatureSelection>& selections, const fs::path& dir,
                  std::map<std::string, std::string>& checkpoints) {
  for (const auto& s : selections) {
    const auto& models = s.outcome.winner_models;
    for (std::size_t i = 0; i < models.size(); ++i) {
      const fs::path path = dir / fmt::format("bias_{}_{}_seed{}.ckpt", s.feature,
                                              s.outcome.report.winner, s.outcome.report.seeds[i]);
      save_model(models[i], path);
      checkpoints[fmt::format("{}:seed{}", s.feature, s.outcome.report.seeds[i])] = path.string();
    }
  }
}

json run_pipeline(const std::string& command, const json& config, const fs::path& dir,
                  Manifest* m, bool quiet = false) {
  ExperimentConfig cfg = parse_experiment(config);
  PreparedData data = prepare_data(cfg);
  auto selections = run_select(cfg, data);
  json results = {{"selection", selection_results(selections)}};
  if (!quiet) print_selection(selections, dir, m ? &m->tables : nullptr);
  if (command == "fuse") {
    FuseResult fuse = run_fuse(cfg, data, selections);
    results["fusion"] = fusion_results(fuse);
    if (!quiet) {
      std::vector<FusionReport> rows = fuse.fused;
      rows.insert(rows.end(), fuse.singles.begin(), fuse.singles.end());
      const std::string text = render_table(fusion_table(rows, "Multi-bias fusion"));
      std::cout << text;
      for (const auto& f : fuse.skipped) std::cout << "skipped " << f << " (baseline won)\n";
      write_text(dir / "fusion.txt", text);
      write_json_file((dir / "fusion.json").string(), results["fusion"]);
      if (m) m->tables["fusion"] = (dir / "fusion.txt").string();
    }
  }
  if (m) {
    m->command = command;
    m->config = config;
    m->seeds = cfg.selection.seeds;
    m->datasets = data.records;
    m->results = results;
    if (!quiet) save_winners(selections, dir, m->checkpoints);
  }
  return results;
}

int cmd_pipeline(const Globals& g, const std::string& command) {
  const json config = load_config(g);
  const fs::path dir = out_dir(g);
  Manifest m;
  run_pipeline(command, config, dir, &m);
  write_manifest(m, dir / "manifest.json");
  fmt::print("manifest: {}\n", (dir / "manifest.json").string());
  return 0;
}

int cmd_evaluate(const Globals& g, const std::vector<std::string>& models,
                 const std::vector<std::string>& data_paths) {
  ExperimentConfig cfg = parse_experiment(load_config(g));
  std::vector<NamedDataset> sets;
  if (data_paths.empty()) {
    PreparedData data = prepare_data(cfg);
    sets.emplace_back("dev", data.dev);
    sets.emplace_back("challenge", data.union_challenge);
    for (const auto& fd : data.features) sets.emplace_back("challenge:" + fd.spec.name, fd.challenge);
  } else {
    const Schema schema = io_schema(cfg);
    for (const auto& p : data_paths) sets.emplace_back(p, load_jsonl(p, schema));
  }
  json out = json::array();
  for (const auto& path : models) {
    Model model = load_model(path);
    json e = {{"model", path}};
    for (const auto& [name, ds] : sets) e["accuracy"][name] = evaluate(model, ds);
    out.push_back(std::move(e));
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_report(const std::string& manifest_path, bool verify) {
  const Manifest m = read_manifest(manifest_path);
  if (m.results.contains("selection"))
    for (const auto& r : m.results["selection"]) {
      const auto rep = r.get<SelectionReport>();
      std::cout << render_table(selection_table(rep)) << "winner: " << rep.winner << "\n\n";
    }
  if (m.results.contains("fusion")) {
    std::vector<FusionReport> rows = m.results["fusion"]["fused"].get<std::vector<FusionReport>>();
    for (const auto& r : m.results["fusion"]["singles"]) rows.push_back(r.get<FusionReport>());
    std::cout << render_table(fusion_table(rows, "Multi-bias fusion"));
  }
  if (!verify) return 0;
  if (m.command != "select" && m.command != "fuse")
    throw ValidationError(fmt::format("cannot verify a '{}' manifest", m.command));

  ExperimentConfig cfg = parse_experiment(m.config);
  PreparedData data = prepare_data(cfg);
  for (const auto& rec : m.datasets) {
    auto it = std::find_if(data.records.begin(), data.records.end(),
                           [&](const DatasetRecord& d) { return d.name == rec.name; });
    if (it == data.records.end())
      throw ValidationError(fmt::format("verify: dataset '{}' not reproduced", rec.name));
    if (it->sha256 != rec.sha256)
      throw ValidationError(fmt::format("verify: dataset '{}' hash {} != recorded {}", rec.name,
                                        it->sha256, rec.sha256));
  }
  const json fresh = run_pipeline(m.command, m.config, {}, nullptr, true);
  if (fresh != m.results) throw ValidationError("verify: results differ from the manifest");
  std::cout << "verify: OK (" << m.datasets.size() << " dataset hashes, results bit-identical)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bias-model selection and ensemble debiasing toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--seed", g.seed, "Data seed; for train-bias and train-main, the training seed");
  app.add_option("--seeds", g.seeds, "Number of selection seeds (seeds become 1..N)")
      ->check(CLI::Range(2, 1000));
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();
  app.fallthrough();

  auto* generate_cmd = app.add_subcommand("generate", "Write a synthetic corpus");
  auto* extract_cmd = app.add_subcommand("extract", "Bias feature statistics");
  std::string data_path, matrix_out, feature, candidate, output, loss = "poe", teacher, manifest;
  std::vector<std::string> bias_paths, model_paths, eval_paths;
  extract_cmd->add_option("--data", data_path, "JSONL file (default: training set)");
  extract_cmd->add_option("--matrix-out", matrix_out, "Write feature vectors as JSONL");

  auto* split_cmd = app.add_subcommand("split", "Write bias/easy/challenge splits");
  split_cmd->add_option("--feature", feature, "Only this bias feature");

  auto* train_bias_cmd = app.add_subcommand("train-bias", "Train one bias model");
  train_bias_cmd->add_option("--candidate", candidate, "Candidate name")->required();
  train_bias_cmd->add_option("--feature", feature, "Bias feature (its bias set is the data)");
  train_bias_cmd->add_option("--data", data_path, "Override the bias training set");
  train_bias_cmd->add_option("--output", output, "Checkpoint path");

  auto* train_main_cmd = app.add_subcommand("train-main", "Train a main model");
  train_main_cmd->add_option("--loss", loss, "plain_ce | poe | reweight | distill")
      ->capture_default_str();
  train_main_cmd->add_option("--bias", bias_paths, "Frozen bias model checkpoint(s)");
  train_main_cmd->add_option("--teacher", teacher, "Teacher checkpoint for distill");
  train_main_cmd->add_option("--data", data_path, "Override the training set");
  train_main_cmd->add_option("--output", output, "Checkpoint path");

  auto* select_cmd = app.add_subcommand("select", "Bias-model capacity selection");
  auto* fuse_cmd = app.add_subcommand("fuse", "Select per feature, then fuse the winners");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Accuracy of checkpoints");
  evaluate_cmd->add_option("--model", model_paths, "Checkpoint(s)")->required();
  evaluate_cmd->add_option("--data", eval_paths, "JSONL file(s) (default: configured sets)");

  auto* report_cmd = app.add_subcommand("report", "Render a manifest's tables");
  bool verify = false;
  report_cmd->add_option("--manifest", manifest, "Manifest JSON")->required();
  report_cmd->add_flag("--verify", verify, "Re-run and compare bit-exactly");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (generate_cmd->parsed()) return cmd_generate(g);
    if (extract_cmd->parsed()) return cmd_extract(g, data_path, matrix_out);
    if (split_cmd->parsed()) return cmd_split(g, feature);
    if (train_bias_cmd->parsed()) return cmd_train_bias(g, candidate, feature, data_path, output);
    if (train_main_cmd->parsed())
      return cmd_train_main(g, loss, bias_paths, teacher, data_path, output);
    if (select_cmd->parsed()) return cmd_pipeline(g, "select");
    if (fuse_cmd->parsed()) return cmd_pipeline(g, "fuse");
    if (evaluate_cmd->parsed()) return cmd_evaluate(g, model_paths, eval_paths);
    if (report_cmd->parsed()) return cmd_report(manifest, verify);
  } catch (const NumericError& e) {
    fmt::print(stderr, "numeric error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 1;
}
