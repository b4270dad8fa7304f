#include "debias/selection.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <memory>

#include <fmt/format.h>

#include "debias/error.hpp"
#include "debias/json_io.hpp"
#include "debias/kernels.hpp"

namespace debias {

RunStats aggregate_runs(std::span<const double> values) {
  if (values.size() < 2)
    throw ValidationError(fmt::format("need at least 2 runs to aggregate, got {}", values.size()));
  RunStats out;
  out.runs.assign(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return out;
}

double evaluate(const Model& model, const Dataset& data) {
  if (data.empty()) throw ValidationError("cannot evaluate on an empty dataset");
  if (data.num_classes() != model.num_classes())
    throw ValidationError(fmt::format("dataset has {} classes but model '{}' predicts {}",
                                      data.num_classes(), model.spec().name,
                                      model.num_classes()));
  auto enc = kernels::encode_dataset(model, data);
  auto pred = kernels::predict_labels(model, enc);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == enc.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

void SelectionConfig::validate() const {
  main_spec.validate();
  bias_train.validate();
  main_train.validate();
  if (seeds.size() < 2) throw ValidationError("selection needs at least 2 seeds");
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) throw ValidationError("epsilon must be in (0, 1e-3]");
  if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
  if (!(tie_tolerance >= 0.0)) throw ValidationError("tie_tolerance must be non-negative");
  if (dev_guardrail && !(*dev_guardrail >= 0.0))
    throw ValidationError("dev_guardrail must be non-negative");
}

std::string dataset_hash(const Dataset& ds) { return sha256_hex(to_jsonl(ds, default_schema(ds))); }

std::string choose_winner(const std::vector<CandidateRow>& rows, double tie_tolerance,
                          std::optional<double> dev_guardrail) {
  const CandidateRow* base = nullptr;
  for (const auto& r : rows)
    if (r.baseline) base = &r;
  std::vector<const CandidateRow*> eligible;
  for (const auto& r : rows) {
    if (r.baseline) continue;
    if (dev_guardrail && base && r.dev.mean < base->dev.mean - *dev_guardrail) continue;
    eligible.push_back(&r);
  }
  if (eligible.empty()) return kBaselineRow;

  double best_ch = eligible.front()->challenge.mean;
  for (auto* r : eligible) best_ch = std::max(best_ch, r->challenge.mean);
  if (base && best_ch < base->challenge.mean) return kBaselineRow;

  std::vector<const CandidateRow*> tied;
  for (auto* r : eligible)
    if (r->challenge.mean >= best_ch - tie_tolerance) tied.push_back(r);
  double best_dev = tied.front()->dev.mean;
  for (auto* r : tied) best_dev = std::max(best_dev, r->dev.mean);

  const CandidateRow* winner = nullptr;
  for (auto* r : tied) {
    if (r->dev.mean < best_dev - tie_tolerance) continue;
    if (!winner || r->parameter_count < winner->parameter_count) winner = r;
  }
  return winner->id;
}

namespace {

struct CellResult {
  double dev = 0, challenge = 0;
  double bias_acc = std::nan("");
  std::vector<double> extra;
  std::size_t params = 0;
  std::optional<Model> bias_model;
  std::optional<Model> main_model;
};

struct EvalSets {
  const Dataset* dev;
  const Dataset* challenge;
  const std::vector<NamedDataset>* extra;
};

TrainConfig with(TrainConfig cfg, std::uint64_t seed, LossKind loss) {
  cfg.seed = seed;
  cfg.loss = loss;
  return cfg;
}

ModelSpec seeded(ModelSpec spec, std::uint64_t seed) {
  spec.init_seed = seed;
  return spec;
}

FeatureConfig candidate_features(const SelectionConfig& cfg,
                                 const std::optional<BiasFeatureSpec>& feature) {
  FeatureConfig fc = cfg.features;
  if (feature && !fc.bias_of_interest) fc.bias_of_interest = feature;
  return fc;
}

void evaluate_into(CellResult& cell, const Model& main, const EvalSets& sets) {
  cell.dev = evaluate(main, *sets.dev);
  cell.challenge = evaluate(main, *sets.challenge);
  for (const auto& [name, ds] : *sets.extra) cell.extra.push_back(evaluate(main, ds));
}

// Runs body(i) for i in [0, n) in parallel; the first failure (by index) is
// rethrown with its label.
template <typename Body, typename Label>
void parallel_cells(std::size_t n, Body body, Label label) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("{}: {}", label(i), e.what()));
    } catch (const std::exception& e) {
      throw ValidationError(fmt::format("{}: {}", label(i), e.what()));
    }
  }
}

std::vector<double> column(const std::vector<CellResult>& cells, std::size_t first,
                           std::size_t count, auto field) {
  std::vector<double> out;
  for (std::size_t s = 0; s < count; ++s) out.push_back(field(cells[first + s]));
  return out;
}

json selection_fingerprint(const std::vector<ModelSpec>& candidates, const SelectionData& data,
                           const SelectionConfig& cfg) {
  json j;
  j["main_spec"] = cfg.main_spec;
  j["bias_train"] = cfg.bias_train;
  j["main_train"] = cfg.main_train;
  j["features"] = cfg.features;
  j["epsilon"] = cfg.epsilon;
  j["temperature"] = cfg.temperature;
  j["bias_weight"] = cfg.bias_weight;
  j["seeds"] = cfg.seeds;
  j["tie_tolerance"] = cfg.tie_tolerance;
  j["dev_guardrail"] = cfg.dev_guardrail ? json(*cfg.dev_guardrail) : json(nullptr);
  j["vocab_min_count"] = cfg.vocab_min_count;
  j["candidates"] = candidates;
  if (data.feature) j["feature"] = *data.feature;
  j["data"] = {dataset_hash(data.bias_train), dataset_hash(data.main_train),
               dataset_hash(data.dev), dataset_hash(data.challenge)};
  for (const auto& [name, ds] : data.extra_eval) j["extra"][name] = dataset_hash(ds);
  return j;
}

void check_classes(const Dataset& ds, const char* what, int classes) {
  if (ds.empty()) throw ValidationError(fmt::format("{} is empty", what));
  if (ds.num_classes() != classes)
    throw ValidationError(fmt::format("{} has {} classes, main model expects {}", what,
                                      ds.num_classes(), classes));
}

}  // namespace

SelectionOutcome select_bias_model(const std::vector<ModelSpec>& candidates,
                                   const SelectionData& data, const SelectionConfig& cfg) {
  cfg.validate();
  if (candidates.size() < 2) throw ValidationError("selection needs at least 2 candidates");
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    candidates[i].validate();
    if (candidates[i].name.empty() || candidates[i].name == kBaselineRow)
      throw ValidationError(fmt::format("candidate {} needs a name other than '{}'", i,
                                        kBaselineRow));
    for (std::size_t k = 0; k < i; ++k)
      if (candidates[k].name == candidates[i].name)
        throw ValidationError(fmt::format("duplicate candidate name '{}'", candidates[i].name));
    if (candidates[i].input_mode == InputMode::kFeatures && !data.feature &&
        !cfg.features.bias_of_interest)
      throw ValidationError(fmt::format(
          "candidate '{}' reads features but no bias feature was given", candidates[i].name));
  }
  const int C = cfg.main_spec.num_classes;
  check_classes(data.bias_train, "bias training set", C);
  check_classes(data.main_train, "main training set", C);
  check_classes(data.dev, "dev set", C);
  check_classes(data.challenge, "challenge set", C);
  for (const auto& [name, ds] : data.extra_eval) check_classes(ds, name.c_str(), C);
  for (const auto& c : candidates)
    if (c.num_classes != C)
      throw ValidationError(fmt::format("candidate '{}' predicts {} classes, expected {}",
                                        c.name, c.num_classes, C));

  auto vocab = std::make_shared<const Vocab>(build_vocab(data.main_train, cfg.vocab_min_count));
  const FeatureConfig cand_features = candidate_features(cfg, data.feature);
  const EvalSets sets{&data.dev, &data.challenge, &data.extra_eval};
  const std::size_t S = cfg.seeds.size();
  const std::size_t rows = candidates.size() + 1;  // row 0 is the baseline
  std::vector<CellResult> cells(rows * S);

  parallel_cells(
      cells.size(),
      [&](std::size_t idx) {
        const std::size_t row = idx / S;
        const std::uint64_t seed = cfg.seeds[idx % S];
        CellResult& cell = cells[idx];
        if (row == 0) {
          auto main = train(seeded(cfg.main_spec, seed), data.main_train, vocab, cfg.features,
                            with(cfg.main_train, seed, LossKind::kPlainCe));
          evaluate_into(cell, main.model, sets);
          return;
        }
        const ModelSpec& spec = candidates[row - 1];
        auto bias = train(seeded(spec, seed), data.bias_train, vocab, cand_features,
                          with(cfg.bias_train, seed, LossKind::kPlainCe));
        cell.params = bias.model.parameter_count();
        cell.bias_acc = evaluate(bias.model, data.bias_train);
        EnsembleContext ctx;
        ctx.epsilon = cfg.epsilon;
        ctx.temperature = cfg.temperature;
        ctx.sources.push_back(make_bias_source(bias.model, data.main_train, cfg.bias_weight));
        ctx.sources.back().name = spec.name;
        PoeLoss poe(ctx);
        auto main = train(seeded(cfg.main_spec, seed), data.main_train, vocab, cfg.features,
                          with(cfg.main_train, seed, LossKind::kPoe), &poe);
        evaluate_into(cell, main.model, sets);
        cell.bias_model = std::move(bias.model);
      },
      [&](std::size_t idx) {
        const std::size_t row = idx / S;
        return fmt::format("{} (seed {})", row == 0 ? kBaselineRow : candidates[row - 1].name,
                           cfg.seeds[idx % S]);
      });

  SelectionOutcome out;
  SelectionReport& rep = out.report;
  rep.feature = data.feature ? data.feature->name : "";
  rep.seeds = cfg.seeds;
  rep.config_hash = sha256_hex(selection_fingerprint(candidates, data, cfg).dump());
  for (std::size_t row = 0; row < rows; ++row) {
    const std::size_t first = row * S;
    CandidateRow r;
    r.baseline = row == 0;
    r.id = r.baseline ? kBaselineRow : candidates[row - 1].name;
    r.parameter_count = cells[first].params;
    r.dev = aggregate_runs(column(cells, first, S, [](const CellResult& c) { return c.dev; }));
    r.challenge =
        aggregate_runs(column(cells, first, S, [](const CellResult& c) { return c.challenge; }));
    if (!r.baseline)
      r.bias_set = aggregate_runs(
          column(cells, first, S, [](const CellResult& c) { return c.bias_acc; }));
    for (std::size_t e = 0; e < data.extra_eval.size(); ++e)
      r.extra.emplace_back(data.extra_eval[e].first,
                           aggregate_runs(column(cells, first, S, [e](const CellResult& c) {
                             return c.extra[e];
                           })));
    rep.rows.push_back(std::move(r));
  }
  for (auto& r : rep.rows)
    r.guardrail_rejected = !r.baseline && cfg.dev_guardrail &&
                           r.dev.mean < rep.rows.front().dev.mean - *cfg.dev_guardrail;
  rep.winner = choose_winner(rep.rows, cfg.tie_tolerance, cfg.dev_guardrail);

  if (rep.winner != kBaselineRow) {
    std::size_t row = 1;
    while (rep.rows[row].id != rep.winner) ++row;
    for (std::size_t s = 0; s < S; ++s) out.winner_models.push_back(*cells[row * S + s].bias_model);
  }
  return out;
}

SelectionReport select_bias_model(const std::vector<ModelSpec>& candidates,
                                  const Dataset& bias_train, const Dataset& main_train,
                                  const Dataset& dev, const Dataset& challenge,
                                  const SelectionConfig& cfg) {
  SelectionData data{bias_train, main_train, dev, challenge, {}, std::nullopt};
  return select_bias_model(candidates, data, cfg).report;
}

namespace {

const Model& model_for_seed(const FusionSource& src, std::size_t s) {
  return src.models.size() == 1 ? src.models.front() : src.models.at(s);
}

void check_sources(const std::vector<FusionSource>& sources, std::size_t seeds, int C) {
  if (sources.empty()) throw ValidationError("fusion needs at least one bias source");
  for (const auto& src : sources) {
    if (src.models.empty())
      throw ValidationError(fmt::format("bias source '{}' has no model", src.feature.name));
    if (src.models.size() != 1 && src.models.size() != seeds)
      throw ValidationError(fmt::format("bias source '{}' has {} models for {} seeds",
                                        src.feature.name, src.models.size(), seeds));
    for (const auto& m : src.models)
      if (m.num_classes() != C)
        throw ValidationError(fmt::format("bias source '{}' predicts {} classes, expected {}",
                                          src.feature.name, m.num_classes(), C));
    if (!std::isfinite(src.weight) || src.weight < 0.0)
      throw ValidationError(fmt::format("bias source '{}' has invalid weight {}",
                                        src.feature.name, src.weight));
    if (src.gated && !src.feature.is_predicate())
      throw ValidationError(
          fmt::format("bias source '{}' is gated but its feature is not a predicate",
                      src.feature.name));
  }
}

EnsembleContext fusion_context(const std::vector<FusionSource>& sources, std::size_t s,
                               const Dataset& main_train, const SelectionConfig& cfg) {
  EnsembleContext ctx;
  ctx.epsilon = cfg.epsilon;
  ctx.temperature = cfg.temperature;
  for (const auto& src : sources) {
    std::optional<BiasFeatureSpec> gate;
    if (src.gated) gate = src.feature;
    ctx.sources.push_back(
        make_bias_source(model_for_seed(src, s), main_train, src.weight, gate, cfg.features));
    ctx.sources.back().name = src.feature.name;
  }
  return ctx;
}

// Weighted product of the sources as one bias distribution per example.
EnsembleContext combined_context(const EnsembleContext& ctx, std::size_t n, int C) {
  if (ctx.sources.size() == 1) return ctx;
  EnsembleContext out;
  out.epsilon = ctx.epsilon;
  out.temperature = 1.0;
  BiasSource merged;
  merged.name = "product";
  merged.probs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) merged.probs.push_back(softmax(poe_adjustment(ctx, i, C)));
  out.sources.push_back(std::move(merged));
  return out;
}

}  // namespace

namespace {

enum Method : std::size_t { kBase, kPoeMethod, kReweightMethod, kDistillMethod, kMethodCount };

std::vector<FusionReport> run_methods(const std::vector<FusionSource>& sources,
                                      const Dataset& main_train,
                                      const std::vector<NamedDataset>& eval_sets,
                                      const SelectionConfig& cfg, bool compare) {
  cfg.validate();
  const int C = cfg.main_spec.num_classes;
  const std::size_t S = cfg.seeds.size();
  check_sources(sources, S, C);
  check_classes(main_train, "main training set", C);
  if (eval_sets.empty()) throw ValidationError("fusion needs at least one evaluation set");
  for (const auto& [name, ds] : eval_sets) check_classes(ds, name.c_str(), C);

  auto vocab = std::make_shared<const Vocab>(build_vocab(main_train, cfg.vocab_min_count));
  const std::vector<std::string> methods = {kBaselineRow, "PoE", "Reweight", "SelfDistill"};
  const std::size_t M = kMethodCount;
  // acc[(m * S + s) * E + e]
  const std::size_t E = eval_sets.size();
  std::vector<double> acc(M * S * E, 0.0);
  const std::size_t n = main_train.size();

  // The baseline doubles as the distillation teacher, so each seed is one cell.
  parallel_cells(
      S,
      [&](std::size_t s) {
        const std::uint64_t seed = cfg.seeds[s];
        const ModelSpec spec = seeded(cfg.main_spec, seed);
        auto put = [&](std::size_t m, const Model& model) {
          for (std::size_t e = 0; e < E; ++e)
            acc[(m * S + s) * E + e] = evaluate(model, eval_sets[e].second);
        };
        EnsembleContext ctx = fusion_context(sources, s, main_train, cfg);
        PoeLoss poe(ctx);
        put(kPoeMethod, train(spec, main_train, vocab, cfg.features, with(cfg.main_train, seed, LossKind::kPoe),
                     &poe)
                   .model);

        if (!compare) return;

        auto base = train(spec, main_train, vocab, cfg.features,
                          with(cfg.main_train, seed, LossKind::kPlainCe));
        put(kBase, base.model);

        EnsembleContext single = combined_context(ctx, n, C);
        ReweightLoss rw(single);
        put(kReweightMethod, train(spec, main_train, vocab, cfg.features,
                     with(cfg.main_train, seed, LossKind::kReweight), &rw)
                   .model);

        auto enc = kernels::encode_dataset(base.model, main_train);
        auto teacher = kernels::predict_proba_all(base.model, enc);
        std::vector<ProbVector> bias_probs;
        bias_probs.reserve(n);
        for (const auto& p : single.sources.front().probs)
          bias_probs.push_back(clip_and_normalize(p, single.epsilon, single.temperature));
        DistillLoss distill(make_distill_targets(teacher, bias_probs, enc.labels, cfg.epsilon));
        put(kDistillMethod, train(spec, main_train, vocab, cfg.features,
                     with(cfg.main_train, seed, LossKind::kDistill), &distill)
                   .model);
      },
      [&](std::size_t s) { return fmt::format("fusion (seed {})", cfg.seeds[s]); });

  std::vector<std::string> names;
  for (const auto& src : sources) names.push_back(src.feature.name);
  std::vector<FusionReport> out;
  for (std::size_t m = 0; m < M; ++m) {
    if (!compare && m != kPoeMethod) continue;
    FusionReport r;
    r.method = methods[m];
    r.sources = m == 0 ? std::vector<std::string>{} : names;
    r.seeds = cfg.seeds;
    for (std::size_t e = 0; e < E; ++e) {
      std::vector<double> runs;
      for (std::size_t s = 0; s < S; ++s) runs.push_back(acc[(m * S + s) * E + e]);
      r.evals.emplace_back(eval_sets[e].first, aggregate_runs(runs));
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

FusionReport fuse_best(const std::vector<FusionSource>& sources, const Dataset& main_train,
                       const std::vector<NamedDataset>& eval_sets, const SelectionConfig& cfg) {
  return run_methods(sources, main_train, eval_sets, cfg, false).front();
}

std::vector<FusionReport> compare_methods(const std::vector<FusionSource>& sources,
                                          const Dataset& main_train,
                                          const std::vector<NamedDataset>& eval_sets,
                                          const SelectionConfig& cfg) {
  return run_methods(sources, main_train, eval_sets, cfg, true);
}

}  // namespace debias
