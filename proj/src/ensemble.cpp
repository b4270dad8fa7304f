#include "debias/ensemble.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "debias/error.hpp"
#include "debias/kernels.hpp"

namespace debias {

namespace {

void check_prob_vector(std::span<const double> p, int num_classes, const std::string& who,
                       std::size_t i) {
  if (static_cast<int>(p.size()) != num_classes) {
    throw ValidationError(fmt::format("{}: example {} has {} probabilities, expected {}", who, i,
                                      p.size(), num_classes));
  }
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ValidationError(fmt::format("{}: example {} has probability {} outside [0, 1]", who,
                                        i, v));
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw ValidationError(fmt::format("{}: example {} probabilities sum to {}", who, i, sum));
  }
}

// Scratch for fused logits; C is small and loss adapters run concurrently.
std::vector<double>& fused_scratch(std::size_t n) {
  thread_local std::vector<double> buf;
  buf.resize(n);
  return buf;
}

}  // namespace

void EnsembleContext::validate(std::size_t n, int num_classes) const {
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) {
    throw ValidationError(fmt::format("clip epsilon {} outside (0, 1e-3]", epsilon));
  }
  if (!(temperature > 0.0)) throw ValidationError("bias temperature must be > 0");
  for (const BiasSource& s : sources) {
    if (s.probs.size() != n) {
      throw ValidationError(fmt::format("bias source '{}' covers {} examples, dataset has {}",
                                        s.name, s.probs.size(), n));
    }
    if (!(s.weight >= 0.0)) {
      throw ValidationError(fmt::format("bias source '{}' has negative weight", s.name));
    }
    if (s.active && s.active->size() != n) {
      throw ValidationError(fmt::format("bias source '{}' gate covers {} examples, expected {}",
                                        s.name, s.active->size(), n));
    }
    for (std::size_t i = 0; i < n; ++i) check_prob_vector(s.probs[i], num_classes, s.name, i);
  }
}

ProbVector clip_and_normalize(std::span<const double> probs, double epsilon, double temperature) {
  ProbVector out(probs.size());
  if (temperature == 1.0) {
    double sum = 0.0;
    for (std::size_t j = 0; j < probs.size(); ++j) {
      out[j] = std::clamp(probs[j], epsilon, 1.0);
      sum += out[j];
    }
    for (double& v : out) v /= sum;
    return out;
  }
  std::vector<double> logs(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) {
    logs[j] = std::log(std::clamp(probs[j], epsilon, 1.0)) / temperature;
  }
  softmax_into(logs, out);
  return out;
}

std::vector<double> poe_adjustment(const EnsembleContext& ctx, std::size_t index,
                                   int num_classes) {
  std::vector<double> adj(num_classes, 0.0);
  bool any = false;
  for (const BiasSource& s : ctx.sources) {
    if (!s.is_active(index)) continue;
    const ProbVector b = clip_and_normalize(s.probs[index], ctx.epsilon, ctx.temperature);
    for (int j = 0; j < num_classes; ++j) adj[j] += s.weight * std::log(b[j]);
    any = true;
  }
  if (any) {
    const double m = *std::max_element(adj.begin(), adj.end());
    for (double& a : adj) a -= m;
  }
  return adj;
}

ProbVector poe_fuse(std::span<const double> main_logits, const EnsembleContext& ctx,
                    std::size_t index) {
  const auto adj = poe_adjustment(ctx, index, static_cast<int>(main_logits.size()));
  std::vector<double> fused(main_logits.size());
  for (std::size_t j = 0; j < fused.size(); ++j) fused[j] = main_logits[j] + adj[j];
  return softmax(fused);
}

double poe_loss_and_grad(std::span<const double> main_logits, const EnsembleContext& ctx,
                         std::size_t index, LabelId label, std::span<double> grad) {
  const auto adj = poe_adjustment(ctx, index, static_cast<int>(main_logits.size()));
  std::vector<double> fused(main_logits.size());
  for (std::size_t j = 0; j < fused.size(); ++j) fused[j] = main_logits[j] + adj[j];
  return softmax_cross_entropy(fused, label, grad);
}

double reweight_weight(std::span<const double> bias_probs, LabelId label) {
  return 1.0 - bias_probs[label];
}

ProbVector self_distill_targets(std::span<const double> teacher_probs, double bias_prob_correct,
                                double epsilon) {
  if (!(bias_prob_correct >= 0.0 && bias_prob_correct <= 1.0)) {
    throw ValidationError(fmt::format("bias probability {} outside [0, 1]", bias_prob_correct));
  }
  const std::size_t c = teacher_probs.size();
  const double exponent = 1.0 - bias_prob_correct;
  if (exponent == 0.0) return ProbVector(c, 1.0 / static_cast<double>(c));

  const bool needs_clip = std::any_of(teacher_probs.begin(), teacher_probs.end(),
                                      [&](double p) { return p < epsilon || p > 1.0; });
  if (exponent == 1.0) {
    if (!needs_clip) return ProbVector(teacher_probs.begin(), teacher_probs.end());
    return clip_and_normalize(teacher_probs, epsilon);
  }
  std::vector<double> logs(c);
  for (std::size_t j = 0; j < c; ++j) {
    logs[j] = exponent * std::log(std::clamp(teacher_probs[j], epsilon, 1.0));
  }
  return softmax(logs);
}

ProbVector conditional_bias_vector(const Example& ex, const BiasFeatureSpec& gate,
                                   const FeatureConfig& gate_cfg, const Model& bias_model) {
  if (has_feature(ex, gate, gate_cfg)) return predict_proba(bias_model, ex);
  const int c = bias_model.num_classes();
  return ProbVector(c, 1.0 / static_cast<double>(c));
}

DistillTargets make_distill_targets(const std::vector<ProbVector>& teacher_probs,
                                    const std::vector<ProbVector>& bias_probs,
                                    const std::vector<LabelId>& labels, double epsilon) {
  if (teacher_probs.size() != labels.size() || bias_probs.size() != labels.size()) {
    throw ValidationError("teacher, bias and label counts differ");
  }
  DistillTargets out;
  out.targets.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out.targets.push_back(
        self_distill_targets(teacher_probs[i], bias_probs[i][labels[i]], epsilon));
  }
  return out;
}

BiasSource make_bias_source(const Model& bias_model, const Dataset& data, double weight,
                            const std::optional<BiasFeatureSpec>& gate,
                            const FeatureConfig& gate_cfg) {
  if (bias_model.num_classes() != data.num_classes()) {
    throw ValidationError(fmt::format("bias model '{}' has {} classes, dataset has {}",
                                      bias_model.spec().name, bias_model.num_classes(),
                                      data.num_classes()));
  }
  BiasSource source;
  source.name = bias_model.spec().name;
  source.weight = weight;
  source.probs = kernels::predict_proba_all(bias_model, kernels::encode_dataset(bias_model, data));
  if (gate) {
    std::vector<bool> active(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      active[i] = has_feature(data.examples[i], *gate, gate_cfg);
    }
    source.active = std::move(active);
    const auto c = static_cast<std::size_t>(data.num_classes());
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!(*source.active)[i]) source.probs[i].assign(c, 1.0 / static_cast<double>(c));
    }
  }
  return source;
}

PoeLoss::PoeLoss(const EnsembleContext& ctx) {
  if (ctx.sources.empty()) throw ValidationError("poe loss needs at least one bias source");
  n_ = ctx.sources.front().probs.size();
  classes_ = n_ ? static_cast<int>(ctx.sources.front().probs.front().size()) : 0;
  ctx.validate(n_, classes_);
  adjustments_.reserve(n_ * classes_);
  for (std::size_t i = 0; i < n_; ++i) {
    auto adj = poe_adjustment(ctx, i, classes_);
    adjustments_.insert(adjustments_.end(), adj.begin(), adj.end());
  }
}

void PoeLoss::check(std::size_t n, int num_classes) const {
  if (n != n_ || num_classes != classes_) {
    throw ValidationError(fmt::format(
        "poe context covers {} examples of {} classes, training set has {} of {}", n_, classes_,
        n, num_classes));
  }
}

double PoeLoss::loss_and_grad(std::span<const double> logits, std::size_t example, LabelId label,
                              std::span<double> dlogits) const {
  std::vector<double>& fused = fused_scratch(logits.size());
  const double* adj = adjustments_.data() + example * static_cast<std::size_t>(classes_);
  for (std::size_t j = 0; j < logits.size(); ++j) fused[j] = logits[j] + adj[j];
  return softmax_cross_entropy(fused, label, dlogits);
}

ReweightLoss::ReweightLoss(const EnsembleContext& ctx)
    : source_(ctx.sources.size() == 1 ? &ctx.sources.front() : nullptr) {
  if (!source_) throw ValidationError("reweight loss needs exactly one bias source");
}

void ReweightLoss::check(std::size_t n, int num_classes) const {
  if (source_->probs.size() != n) {
    throw ValidationError(fmt::format("reweight source covers {} examples, training set has {}",
                                      source_->probs.size(), n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    check_prob_vector(source_->probs[i], num_classes, source_->name, i);
  }
}

double ReweightLoss::loss_and_grad(std::span<const double> logits, std::size_t example,
                                   LabelId label, std::span<double> dlogits) const {
  double w;
  if (source_->is_active(example)) {
    w = reweight_weight(source_->probs[example], label);
  } else {
    w = 1.0 - 1.0 / static_cast<double>(logits.size());
  }
  const double ce = softmax_cross_entropy(logits, label, dlogits);
  for (double& g : dlogits) g *= w;
  return w * ce;
}

void DistillLoss::check(std::size_t n, int num_classes) const {
  if (targets_.targets.size() != n) {
    throw ValidationError(fmt::format("distillation targets cover {} examples, training set has {}",
                                      targets_.targets.size(), n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    check_prob_vector(targets_.targets[i], num_classes, "distillation targets", i);
  }
}

double DistillLoss::loss_and_grad(std::span<const double> logits, std::size_t example, LabelId,
                                  std::span<double> dlogits) const {
  const ProbVector& s = targets_.targets[example];
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    dlogits[j] = std::exp(logits[j] - m);
    sum += dlogits[j];
  }
  const double log_z = std::log(sum) + m;
  double loss = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (s[j] > 0.0) loss -= s[j] * (logits[j] - log_z);
    dlogits[j] = dlogits[j] / sum - s[j];
  }
  return loss;
}

}  // namespace debias
