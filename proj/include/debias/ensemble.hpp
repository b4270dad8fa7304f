#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "debias/bias_features.hpp"
#include "debias/model.hpp"

namespace debias {

inline constexpr double kDefaultClipEpsilon = 1e-7;

// Frozen bias predictions for every example of a training set, in dataset
// order. `active[i] == false` gates the source off for example i.
struct BiasSource {
  std::string name;
  std::vector<ProbVector> probs;
  double weight = 1.0;
  std::optional<std::vector<bool>> active;

  bool is_active(std::size_t i) const { return !active || (*active)[i]; }
};

struct EnsembleContext {
  std::vector<BiasSource> sources;
  double epsilon = kDefaultClipEpsilon;  // in (0, 1e-3]
  double temperature = 1.0;              // bias temperature, 1 = off

  // Throws ValidationError unless every source covers n valid C-class
  // probability vectors.
  void validate(std::size_t n, int num_classes) const;
};

// Clip to [eps, 1], optionally sharpen/flatten by 1/temperature, renormalize.
ProbVector clip_and_normalize(std::span<const double> probs, double epsilon,
                              double temperature = 1.0);

// Sum_k w_k log b_k over active sources, shifted so its maximum is zero.
// All-uniform or fully gated-off sources give exactly zero.
std::vector<double> poe_adjustment(const EnsembleContext& ctx, std::size_t index,
                                   int num_classes);

// softmax(main_logits + sum_k w_k log b_k)
ProbVector poe_fuse(std::span<const double> main_logits, const EnsembleContext& ctx,
                    std::size_t index);

// -log p_hat[label]; gradient p_hat - onehot(label) with respect to the main
// logits only.
double poe_loss_and_grad(std::span<const double> main_logits, const EnsembleContext& ctx,
                         std::size_t index, LabelId label, std::span<double> grad);

// 1 - b[label]
double reweight_weight(std::span<const double> bias_probs, LabelId label);

// s_j proportional to teacher_j ^ (1 - bias_prob_correct), teacher clipped to
// [eps, 1] first. Exponent 1 returns the (clipped) teacher unchanged and
// exponent 0 returns the exact uniform vector.
ProbVector self_distill_targets(std::span<const double> teacher_probs, double bias_prob_correct,
                                double epsilon = kDefaultClipEpsilon);

// Bias model prediction where the gating feature holds, uniform elsewhere.
ProbVector conditional_bias_vector(const Example& ex, const BiasFeatureSpec& gate,
                                   const FeatureConfig& gate_cfg, const Model& bias_model);

struct DistillTargets {
  std::vector<ProbVector> targets;
};

// Scales teacher predictions by the bias model's gold-label probability.
DistillTargets make_distill_targets(const std::vector<ProbVector>& teacher_probs,
                                    const std::vector<ProbVector>& bias_probs,
                                    const std::vector<LabelId>& labels,
                                    double epsilon = kDefaultClipEpsilon);

// Predictions of a frozen bias model over `data`, optionally gated by a
// feature. The model is only read.
BiasSource make_bias_source(const Model& bias_model, const Dataset& data, double weight = 1.0,
                            const std::optional<BiasFeatureSpec>& gate = std::nullopt,
                            const FeatureConfig& gate_cfg = {});

class PoeLoss final : public LossAdapter {
 public:
  // Adjustments are precomputed for the n examples in ctx.
  explicit PoeLoss(const EnsembleContext& ctx);
  LossKind kind() const override { return LossKind::kPoe; }
  double loss_and_grad(std::span<const double> logits, std::size_t example, LabelId label,
                       std::span<double> dlogits) const override;
  void check(std::size_t n, int num_classes) const override;

 private:
  std::size_t n_ = 0;
  int classes_ = 0;
  std::vector<double> adjustments_;  // n x C
};

class ReweightLoss final : public LossAdapter {
 public:
  // Needs exactly one source. Gated-off examples see the uniform vector,
  // i.e. weight 1 - 1/C.
  explicit ReweightLoss(const EnsembleContext& ctx);
  LossKind kind() const override { return LossKind::kReweight; }
  double loss_and_grad(std::span<const double> logits, std::size_t example, LabelId label,
                       std::span<double> dlogits) const override;
  void check(std::size_t n, int num_classes) const override;

 private:
  const BiasSource* source_;
};

class DistillLoss final : public LossAdapter {
 public:
  explicit DistillLoss(DistillTargets targets) : targets_(std::move(targets)) {}
  LossKind kind() const override { return LossKind::kDistill; }
  double loss_and_grad(std::span<const double> logits, std::size_t example, LabelId label,
                       std::span<double> dlogits) const override;
  void check(std::size_t n, int num_classes) const override;

 private:
  DistillTargets targets_;
};

}  // namespace debias
