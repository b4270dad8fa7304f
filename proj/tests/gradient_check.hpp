#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "debias/ensemble.hpp"
#include "debias/kernels.hpp"
#include "test_support.hpp"

// Finite-difference checks shared by the gradient tests and the acceptance suite.
namespace debias::testing {

inline constexpr double kFdStep = 1e-4;

inline double rel_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

inline ProbVector random_probs(Rng& rng, int C) {
  ProbVector p(C);
  double sum = 0;
  for (auto& v : p) sum += v = 0.05 + rng.uniform01();
  for (auto& v : p) v /= sum;
  return p;
}

struct LossFixture {
  Dataset data;
  EnsembleContext ctx;
  std::unique_ptr<LossAdapter> loss;
};

// PoE gets two weighted sources; reweight one; distill random soft targets.
inline LossFixture make_loss_fixture(LossKind kind, std::uint64_t seed, int C, std::size_t n) {
  LossFixture f;
  f.data = random_dataset(seed, n, C);
  Rng rng(seed, "grad-bias");
  BiasSource src;
  for (std::size_t i = 0; i < n; ++i) src.probs.push_back(random_probs(rng, C));
  src.weight = 0.7;
  f.ctx.sources.push_back(src);
  switch (kind) {
    case LossKind::kPlainCe: f.loss = std::make_unique<CrossEntropyLoss>(); break;
    case LossKind::kPoe: {
      BiasSource second;
      for (std::size_t i = 0; i < n; ++i) second.probs.push_back(random_probs(rng, C));
      second.weight = 1.3;
      f.ctx.sources.push_back(second);
      f.loss = std::make_unique<PoeLoss>(f.ctx);
      break;
    }
    case LossKind::kReweight: f.loss = std::make_unique<ReweightLoss>(f.ctx); break;
    case LossKind::kDistill: {
      DistillTargets t;
      for (std::size_t i = 0; i < n; ++i) t.targets.push_back(random_probs(rng, C));
      f.loss = std::make_unique<DistillLoss>(std::move(t));
      break;
    }
  }
  return f;
}

struct WorstError {
  double rel = 0;
  std::size_t index = 0;
  double analytic = 0, numeric = 0;
};

// Logit gradient of example i at random logits, against central differences.
inline WorstError check_logit_gradient(const LossFixture& f, std::size_t i, Rng& rng) {
  const int C = f.data.num_classes();
  std::vector<double> z(C), g(C), tmp(C);
  for (auto& v : z) v = rng.uniform(-3, 3);
  const LabelId y = f.data.examples[i].label;
  f.loss->loss_and_grad(z, i, y, g);
  WorstError w;
  for (int j = 0; j < C; ++j) {
    auto zp = z, zm = z;
    zp[j] += kFdStep;
    zm[j] -= kFdStep;
    const double num =
        (f.loss->loss_and_grad(zp, i, y, tmp) - f.loss->loss_and_grad(zm, i, y, tmp)) /
        (2 * kFdStep);
    const double err = rel_error(g[j], num);
    if (err > w.rel) w = {err, static_cast<std::size_t>(j), g[j], num};
  }
  return w;
}

// Full-batch parameter gradient of a perturbed model, every parameter.
inline WorstError check_parameter_gradient(const ModelSpec& spec, LossKind kind,
                                           std::uint64_t inst) {
  LossFixture f = make_loss_fixture(kind, 100 + inst, spec.num_classes, 6);
  auto vocab = std::make_shared<const Vocab>(build_vocab(f.data));
  Model model(spec, vocab, FeatureConfig{});
  model.initialize(inst + 1);
  // Non-zero output layer so every slice receives gradient.
  Rng rng(inst, "perturb");
  for (auto& p : model.parameters()) p += rng.uniform(-0.5, 0.5);

  const EncodedDataset enc = reference::encode_dataset(model, f.data);
  std::vector<std::size_t> batch(f.data.size());
  std::iota(batch.begin(), batch.end(), 0);
  std::vector<double> grad(model.parameter_count());
  reference::batch_loss_and_gradient(model, enc, batch, *f.loss, grad);

  std::vector<double> scratch(model.parameter_count());
  auto params = model.parameters();
  WorstError w;
  for (std::size_t k = 0; k < params.size(); ++k) {
    // Fourth-order central stencil; the plain two-point form leaves an
    // O(h^2) truncation error near 1e-10 on tiny gradients.
    const double saved = params[k];
    auto loss_at = [&](double offset) {
      params[k] = saved + offset;
      return reference::batch_loss_and_gradient(model, enc, batch, *f.loss, scratch);
    };
    const double d1 = loss_at(kFdStep) - loss_at(-kFdStep);
    const double d2 = loss_at(2 * kFdStep) - loss_at(-2 * kFdStep);
    params[k] = saved;
    const double num = (8 * d1 - d2) / (12 * kFdStep);
    const double err = std::abs(grad[k] - num) < 1e-10 ? 0.0 : rel_error(grad[k], num);
    if (err > w.rel) w = {err, k, grad[k], num};
  }
  return w;
}

}  // namespace debias::testing
