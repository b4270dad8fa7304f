#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "debias/ensemble.hpp"
#include "debias/error.hpp"
#include "debias/kernels.hpp"
#include "test_support.hpp"

namespace debias {
namespace {

using V = std::vector<double>;

EnsembleContext single(V b, double w = 1.0) {
  EnsembleContext ctx;
  ctx.sources.push_back({"b", {std::move(b)}, w, std::nullopt});
  return ctx;
}

void expect_near(const V& a, const V& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << i;
}

TEST(Poe, Examples) {
  expect_near(poe_fuse(V{0, 0}, single({0.5, 0.5}), 0), {0.5, 0.5}, 1e-15);
  expect_near(poe_fuse(V{0, 0}, single({0.9, 0.1}), 0), {0.9, 0.1}, 1e-12);
  EnsembleContext two = single({0.9, 0.1});
  two.sources.push_back({"c", {{0.1, 0.9}}, 1.0, std::nullopt});
  expect_near(poe_fuse(V{0, 0}, two, 0), {0.5, 0.5}, 1e-12);
}

TEST(Poe, MatchesHandFormulaWithWeights) {
  Rng rng(2, "poe-formula");
  for (int t = 0; t < 200; ++t) {
    V z(4), b1(4), b2(4);
    for (auto& v : z) v = rng.uniform(-4, 4);
    double s1 = 0, s2 = 0;
    for (auto& v : b1) s1 += v = 0.01 + rng.uniform01();
    for (auto& v : b2) s2 += v = 0.01 + rng.uniform01();
    for (auto& v : b1) v /= s1;
    for (auto& v : b2) v /= s2;
    EnsembleContext ctx = single(b1, 0.6);
    ctx.sources.push_back({"c", {b2}, 1.7, std::nullopt});
    V expect(4);
    double norm = 0;
    for (int j = 0; j < 4; ++j) norm += expect[j] = std::exp(z[j] + 0.6 * std::log(b1[j]) + 1.7 * std::log(b2[j]));
    for (auto& v : expect) v /= norm;
    expect_near(poe_fuse(z, ctx, 0), expect, 1e-12);
    V grad(4);
    const int y = static_cast<int>(rng.uniform_index(4));
    EXPECT_NEAR(poe_loss_and_grad(z, ctx, 0, y, grad), -std::log(expect[y]), 1e-12);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(grad[j], expect[j] - (j == y), 1e-12);
  }
}

TEST(Poe, ZeroProbabilityIsClipped) {
  V grad(2);
  const double loss = poe_loss_and_grad(V{0, 0}, single({1.0, 0.0}), 0, 1, grad);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, -std::log(kDefaultClipEpsilon), 1e-3);
}

TEST(Poe, UniformBiasEqualsCrossEntropyExactly) {
  Rng rng(9, "uniform");
  for (int t = 0; t < 1000; ++t) {
    const int C = 2 + static_cast<int>(rng.uniform_index(4));
    V z(C), g1(C), g2(C);
    for (auto& v : z) v = rng.uniform(-6, 6);
    const int y = static_cast<int>(rng.uniform_index(C));
    const double l1 = poe_loss_and_grad(z, single(V(C, 1.0 / C)), 0, y, g1);
    const double l2 = softmax_cross_entropy(z, y, g2);
    ASSERT_EQ(l1, l2);
    ASSERT_EQ(g1, g2);
  }
}

TEST(Poe, GatedOffSourceEqualsAbsentSource) {
  Rng rng(12, "gate");
  const V b1 = {0.7, 0.2, 0.1}, b2 = {0.1, 0.3, 0.6};
  EnsembleContext with = single(b1, 0.8);
  with.sources.push_back({"c", {b2}, 1.2, std::vector<bool>{false}});
  const EnsembleContext without = single(b1, 0.8);
  for (int t = 0; t < 100; ++t) {
    V z(3);
    for (auto& v : z) v = rng.uniform(-3, 3);
    expect_near(poe_fuse(z, with, 0), poe_fuse(z, without, 0), 1e-12);
  }
  EnsembleContext off = single(b2);
  off.sources[0].active = std::vector<bool>{false};
  EXPECT_EQ(poe_adjustment(off, 0, 3), V(3, 0.0));
}

TEST(Poe, AdjustmentIsShiftedToZeroMax) {
  const V adj = poe_adjustment(single({0.2, 0.5, 0.3}), 0, 3);
  EXPECT_EQ(*std::max_element(adj.begin(), adj.end()), 0.0);
  EXPECT_NEAR(adj[0], std::log(0.2 / 0.5), 1e-15);
}

TEST(ClipAndNormalize, ClipsAndTempers) {
  const V p = clip_and_normalize(V{1.0, 0.0}, 1e-3);
  EXPECT_NEAR(p[1], 1e-3 / (1 + 1e-3), 1e-15);
  const V flat = clip_and_normalize(V{0.8, 0.2}, 1e-7, 2.0);
  EXPECT_NEAR(flat[0], std::sqrt(0.8) / (std::sqrt(0.8) + std::sqrt(0.2)), 1e-12);
}

TEST(Reweight, WeightAndExample) {
  EXPECT_DOUBLE_EQ(reweight_weight(V{0.7, 0.3}, 0), 1.0 - 0.7);
  EnsembleContext ctx = single({0.25, 0.75});
  ReweightLoss loss(ctx);
  V g(2), ce_g(2);
  const V z = {0.3, -0.4};
  const double l = loss.loss_and_grad(z, 0, 1, g);
  const double ce = softmax_cross_entropy(z, 1, ce_g);
  EXPECT_DOUBLE_EQ(l, 0.25 * ce);
  for (int j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(g[j], 0.25 * ce_g[j]);
}

TEST(Reweight, PerfectBiasModelGivesZeroGradient) {
  const Dataset ds = testing::random_dataset(3, 40, 3);
  EnsembleContext ctx;
  BiasSource src;
  for (const auto& ex : ds.examples) {
    V b(3, 0.0);
    b[ex.label] = 1.0;
    src.probs.push_back(b);
  }
  ctx.sources.push_back(src);
  const ReweightLoss loss(ctx);
  for (const auto& spec : testing::all_arch_specs(3)) {
    Model m = make_model(spec, std::make_shared<const Vocab>(build_vocab(ds)));
    for (auto& p : m.parameters()) p += 0.1;  // non-trivial logits
    const auto enc = kernels::encode_dataset(m, ds);
    std::vector<std::size_t> batch(ds.size());
    std::iota(batch.begin(), batch.end(), 0);
    V grad(m.parameter_count());
    kernels::BatchGradient bg(m);
    bg(m, enc, batch, loss, grad);
    double norm = 0;
    for (double g : grad) norm += g * g;
    EXPECT_LE(std::sqrt(norm), 1e-12) << spec.name;
  }
  EXPECT_THROW(ReweightLoss(EnsembleContext{}), ValidationError);
}

TEST(Distill, ClosedForms) {
  const V teacher = {0.8, 0.2};
  EXPECT_EQ(self_distill_targets(teacher, 0.0), teacher);
  EXPECT_EQ(self_distill_targets(teacher, 1.0), V(2, 0.5));
  const V half = self_distill_targets(teacher, 0.5);
  EXPECT_NEAR(half[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(half[1], 1.0 / 3.0, 1e-12);
  EXPECT_EQ(self_distill_targets(V{0.5, 0.3, 0.2}, 1.0), V(3, 1.0 / 3.0));
  EXPECT_THROW(self_distill_targets(teacher, 1.5), ValidationError);
}

TEST(Distill, TargetsFollowBiasConfidence) {
  const std::vector<ProbVector> teacher = {{0.6, 0.3, 0.1}, {0.6, 0.3, 0.1}};
  const std::vector<ProbVector> bias = {{0.9, 0.05, 0.05}, {0.1, 0.45, 0.45}};
  const DistillTargets t = make_distill_targets(teacher, bias, {0, 0});
  // Higher bias confidence on the gold label flattens the target more.
  EXPECT_LT(t.targets[0][0], t.targets[1][0]);
  EXPECT_LT(t.targets[1][0], 0.6);
  EXPECT_THROW(make_distill_targets(teacher, bias, {0}), ValidationError);
}

TEST(Distill, LossIsSoftCrossEntropy) {
  DistillTargets t;
  t.targets = {{0.7, 0.2, 0.1}};
  const DistillLoss loss(t);
  const V z = {0.5, -1.0, 2.0};
  V g(3);
  const double l = loss.loss_and_grad(z, 0, 0, g);
  const V p = softmax(z);
  double expect = 0;
  for (int j = 0; j < 3; ++j) expect -= t.targets[0][j] * std::log(p[j]);
  EXPECT_NEAR(l, expect, 1e-12);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(g[j], p[j] - t.targets[0][j], 1e-12);
}

TEST(Conditional, UniformWhereTheFeatureIsAbsent) {
  const Dataset ds = testing::make_dataset({{"a b", "a"}, {"a", "z"}}, {0, 1}, 2);
  ModelSpec spec;
  spec.name = "b";
  spec.num_classes = 2;
  Model m = make_model(spec, std::make_shared<const Vocab>(build_vocab(ds)));
  for (auto& p : m.parameters()) p = 0.3;
  m.parameters()[m.parameter_count() - 1] = 1.0;  // break the tie between classes
  const BiasFeatureSpec gate{"all_in_p", BiasFeatureKind::kAllInP, 0, {}, {}};
  EXPECT_EQ(conditional_bias_vector(ds.examples[1], gate, {}, m), V(2, 0.5));
  EXPECT_EQ(conditional_bias_vector(ds.examples[0], gate, {}, m), predict_proba(m, ds.examples[0]));
  const BiasSource src = make_bias_source(m, ds, 1.0, gate);
  ASSERT_TRUE(src.active.has_value());
  EXPECT_TRUE(src.is_active(0));
  EXPECT_FALSE(src.is_active(1));
}

TEST(Context, ValidateRejectsBadSources) {
  EnsembleContext ctx = single({0.5, 0.5});
  EXPECT_NO_THROW(ctx.validate(1, 2));
  EXPECT_THROW(ctx.validate(2, 2), ValidationError);
  EXPECT_THROW(ctx.validate(1, 3), ValidationError);
  ctx.sources[0].probs[0] = {0.7, 0.7};
  EXPECT_THROW(ctx.validate(1, 2), ValidationError);
  ctx = single({0.5, 0.5});
  ctx.epsilon = 0.1;
  EXPECT_THROW(ctx.validate(1, 2), ValidationError);
  ctx = single({0.5, 0.5}, -1.0);
  EXPECT_THROW(ctx.validate(1, 2), ValidationError);
}

}  // namespace
}  // namespace debias
