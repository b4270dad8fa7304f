#include <numeric>

#include <gtest/gtest.h>
#include <omp.h>

#include "debias/ensemble.hpp"
#include "debias/kernels.hpp"
#include "test_support.hpp"

namespace debias {
namespace {

class Kernels : public ::testing::TestWithParam<int> {
 protected:
  void SetUp() override {
    saved_ = omp_get_max_threads();
    omp_set_num_threads(GetParam());
  }
  void TearDown() override { omp_set_num_threads(saved_); }

 private:
  int saved_ = 1;
};

Model randomized(const ModelSpec& spec, const Dataset& ds) {
  Model m = make_model(spec, std::make_shared<const Vocab>(build_vocab(ds)));
  Rng rng(spec.init_seed + 100, "kernel-params");
  for (auto& p : m.parameters()) p = rng.uniform(-0.8, 0.8);
  return m;
}

bool same_encoding(const EncodedDataset& a, const EncodedDataset& b) {
  if (a.size() != b.size() || a.labels != b.labels) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.items[i].ids_a != b.items[i].ids_a || a.items[i].ids_b != b.items[i].ids_b ||
        a.items[i].features != b.items[i].features)
      return false;
  return true;
}

TEST_P(Kernels, EncodeAndPredictMatchReference) {
  const Dataset ds = testing::random_dataset(31, 203, 3);
  for (const auto& spec : testing::all_arch_specs(3)) {
    const Model m = randomized(spec, ds);
    for (auto blank : {BlankSide::kNone, BlankSide::kA, BlankSide::kB}) {
      if (blank != BlankSide::kNone && spec.input_mode == InputMode::kFeatures) continue;
      const auto enc = kernels::encode_dataset(m, ds, blank);
      ASSERT_TRUE(same_encoding(enc, reference::encode_dataset(m, ds, blank))) << spec.name;
    }
    const auto enc = kernels::encode_dataset(m, ds);
    EXPECT_EQ(kernels::predict_proba_all(m, enc), reference::predict_proba_all(m, enc)) << spec.name;
    EXPECT_EQ(kernels::predict_labels(m, enc), reference::predict_labels(m, enc)) << spec.name;
  }
  EXPECT_EQ(kernels::feature_matrix(ds, FeatureConfig{}), reference::feature_matrix(ds, FeatureConfig{}));
}

TEST_P(Kernels, BatchGradientIsBitIdenticalToReference) {
  const Dataset ds = testing::random_dataset(32, 150, 3);
  Rng rng(5, "kernel-bias");
  EnsembleContext ctx;
  BiasSource src;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ProbVector p = {rng.uniform01() + 0.1, rng.uniform01() + 0.1, rng.uniform01() + 0.1};
    const double s = p[0] + p[1] + p[2];
    for (auto& v : p) v /= s;
    src.probs.push_back(p);
  }
  ctx.sources.push_back(src);
  const PoeLoss poe(ctx);
  const CrossEntropyLoss ce;
  const ReweightLoss rw(ctx);

  // Odd batch sizes leave a partial final block.
  std::vector<std::size_t> full(ds.size());
  std::iota(full.begin(), full.end(), 0);
  std::vector<std::size_t> odd;
  for (std::size_t i = 0; i < ds.size(); i += 3) odd.push_back(i);

  for (const auto& spec : testing::all_arch_specs(3)) {
    const Model m = randomized(spec, ds);
    const auto enc = kernels::encode_dataset(m, ds);
    kernels::BatchGradient bg(m);
    for (const LossAdapter* loss : {static_cast<const LossAdapter*>(&ce),
                                    static_cast<const LossAdapter*>(&poe),
                                    static_cast<const LossAdapter*>(&rw)}) {
      for (const auto* batch : {&full, &odd}) {
        std::vector<double> g1(m.parameter_count(), 7.0), g2(m.parameter_count(), -3.0);
        const double l1 = bg(m, enc, *batch, *loss, g1);
        const double l2 = reference::batch_loss_and_gradient(m, enc, *batch, *loss, g2);
        ASSERT_EQ(l1, l2) << spec.name << " " << to_string(loss->kind());
        ASSERT_EQ(g1, g2) << spec.name << " " << to_string(loss->kind());
      }
    }
  }
}

TEST_P(Kernels, TrainingIsIndependentOfThreadCount) {
  const Dataset ds = testing::random_dataset(33, 120, 2);
  ModelSpec spec{"m", Arch::kMlp, InputMode::kPair, {6}, 4, 2, 3};
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 20;
  auto vocab = std::make_shared<const Vocab>(build_vocab(ds));
  const Model here = train(spec, ds, vocab, {}, tc).model;
  omp_set_num_threads(1);
  const Model serial = train(spec, ds, vocab, {}, tc).model;
  omp_set_num_threads(GetParam());
  EXPECT_TRUE(std::equal(here.parameters().begin(), here.parameters().end(),
                         serial.parameters().begin()));
}

INSTANTIATE_TEST_SUITE_P(Threads, Kernels, ::testing::Values(1, 2, 4, 7));

}  // namespace
}  // namespace debias
