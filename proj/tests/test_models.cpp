#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "debias/ensemble.hpp"
#include "debias/error.hpp"
#include "debias/json_io.hpp"
#include "debias/kernels.hpp"
#include "debias/selection.hpp"
#include "test_support.hpp"

namespace debias {
namespace {

using V = std::vector<double>;

std::shared_ptr<const Vocab> vocab_of(const Dataset& ds) {
  return std::make_shared<const Vocab>(build_vocab(ds));
}

void randomize(Model& m, std::uint64_t seed) {
  Rng rng(seed, "randomize");
  for (auto& p : m.parameters()) p = rng.uniform(-1, 1);
}

TEST(Softmax, HighPrecisionOracle) {
  // exp(k) / sum exp, evaluated with 40-digit decimal arithmetic.
  const V expect = {0.09003057317038045799802210148449179786791,
                    0.2447284710547976524729596183407627971993,
                    0.6652409557748218895290182801747454049327};
  const V p = softmax(V{1, 2, 3});
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(p[j], expect[j], 1e-15);
  EXPECT_EQ(softmax(V{0, 0, 0}), V(3, 1.0 / 3.0));
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  Rng rng(1, "softmax");
  for (int t = 0; t < 500; ++t) {
    V z(5), zc(5);
    const double c = rng.uniform(-50, 50);
    for (int j = 0; j < 5; ++j) zc[j] = (z[j] = rng.uniform(-20, 20)) + c;
    const V a = softmax(z), b = softmax(zc);
    double sum = 0;
    for (int j = 0; j < 5; ++j) {
      EXPECT_NEAR(a[j], b[j], 1e-12);
      EXPECT_GT(a[j], 0.0);
      sum += a[j];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  const V big = softmax(V{1000, 0});
  EXPECT_EQ(big[0], 1.0);
  EXPECT_EQ(argmax(V{1, 3, 3}), 1);
}

TEST(Forward, ZeroLogitsAtInit) {
  const Dataset ds = testing::random_dataset(2, 20, 3);
  for (const auto& spec : testing::all_arch_specs(3)) {
    const Model m = make_model(spec, vocab_of(ds));
    for (const auto& ex : ds.examples) ASSERT_EQ(forward(m, ex), V(3, 0.0)) << spec.name;
  }
}

TEST(Forward, LogRegEqualsIndependentMatrixMultiply) {
  const Dataset ds = testing::random_dataset(4, 50, 3);
  ModelSpec spec{"lr", Arch::kFeatureLogReg, InputMode::kFeatures, {}, 16, 3, 0};
  Model m = make_model(spec, vocab_of(ds));
  randomize(m, 8);
  const ParamSlice& w = m.slice("output.weight");
  const ParamSlice& b = m.slice("output.bias");
  ASSERT_EQ(w.cols, FeatureConfig{}.dimension());
  const auto p = m.parameters();
  for (const auto& ex : ds.examples) {
    const V x = feature_vector(ex, FeatureConfig{});
    const V z = forward(m, ex);
    for (std::size_t r = 0; r < 3; ++r) {
      double acc = p[b.offset + r];
      for (std::size_t c = 0; c < w.cols; ++c) acc += p[w.offset + r * w.cols + c] * x[c];
      EXPECT_NEAR(z[r], acc, 1e-13);
    }
  }
}

TEST(Forward, PairMlpEqualsIndependentEvaluation) {
  const Dataset ds = testing::random_dataset(6, 40, 2);
  ModelSpec spec{"m", Arch::kMlp, InputMode::kPair, {5}, 3, 2, 0};
  Model m = make_model(spec, vocab_of(ds));
  randomize(m, 9);
  const auto p = m.parameters();
  const ParamSlice& e = m.slice("embedding");
  const ParamSlice& h = m.slice("hidden0.weight");
  const ParamSlice& hb = m.slice("hidden0.bias");
  const ParamSlice& o = m.slice("output.weight");
  const ParamSlice& ob = m.slice("output.bias");
  auto mean_embed = [&](const std::string& text) {
    V out(3, 0.0);
    const auto toks = tokenize(text);
    for (const auto& t : toks)
      for (int d = 0; d < 3; ++d) out[d] += p[e.offset + m.vocab().index(t) * 3 + d];
    for (auto& v : out) v /= toks.empty() ? 1.0 : static_cast<double>(toks.size());
    return out;
  };
  for (const auto& ex : ds.examples) {
    V x = mean_embed(ex.text_a);
    const V xb = mean_embed(ex.text_b.value_or(""));
    x.insert(x.end(), xb.begin(), xb.end());
    V hid(5);
    for (int r = 0; r < 5; ++r) {
      double acc = p[hb.offset + r];
      for (int c = 0; c < 6; ++c) acc += p[h.offset + r * 6 + c] * x[c];
      hid[r] = std::tanh(acc);
    }
    const V z = forward(m, ex);
    for (int r = 0; r < 2; ++r) {
      double acc = p[ob.offset + r];
      for (int c = 0; c < 5; ++c) acc += p[o.offset + r * 5 + c] * hid[c];
      EXPECT_NEAR(z[r], acc, 1e-13);
    }
  }
}

TEST(Forward, UnknownAndEmptyInputs) {
  const Dataset ds = testing::make_dataset({{"a b", "c"}}, {0}, 2);
  ModelSpec spec{"b", Arch::kBowLinear, InputMode::kBOnly, {}, 4, 2, 3};
  Model m = make_model(spec, vocab_of(ds));
  randomize(m, 1);
  const EncodedExample enc = encode(m, Example{"x", "a", "zzz", 0});
  EXPECT_EQ(enc.ids_b, std::vector<int>{Vocab::kUnknown});
  const V z = forward(m, Example{"x", "a", std::nullopt, 0});
  // Empty side: zero embedding, so only the bias remains.
  const ParamSlice& ob = m.slice("output.bias");
  EXPECT_EQ(z[0], m.parameters()[ob.offset]);
  EXPECT_EQ(z[1], m.parameters()[ob.offset + 1]);
}

Dataset separable(std::size_t n) {
  std::vector<std::pair<std::string, std::string>> texts;
  std::vector<LabelId> labels;
  Rng rng(10, "separable");
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(rng.uniform_index(2));
    std::string a = y ? "good" : "bad";
    for (int k = 0; k < 4; ++k) a += " f" + std::to_string(rng.uniform_index(20));
    texts.emplace_back(a, "f" + std::to_string(rng.uniform_index(20)));
    labels.push_back(y);
  }
  return testing::make_dataset(texts, labels, 2);
}

TEST(Train, SeparableToySetIsLearned) {
  const Dataset ds = separable(300);
  ModelSpec spec{"bow", Arch::kBowLinear, InputMode::kPair, {}, 8, 2, 1};
  TrainConfig tc;
  tc.epochs = 20;
  const TrainResult r = train(spec, ds, vocab_of(ds), {}, tc);
  EXPECT_GE(evaluate(r.model, ds), 0.99);
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());
  tc.optimizer = OptimizerKind::kSgd;
  tc.learning_rate = 0.5;
  EXPECT_GE(evaluate(train(spec, ds, vocab_of(ds), {}, tc).model, ds), 0.99);
}

TEST(Train, UniformLabelsConvergeToUniform) {
  std::vector<std::pair<std::string, std::string>> texts(90, {"same words", "here"});
  std::vector<LabelId> labels;
  for (int i = 0; i < 90; ++i) labels.push_back(i % 3);
  const Dataset ds = testing::make_dataset(texts, labels, 3);
  ModelSpec spec{"m", Arch::kMlp, InputMode::kPair, {8}, 4, 3, 2};
  TrainConfig tc;
  tc.epochs = 30;
  const TrainResult r = train(spec, ds, vocab_of(ds), {}, tc);
  EXPECT_NEAR(r.epoch_losses.back(), std::log(3.0), 1e-3);
  for (double p : predict_proba(r.model, ds.examples[0])) EXPECT_NEAR(p, 1.0 / 3.0, 1e-2);
}

TEST(Train, DeterministicParameters) {
  const Dataset ds = testing::random_dataset(12, 120, 3);
  for (const auto& spec : testing::all_arch_specs(3)) {
    TrainConfig tc;
    tc.epochs = 3;
    tc.seed = 4;
    const auto a = train(spec, ds, vocab_of(ds), {}, tc).model;
    const auto b = train(spec, ds, vocab_of(ds), {}, tc).model;
    ASSERT_TRUE(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()))
        << spec.name;
    tc.seed = 5;
    const auto c = train(spec, ds, vocab_of(ds), {}, tc).model;
    EXPECT_FALSE(std::equal(a.parameters().begin(), a.parameters().end(), c.parameters().begin()))
        << spec.name;
  }
}

TEST(Train, BiasModelStaysFrozen) {
  const Dataset ds = testing::random_dataset(13, 80, 2);
  ModelSpec bspec{"bias", Arch::kBowLinear, InputMode::kBOnly, {}, 4, 2, 7};
  TrainConfig tc;
  tc.epochs = 2;
  const Model bias = train(bspec, ds, vocab_of(ds), {}, tc).model;
  const std::vector<double> before(bias.parameters().begin(), bias.parameters().end());
  EnsembleContext ctx;
  ctx.sources.push_back(make_bias_source(bias, ds));
  const PoeLoss poe(ctx);
  tc.loss = LossKind::kPoe;
  ModelSpec mspec{"main", Arch::kMlp, InputMode::kPair, {6}, 4, 2, 1};
  train(mspec, ds, vocab_of(ds), {}, tc, &poe);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), bias.parameters().begin()));
}

TEST(Train, PreconditionsAndNumericFailure) {
  const Dataset ds = separable(40);
  ModelSpec spec{"bow", Arch::kBowLinear, InputMode::kPair, {}, 4, 2, 1};
  TrainConfig tc;
  tc.epochs = 0;
  EXPECT_THROW(train(spec, ds, vocab_of(ds), {}, tc), ValidationError);
  tc.epochs = 1;
  tc.loss = LossKind::kPoe;
  EXPECT_THROW(train(spec, ds, vocab_of(ds), {}, tc), ValidationError);
  tc.loss = LossKind::kPlainCe;
  EXPECT_THROW(train(spec, Dataset{{}, {"a", "b"}, ""}, vocab_of(ds), {}, tc), ValidationError);
  tc.optimizer = OptimizerKind::kSgd;
  tc.learning_rate = 1e308;
  tc.epochs = 3;
  try {
    train(spec, ds, vocab_of(ds), {}, tc);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
}

TEST(Spec, Validation) {
  ModelSpec s;
  s.arch = Arch::kMlp;
  EXPECT_THROW(s.validate(), ValidationError);
  s = {};
  s.num_classes = 1;
  EXPECT_THROW(s.validate(), ValidationError);
  s = {};
  s.arch = Arch::kFeatureLogReg;
  EXPECT_THROW(s.validate(), ValidationError);
  EXPECT_EQ(describe(ModelSpec{"x", Arch::kMlp, InputMode::kBOnly, {64, 64}, 16, 2, 0}),
            "mlp[64,64]/b_only");
  ModelSpec round{"x", Arch::kMlp, InputMode::kBOnly, {64, 64}, 12, 3, 5};
  EXPECT_EQ(json(round).get<ModelSpec>(), round);
}

class Checkpoint : public ::testing::Test {
 protected:
  std::filesystem::path path = std::filesystem::temp_directory_path() / "debias_model.ckpt";
  void TearDown() override { std::filesystem::remove(path); }
};

TEST_F(Checkpoint, RoundTripIsBitExact) {
  const Dataset ds = testing::random_dataset(14, 100, 3);
  for (const auto& spec : testing::all_arch_specs(3)) {
    Model m = make_model(spec, vocab_of(ds));
    randomize(m, 21);
    save_model(m, path);
    const Model back = load_model(path, spec);
    EXPECT_EQ(back.spec(), m.spec());
    EXPECT_EQ(back.vocab(), m.vocab());
    EXPECT_EQ(back.features(), m.features());
    for (const auto& ex : ds.examples) ASSERT_EQ(forward(back, ex), forward(m, ex)) << spec.name;
  }
}

TEST_F(Checkpoint, TruncatedFileFails) {
  const Dataset ds = testing::random_dataset(15, 10, 2);
  ModelSpec spec{"m", Arch::kMlp, InputMode::kPair, {4}, 3, 2, 0};
  const std::string text = serialize_model(make_model(spec, vocab_of(ds)));
  for (std::size_t cut : {std::size_t{0}, text.size() / 3, text.size() / 2, text.size() - 5}) {
    EXPECT_THROW(deserialize_model(text.substr(0, cut)), ValidationError) << cut;
  }
  EXPECT_THROW(deserialize_model("NOT-A-CHECKPOINT\n"), ValidationError);
  std::string bumped = text;
  bumped.replace(bumped.find("version 1"), 9, "version 9");
  EXPECT_THROW(deserialize_model(bumped), ValidationError);
  EXPECT_THROW(load_model("/nonexistent/model.ckpt"), ValidationError);
}

TEST_F(Checkpoint, ShapeMismatchNamesTheField) {
  const Dataset ds = testing::random_dataset(16, 10, 2);
  ModelSpec small{"m", Arch::kMlp, InputMode::kBOnly, {16}, 8, 2, 0};
  ModelSpec large = small;
  large.hidden_dims = {64, 64};
  save_model(make_model(small, vocab_of(ds)), path);
  try {
    load_model(path, large);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("'hidden'"), std::string::npos) << e.what();
  }
  ModelSpec other_c = small;
  other_c.num_classes = 3;
  EXPECT_THROW(load_model(path, other_c), ValidationError);
}

}  // namespace
}  // namespace debias
