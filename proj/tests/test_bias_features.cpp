#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "debias/bias_features.hpp"
#include "debias/error.hpp"
#include "test_support.hpp"

namespace debias {
namespace {

using Toks = std::vector<std::string>;

// Straight-from-definition predicates, kept deliberately naive.
bool oracle_all_in(const Toks& h, const Toks& p) {
  for (const auto& t : h)
    if (std::find(p.begin(), p.end(), t) == p.end()) return false;
  return true;
}

bool oracle_contiguous(const Toks& h, const Toks& p) {
  if (h.empty()) return true;
  for (std::size_t s = 0; s + h.size() <= p.size(); ++s) {
    bool ok = true;
    for (std::size_t i = 0; i < h.size(); ++i) ok = ok && p[s + i] == h[i];
    if (ok) return true;
  }
  return false;
}

bool oracle_in_order(const Toks& h, const Toks& p) {
  std::size_t i = 0;
  for (const auto& t : p)
    if (i < h.size() && t == h[i]) ++i;
  return i == h.size();
}

double oracle_percent(const Toks& h, const Toks& p) {
  if (h.empty()) return 1.0;
  int hit = 0;
  for (const auto& t : h) hit += std::find(p.begin(), p.end(), t) != p.end();
  return static_cast<double>(hit) / static_cast<double>(h.size());
}

Toks random_tokens(Rng& rng, std::size_t max_len, int alphabet) {
  Toks t(rng.uniform_index(max_len + 1));
  for (auto& s : t) s = std::string(1, static_cast<char>('a' + rng.uniform_index(alphabet)));
  return t;
}

TEST(Predicates, AllInP) {
  EXPECT_TRUE(all_in_p(Toks{"a", "b"}, Toks{"b", "x", "a"}));
  EXPECT_FALSE(all_in_p(Toks{"a", "z"}, Toks{"a"}));
  EXPECT_TRUE(all_in_p(Toks{}, Toks{"a"}));
  EXPECT_TRUE(all_in_p(Toks{"a", "a"}, Toks{"a"}));  // types, not multiplicity
}

TEST(Predicates, HIsSubseq) {
  EXPECT_TRUE(h_is_subseq(Toks{"a", "b"}, Toks{"x", "a", "b", "y"}));
  EXPECT_FALSE(h_is_subseq(Toks{"a", "b"}, Toks{"a", "x", "b"}));
  EXPECT_TRUE(h_is_subseq(Toks{"a"}, Toks{"a"}));
  EXPECT_TRUE(h_is_subseq(Toks{}, Toks{}));
  EXPECT_TRUE(h_is_subseq(Toks{"a", "b"}, Toks{"a", "x", "b"}, SubseqMode::kInOrder));
  EXPECT_FALSE(h_is_subseq(Toks{"b", "a"}, Toks{"a", "x", "b"}, SubseqMode::kInOrder));
}

TEST(Predicates, PercentInP) {
  EXPECT_DOUBLE_EQ(percent_in_p(Toks{"a", "b"}, Toks{"a"}), 0.5);
  EXPECT_DOUBLE_EQ(percent_in_p(Toks{"a", "b", "c", "a"}, Toks{"a", "c"}), 0.75);
  EXPECT_DOUBLE_EQ(percent_in_p(Toks{}, Toks{"a"}), 1.0);
}

TEST(Predicates, NegInH) {
  const auto lex = default_negation_lexicon();
  EXPECT_TRUE(neg_in_h(Toks{"he", "is", "not", "here"}, lex));
  EXPECT_FALSE(neg_in_h(Toks{"he", "is", "here"}, lex));
  EXPECT_TRUE(neg_in_h(Toks{"he", "is", "n't", "here"}, lex));
  EXPECT_EQ(lex, (std::set<std::string>{"no", "not", "none", "nothing", "never", "nobody",
                                         "neither", "nor", "n't"}));
}

TEST(Predicates, SubseqImpliesAllInPOnRandomPairs) {
  Rng rng(17, "subseq-property");
  int subseq_hits = 0;
  for (int i = 0; i < 10000; ++i) {
    const Toks p = random_tokens(rng, 8, 4);
    // Half the hypotheses are slices of the premise so the implication is exercised.
    Toks h;
    if (rng.uniform_index(2) == 0 && !p.empty()) {
      const std::size_t a = rng.uniform_index(p.size());
      const std::size_t b = a + rng.uniform_index(p.size() - a + 1);
      h.assign(p.begin() + static_cast<long>(a), p.begin() + static_cast<long>(b));
    } else {
      h = random_tokens(rng, 4, 4);
    }
    for (auto mode : {SubseqMode::kContiguous, SubseqMode::kInOrder}) {
      if (h_is_subseq(h, p, mode)) {
        ++subseq_hits;
        ASSERT_TRUE(all_in_p(h, p));
      }
    }
    const bool all = all_in_p(h, p);
    ASSERT_EQ(percent_in_p(h, p) == 1.0, all);
  }
  EXPECT_GT(subseq_hits, 1000);
}

TEST(Predicates, MatchBruteForceOracle) {
  Rng rng(23, "oracle");
  for (int i = 0; i < 2000; ++i) {
    const Toks p = random_tokens(rng, 7, 5);
    const Toks h = random_tokens(rng, 4, 5);
    ASSERT_EQ(all_in_p(h, p), oracle_all_in(h, p));
    ASSERT_EQ(h_is_subseq(h, p), oracle_contiguous(h, p));
    ASSERT_EQ(h_is_subseq(h, p, SubseqMode::kInOrder), oracle_in_order(h, p));
    ASSERT_DOUBLE_EQ(percent_in_p(h, p), oracle_percent(h, p));
  }
}

TEST(FeatureVector, Examples) {
  const FeatureConfig cfg;
  EXPECT_EQ(cfg.names(),
            (Toks{"all_in_p", "h_is_subseq", "percent_in_p", "neg_in_h", "length_ratio"}));
  Example ex{"e", "a b", "a b", 0};
  EXPECT_EQ(feature_vector(ex, cfg), (std::vector<double>{1, 1, 1.0, 0, 1.0}));
  ex = {"e", "a", "no", 0};
  EXPECT_EQ(feature_vector(ex, cfg), (std::vector<double>{0, 0, 0.0, 1, 1.0}));
  ex = {"e", "...", "a b", 0};  // empty premise after tokenizing
  EXPECT_DOUBLE_EQ(feature_vector(ex, cfg)[4], 4.0);
}

TEST(FeatureVector, MatchesIndependentPredicatesOn100Pairs) {
  FeatureConfig cfg;
  cfg.bias_of_interest = BiasFeatureSpec{"neg", BiasFeatureKind::kNegInH, 1};
  ASSERT_EQ(cfg.dimension(), 6u);
  const auto lex = default_negation_lexicon();
  Rng rng(29, "fv");
  const Toks words = {"a", "b", "c", "not", "never", "d"};
  for (int i = 0; i < 100; ++i) {
    Toks p(1 + rng.uniform_index(6)), h(rng.uniform_index(4));
    for (auto& t : p) t = words[rng.uniform_index(words.size())];
    for (auto& t : h) t = words[rng.uniform_index(words.size())];
    Example ex{"e", "", "", 0};
    for (const auto& t : p) ex.text_a += t + " ";
    for (const auto& t : h) *ex.text_b += t + " ";
    bool neg = false;
    for (const auto& t : h) neg = neg || lex.count(t);
    const double ratio = std::min(4.0, static_cast<double>(h.size()) / static_cast<double>(p.size()));
    const std::vector<double> expect = {double(oracle_all_in(h, p)), double(oracle_contiguous(h, p)),
                                        oracle_percent(h, p), double(neg), ratio, double(neg)};
    ASSERT_EQ(feature_vector(ex, cfg), expect) << i;
  }
}

TEST(FeatureVector, SubsetSelection) {
  FeatureConfig cfg;
  cfg.all_in_p = cfg.h_is_subseq = cfg.length_ratio = false;
  EXPECT_EQ(cfg.names(), (Toks{"percent_in_p", "neg_in_h"}));
  const Example ex{"e", "a", "a not", 0};
  EXPECT_EQ(feature_vector(ex, cfg), (std::vector<double>{0.5, 1.0}));
}

TEST(Planted, OneHotAndXor) {
  BiasFeatureSpec one{"lex", BiasFeatureKind::kPlanted, 0, {}, PlantedRule{PlantedRule::Combine::kOneHot, PlantedRule::Field::kB, {"q0", "q1", "q2"}}};
  const FeatureConfig cfg;
  EXPECT_EQ(bias_label(Example{"e", "w", "x q2", 0}, one, cfg), 2);
  EXPECT_EQ(bias_label(Example{"e", "q1", "x", 0}, one, cfg), std::nullopt);  // wrong field
  EXPECT_FALSE(has_feature(Example{"e", "w", "x", 0}, one, cfg));

  BiasFeatureSpec x{"xor", BiasFeatureKind::kPlanted, 0, {}, PlantedRule{PlantedRule::Combine::kXor, PlantedRule::Field::kB, {"x0", "x1", "y0", "y1"}}};
  EXPECT_EQ(bias_label(Example{"e", "w", "x0 y0", 0}, x, cfg), 0);
  EXPECT_EQ(bias_label(Example{"e", "w", "x1 y0", 0}, x, cfg), 1);
  EXPECT_EQ(bias_label(Example{"e", "w", "y1 x0", 0}, x, cfg), 1);
  EXPECT_EQ(bias_label(Example{"e", "w", "x1 y1", 0}, x, cfg), 0);
  EXPECT_EQ(bias_label(Example{"e", "w", "x1", 0}, x, cfg), std::nullopt);
  EXPECT_NO_THROW(x.validate(2));
}

TEST(Spec, Validation) {
  BiasFeatureSpec s{"p", BiasFeatureKind::kPercentInP, 0, 0.8, {}};
  EXPECT_NO_THROW(s.validate(3));
  s.threshold = 0.0;
  EXPECT_THROW(s.validate(3), ValidationError);
  s.threshold = 1.5;
  EXPECT_THROW(s.validate(3), ValidationError);
  BiasFeatureSpec t{"a", BiasFeatureKind::kAllInP, 3, {}, {}};
  EXPECT_THROW(t.validate(3), ValidationError);
  BiasFeatureSpec single{"claim", BiasFeatureKind::kSingleInputA, 0, {}, {}};
  EXPECT_FALSE(single.is_predicate());
  EXPECT_THROW(has_feature(Example{"e", "a", "b", 0}, single, FeatureConfig{}), ValidationError);
  for (auto k : {BiasFeatureKind::kAllInP, BiasFeatureKind::kHIsSubseq, BiasFeatureKind::kPercentInP,
                 BiasFeatureKind::kNegInH, BiasFeatureKind::kSingleInputA,
                 BiasFeatureKind::kSingleInputB, BiasFeatureKind::kPlanted})
    EXPECT_EQ(parse_bias_feature_kind(to_string(k)), k);
}

TEST(Lexicon, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "debias_lexicon.txt";
  {
    std::ofstream out(path);
    out << "# comment\nnope\n\nnah\n";
  }
  EXPECT_EQ(load_negation_lexicon(path.string()), (std::set<std::string>{"nope", "nah"}));
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace debias
