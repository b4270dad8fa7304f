#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "debias/bias_features.hpp"
#include "debias/corpus.hpp"

namespace debias {

enum class SynthBiasKind { kLexical, kXor, kPairOverlap };

struct SynthBias {
  SynthBiasKind kind = SynthBiasKind::kLexical;
  double strength = 0.9;  // rho

  friend bool operator==(const SynthBias&, const SynthBias&) = default;
};

// Premise (text_a) = one class signal token among filler; hypothesis (text_b)
// = filler plus whatever bias pattern is planted. With several biases each
// example is assigned to exactly one of them (round robin), so the bias
// patterns never co-occur.
struct SynthConfig {
  int num_classes = 3;
  int train_size = 3000;
  int dev_size = 600;   // dev-easy examples, and again dev-challenge examples
  int test_size = 600;  // test-challenge examples
  int vocab_size = 200;
  int seq_len = 8;      // premise tokens
  int hyp_len = 4;      // hypothesis tokens
  int signal_tokens_per_class = 4;
  // Fraction of training examples whose premise carries the class signal.
  // Dev and test examples always carry it.
  double signal_rate = 1.0;
  std::vector<SynthBias> biases = {SynthBias{}};
  std::uint64_t seed = 0;

  // Throws ValidationError on an infeasible configuration.
  void validate() const;
  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

struct SynthOutput {
  Dataset train;
  Dataset dev_pool;       // dev_easy and dev_challenge interleaved
  Dataset dev_easy;       // train distribution
  Dataset dev_challenge;  // union over biases
  Dataset test_challenge;
  std::vector<Dataset> dev_challenge_by_bias;
  std::vector<Dataset> test_challenge_by_bias;
  std::vector<BiasFeatureSpec> bias_specs;  // one per configured bias
};

// Deterministic given config.seed.
//   train / dev_easy: with probability rho the bias pattern of the example's
//     own label is planted, otherwise no pattern.
//   *_challenge: the pattern of a uniformly random other class is planted.
//   LEXICAL: one token per class. XOR (C = 2): slot tokens x0/x1 and y0/y1,
//     class = [x1] xor [y1]. PAIR_OVERLAP: hypothesis drawn from premise
//     filler (all_in_p) for class 0; other classes never overlap fully in
//     train, and challenge examples are non-zero classes with all_in_p.
SynthOutput generate(const SynthConfig& config);

// Fraction of feature-positive examples whose label equals the label the
// pattern points to. Throws ValidationError without feature-positive examples.
double bias_label_correlation(const Dataset& dataset, const BiasFeatureSpec& spec,
                              const FeatureConfig& cfg = {});

std::string to_string(SynthBiasKind kind);
SynthBiasKind parse_synth_bias_kind(const std::string& s);

}  // namespace debias
