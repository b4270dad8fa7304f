#include "debias/synth.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "debias/error.hpp"
#include "debias/rng.hpp"

namespace debias {

namespace {

enum class Plant { kNone, kMatch, kAnti };

struct Inventory {
  std::vector<std::vector<std::string>> bias_tokens;  // per bias
  std::vector<std::vector<std::string>> signal;       // per class
  std::vector<std::string> filler;
  bool has_overlap_bias = false;
};

int bias_token_count(const SynthBias& b, int num_classes) {
  switch (b.kind) {
    case SynthBiasKind::kLexical: return num_classes;
    case SynthBiasKind::kXor: return 4;
    case SynthBiasKind::kPairOverlap: return 0;
  }
  return 0;
}

int filler_count(const SynthConfig& c) {
  int used = c.num_classes * c.signal_tokens_per_class;
  for (const auto& b : c.biases) used += bias_token_count(b, c.num_classes);
  return c.vocab_size - used;
}

Inventory make_inventory(const SynthConfig& c) {
  Inventory inv;
  for (std::size_t k = 0; k < c.biases.size(); ++k) {
    std::vector<std::string> toks;
    switch (c.biases[k].kind) {
      case SynthBiasKind::kLexical:
        for (int y = 0; y < c.num_classes; ++y) toks.push_back(fmt::format("b{}c{}", k, y));
        break;
      case SynthBiasKind::kXor:
        toks = {fmt::format("b{}x0", k), fmt::format("b{}x1", k), fmt::format("b{}y0", k),
                fmt::format("b{}y1", k)};
        break;
      case SynthBiasKind::kPairOverlap: inv.has_overlap_bias = true; break;
    }
    inv.bias_tokens.push_back(std::move(toks));
  }
  for (int y = 0; y < c.num_classes; ++y) {
    std::vector<std::string> toks;
    for (int j = 0; j < c.signal_tokens_per_class; ++j) toks.push_back(fmt::format("s{}n{}", y, j));
    inv.signal.push_back(std::move(toks));
  }
  for (int i = 0; i < filler_count(c); ++i) inv.filler.push_back(fmt::format("w{}", i));
  return inv;
}

class Generator {
 public:
  Generator(const SynthConfig& c, const Inventory& inv, Rng& rng) : c_(c), inv_(inv), rng_(rng) {}

  // `bias` < 0 means no bias is assigned.
  Example make(std::string id, LabelId y, int bias, Plant plant, bool with_signal = true) {
    std::vector<std::string> prem(c_.seq_len);
    for (auto& t : prem) t = filler();
    const std::size_t signal_pos = rng_.uniform_index(prem.size());
    const auto& sig = inv_.signal[y];
    if (with_signal) prem[signal_pos] = sig[rng_.uniform_index(sig.size())];

    std::vector<std::string> hyp(c_.hyp_len);
    for (auto& t : hyp) t = filler();

    bool overlap_planted = false;
    if (bias >= 0 && plant != Plant::kNone) {
      const SynthBias& b = c_.biases[bias];
      const auto& toks = inv_.bias_tokens[bias];
      if (b.kind == SynthBiasKind::kPairOverlap) {
        for (auto& t : hyp) {
          std::size_t p;
          do {
            p = rng_.uniform_index(prem.size());
          } while (p == signal_pos);
          t = prem[p];
        }
        overlap_planted = true;
      } else {
        const LabelId target = plant == Plant::kMatch ? y : other_label(y);
        if (b.kind == SynthBiasKind::kLexical) {
          hyp[rng_.uniform_index(hyp.size())] = toks[target];
        } else {
          const int u = static_cast<int>(rng_.uniform_index(2));
          const int v = u ^ target;
          const std::size_t p1 = rng_.uniform_index(hyp.size());
          std::size_t p2 = rng_.uniform_index(hyp.size() - 1);
          if (p2 >= p1) ++p2;
          hyp[p1] = toks[u];
          hyp[p2] = toks[2 + v];
        }
      }
    }
    if (inv_.has_overlap_bias && !overlap_planted) break_overlap(prem, hyp);

    Example ex;
    ex.id = std::move(id);
    ex.text_a = fmt::format("{}", fmt::join(prem, " "));
    ex.text_b = fmt::format("{}", fmt::join(hyp, " "));
    ex.label = y;
    return ex;
  }

 private:
  const std::string& filler() { return inv_.filler[rng_.uniform_index(inv_.filler.size())]; }

  LabelId other_label(LabelId y) {
    const auto c = static_cast<std::uint64_t>(c_.num_classes);
    return static_cast<LabelId>((y + 1 + rng_.uniform_index(c - 1)) % c);
  }

  // Makes sure the hypothesis has a token the premise lacks.
  void break_overlap(const std::vector<std::string>& prem, std::vector<std::string>& hyp) {
    std::unordered_set<std::string> in_prem(prem.begin(), prem.end());
    const bool all_in = std::all_of(hyp.begin(), hyp.end(),
                                    [&](const std::string& t) { return in_prem.contains(t); });
    if (!all_in) return;
    std::string fresh;
    do {
      fresh = filler();
    } while (in_prem.contains(fresh));
    hyp[rng_.uniform_index(hyp.size())] = fresh;
  }

  const SynthConfig& c_;
  const Inventory& inv_;
  Rng& rng_;
};

// Balanced labels: i mod C over `classes`, shuffled.
std::vector<LabelId> balanced_labels(int n, const std::vector<LabelId>& classes, Rng& rng) {
  std::vector<LabelId> out(n);
  for (int i = 0; i < n; ++i) out[i] = classes[i % classes.size()];
  rng.shuffle(std::span<LabelId>(out));
  return out;
}

std::vector<int> round_robin(int n, int k, Rng& rng) {
  std::vector<int> out(n, -1);
  if (k == 0) return out;
  for (int i = 0; i < n; ++i) out[i] = i % k;
  rng.shuffle(std::span<int>(out));
  return out;
}

std::vector<LabelId> all_classes(int c) {
  std::vector<LabelId> v(c);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

Dataset empty_like(const SynthConfig& c, std::string split) {
  Dataset ds;
  for (int y = 0; y < c.num_classes; ++y) ds.label_names.push_back(fmt::format("c{}", y));
  ds.provenance = fmt::format("synth seed={} split={}", c.seed, split);
  return ds;
}

// Plant mode for a train-distribution example.
Plant easy_plant(const SynthBias& b, LabelId y, Rng& rng) {
  if (b.kind == SynthBiasKind::kPairOverlap && y != 0) return Plant::kNone;
  return rng.bernoulli(b.strength) ? Plant::kMatch : Plant::kNone;
}

// Labels for challenge examples of one bias kind.
std::vector<LabelId> challenge_classes(const SynthBias& b, int num_classes) {
  auto classes = all_classes(num_classes);
  if (b.kind == SynthBiasKind::kPairOverlap) classes.erase(classes.begin());
  return classes;
}

struct Drawn {
  Example ex;
  int bias;
};

// Challenge examples: bias assigned round robin, labels balanced per bias.
std::vector<Drawn> draw_challenge(const SynthConfig& c, Generator& gen, Rng& rng, int n,
                                  const std::string& prefix) {
  const int k = static_cast<int>(c.biases.size());
  std::vector<Drawn> out;
  if (k == 0) return out;
  std::vector<int> assign = round_robin(n, k, rng);
  std::vector<std::vector<LabelId>> labels(k);
  for (int b = 0; b < k; ++b) {
    const int count = static_cast<int>(std::count(assign.begin(), assign.end(), b));
    labels[b] = balanced_labels(count, challenge_classes(c.biases[b], c.num_classes), rng);
  }
  std::vector<std::size_t> cursor(k, 0);
  for (int i = 0; i < n; ++i) {
    const int b = assign[i];
    const LabelId y = labels[b][cursor[b]++];
    out.push_back({gen.make(fmt::format("{}-{}", prefix, i), y, b, Plant::kAnti), b});
  }
  return out;
}

std::vector<Drawn> draw_easy(const SynthConfig& c, Generator& gen, Rng& rng, int n,
                             const std::string& prefix, double signal_rate = 1.0) {
  const int k = static_cast<int>(c.biases.size());
  std::vector<LabelId> labels = balanced_labels(n, all_classes(c.num_classes), rng);
  std::vector<int> assign = round_robin(n, k, rng);
  std::vector<Drawn> out;
  for (int i = 0; i < n; ++i) {
    const int b = assign[i];
    const Plant plant = b >= 0 ? easy_plant(c.biases[b], labels[i], rng) : Plant::kNone;
    const bool with_signal = signal_rate >= 1.0 || rng.bernoulli(signal_rate);
    out.push_back({gen.make(fmt::format("{}-{}", prefix, i), labels[i], b, plant, with_signal), b});
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const std::string& why) {
    throw ValidationError("infeasible synth config: " + why);
  };
  if (num_classes < 2) fail(fmt::format("num_classes = {} (need >= 2)", num_classes));
  if (train_size < 1 || dev_size < 1 || test_size < 1) fail("split sizes must be >= 1");
  if (seq_len < 4) fail(fmt::format("seq_len = {} (need >= 4)", seq_len));
  if (hyp_len < 2) fail(fmt::format("hyp_len = {} (need >= 2)", hyp_len));
  if (signal_tokens_per_class < 1) fail("signal_tokens_per_class must be >= 1");
  if (!(signal_rate > 0.0 && signal_rate <= 1.0)) {
    fail(fmt::format("signal_rate = {} (need 0 < rate <= 1)", signal_rate));
  }
  if (vocab_size <= 2 * num_classes + 2) {
    fail(fmt::format("vocab_size = {} (need > 2*C + 2 = {})", vocab_size, 2 * num_classes + 2));
  }
  int overlap = 0;
  for (const SynthBias& b : biases) {
    if (!(b.strength >= 0.0 && b.strength <= 1.0)) {
      fail(fmt::format("bias strength {} outside [0, 1]", b.strength));
    }
    if (b.kind == SynthBiasKind::kXor && num_classes != 2) fail("xor bias needs num_classes = 2");
    if (b.kind == SynthBiasKind::kPairOverlap) ++overlap;
  }
  if (overlap > 1) fail("at most one pair_overlap bias");
  const int fillers = filler_count(*this);
  if (fillers < 2) fail(fmt::format("vocab_size leaves {} filler tokens (need >= 2)", fillers));
  if (overlap && fillers < seq_len) {
    fail(fmt::format("pair_overlap needs at least seq_len = {} filler tokens, has {}", seq_len,
                     fillers));
  }
}

SynthOutput generate(const SynthConfig& config) {
  config.validate();
  const Inventory inv = make_inventory(config);
  SynthOutput out;

  for (std::size_t k = 0; k < config.biases.size(); ++k) {
    BiasFeatureSpec spec;
    switch (config.biases[k].kind) {
      case SynthBiasKind::kLexical:
      case SynthBiasKind::kXor: {
        const bool xor_rule = config.biases[k].kind == SynthBiasKind::kXor;
        spec.name = fmt::format("{}{}", xor_rule ? "xor" : "lexical", k);
        spec.kind = BiasFeatureKind::kPlanted;
        spec.planted = PlantedRule{
            xor_rule ? PlantedRule::Combine::kXor : PlantedRule::Combine::kOneHot,
            PlantedRule::Field::kB, inv.bias_tokens[k]};
        break;
      }
      case SynthBiasKind::kPairOverlap:
        spec.name = "all_in_p";
        spec.kind = BiasFeatureKind::kAllInP;
        spec.bias_target_label = 0;
        break;
    }
    out.bias_specs.push_back(std::move(spec));
  }

  {
    Rng rng(config.seed, "train");
    Generator gen(config, inv, rng);
    out.train = empty_like(config, "train");
    for (auto& d : draw_easy(config, gen, rng, config.train_size, "train", config.signal_rate)) {
      out.train.examples.push_back(std::move(d.ex));
    }
  }

  const std::size_t nb = config.biases.size();
  {
    Rng rng(config.seed, "dev");
    Generator gen(config, inv, rng);
    std::vector<Drawn> easy = draw_easy(config, gen, rng, config.dev_size, "dev-easy");
    std::vector<Drawn> hard = draw_challenge(config, gen, rng, config.dev_size, "dev-challenge");
    // Pool entries: (is_challenge, drawn), shuffled together.
    std::vector<std::pair<bool, Drawn>> pool;
    for (auto& d : easy) pool.emplace_back(false, std::move(d));
    for (auto& d : hard) pool.emplace_back(true, std::move(d));
    rng.shuffle(std::span<std::pair<bool, Drawn>>(pool));

    out.dev_pool = empty_like(config, "dev");
    out.dev_easy = empty_like(config, "dev_easy");
    out.dev_challenge = empty_like(config, "dev_challenge");
    out.dev_challenge_by_bias.assign(nb, empty_like(config, "dev_challenge"));
    for (std::size_t k = 0; k < nb; ++k) {
      out.dev_challenge_by_bias[k].provenance += fmt::format(" bias={}", k);
    }
    for (std::size_t i = 0; i < pool.size(); ++i) {
      auto& [is_challenge, d] = pool[i];
      d.ex.id = fmt::format("dev-{}", i);
      out.dev_pool.examples.push_back(d.ex);
      if (is_challenge) {
        out.dev_challenge.examples.push_back(d.ex);
        out.dev_challenge_by_bias[d.bias].examples.push_back(d.ex);
      } else {
        out.dev_easy.examples.push_back(d.ex);
      }
    }
  }

  {
    Rng rng(config.seed, "test");
    Generator gen(config, inv, rng);
    out.test_challenge = empty_like(config, "test_challenge");
    out.test_challenge_by_bias.assign(nb, empty_like(config, "test_challenge"));
    for (auto& d : draw_challenge(config, gen, rng, config.test_size, "test")) {
      out.test_challenge_by_bias[d.bias].examples.push_back(d.ex);
      out.test_challenge.examples.push_back(std::move(d.ex));
    }
  }
  return out;
}

double bias_label_correlation(const Dataset& dataset, const BiasFeatureSpec& spec,
                              const FeatureConfig& cfg) {
  std::size_t positive = 0, agree = 0;
  for (const Example& ex : dataset.examples) {
    if (auto b = bias_label(ex, spec, cfg)) {
      ++positive;
      agree += *b == ex.label;
    }
  }
  if (positive == 0) {
    throw ValidationError(fmt::format("feature '{}' never occurs in '{}'", spec.name,
                                      dataset.provenance));
  }
  return static_cast<double>(agree) / static_cast<double>(positive);
}

std::string to_string(SynthBiasKind kind) {
  switch (kind) {
    case SynthBiasKind::kLexical: return "lexical";
    case SynthBiasKind::kXor: return "xor";
    case SynthBiasKind::kPairOverlap: return "pair_overlap";
  }
  return "?";
}

SynthBiasKind parse_synth_bias_kind(const std::string& s) {
  for (auto k : {SynthBiasKind::kLexical, SynthBiasKind::kXor, SynthBiasKind::kPairOverlap}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError(fmt::format("unknown synth bias kind '{}'", s));
}

}  // namespace debias
