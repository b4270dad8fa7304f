#include "debias/json_io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "debias/error.hpp"

namespace debias {

void to_json(json& j, const ModelSpec& spec) {
  j = json{{"name", spec.name},
           {"arch", to_string(spec.arch)},
           {"input", to_string(spec.input_mode)},
           {"hidden", spec.hidden_dims},
           {"embed_dim", spec.embed_dim},
           {"num_classes", spec.num_classes},
           {"init_seed", spec.init_seed}};
}

void from_json(const json& j, ModelSpec& spec) {
  spec.arch = parse_arch(get_required<std::string>(j, "arch"));
  spec.input_mode = parse_input_mode(get_or<std::string>(
      j, "input", spec.arch == Arch::kFeatureLogReg ? "features" : "pair"));
  spec.hidden_dims = get_or<std::vector<int>>(j, "hidden", {});
  spec.embed_dim = get_or<int>(j, "embed_dim", 16);
  spec.num_classes = get_or<int>(j, "num_classes", 2);
  spec.init_seed = get_or<std::uint64_t>(j, "init_seed", 0);
  spec.name = get_or<std::string>(j, "name", describe(spec));
}

namespace {

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw ValidationError(fmt::format("unknown optimizer '{}'", s));
}

std::string combine_name(PlantedRule::Combine c) {
  return c == PlantedRule::Combine::kXor ? "xor" : "one_hot";
}

std::string field_name(PlantedRule::Field f) {
  switch (f) {
    case PlantedRule::Field::kA: return "a";
    case PlantedRule::Field::kB: return "b";
    case PlantedRule::Field::kAny: return "any";
  }
  return "?";
}

}  // namespace

void to_json(json& j, const TrainConfig& cfg) {
  j = json{{"epochs", cfg.epochs},
           {"batch_size", cfg.batch_size},
           {"learning_rate", cfg.learning_rate},
           {"optimizer", optimizer_name(cfg.optimizer)},
           {"seed", cfg.seed},
           {"loss", to_string(cfg.loss)}};
}

void from_json(const json& j, TrainConfig& cfg) {
  TrainConfig d;
  cfg.epochs = get_or<int>(j, "epochs", d.epochs);
  cfg.batch_size = get_or<int>(j, "batch_size", d.batch_size);
  cfg.learning_rate = get_or<double>(j, "learning_rate", d.learning_rate);
  cfg.optimizer = parse_optimizer(get_or<std::string>(j, "optimizer", "adam"));
  cfg.seed = get_or<std::uint64_t>(j, "seed", d.seed);
  cfg.loss = parse_loss_kind(get_or<std::string>(j, "loss", "plain_ce"));
  cfg.validate();
}

void to_json(json& j, const PlantedRule& rule) {
  j = json{{"combine", combine_name(rule.combine)},
           {"field", field_name(rule.field)},
           {"tokens", rule.tokens}};
}

void from_json(const json& j, PlantedRule& rule) {
  const auto combine = get_or<std::string>(j, "combine", "one_hot");
  if (combine == "one_hot") {
    rule.combine = PlantedRule::Combine::kOneHot;
  } else if (combine == "xor") {
    rule.combine = PlantedRule::Combine::kXor;
  } else {
    throw ValidationError(fmt::format("unknown planted combine '{}'", combine));
  }
  const auto field = get_or<std::string>(j, "field", "b");
  if (field == "a") {
    rule.field = PlantedRule::Field::kA;
  } else if (field == "b") {
    rule.field = PlantedRule::Field::kB;
  } else if (field == "any") {
    rule.field = PlantedRule::Field::kAny;
  } else {
    throw ValidationError(fmt::format("unknown planted field '{}'", field));
  }
  rule.tokens = get_required<std::vector<std::string>>(j, "tokens");
}

void to_json(json& j, const BiasFeatureSpec& spec) {
  j = json{{"name", spec.name}, {"kind", to_string(spec.kind)}, {"target", spec.bias_target_label}};
  if (spec.threshold) j["threshold"] = *spec.threshold;
  if (spec.planted) j["planted"] = *spec.planted;
}

BiasFeatureSpec parse_bias_feature(const json& j, const std::vector<std::string>& label_names) {
  BiasFeatureSpec spec;
  spec.kind = parse_bias_feature_kind(get_required<std::string>(j, "kind"));
  spec.name = get_or<std::string>(j, "name", to_string(spec.kind));
  if (auto it = j.find("target"); it != j.end()) {
    if (it->is_number_integer()) {
      spec.bias_target_label = it->get<int>();
    } else if (it->is_string()) {
      const auto name = it->get<std::string>();
      auto pos = std::find(label_names.begin(), label_names.end(), name);
      if (pos == label_names.end()) {
        throw ValidationError(fmt::format("feature '{}': unknown target label '{}'", spec.name, name));
      }
      spec.bias_target_label = static_cast<LabelId>(pos - label_names.begin());
    } else {
      throw ValidationError(fmt::format("feature '{}': bad target", spec.name));
    }
  }
  if (auto it = j.find("threshold"); it != j.end() && !it->is_null()) {
    spec.threshold = it->get<double>();
  }
  if (auto it = j.find("planted"); it != j.end() && !it->is_null()) {
    spec.planted = it->get<PlantedRule>();
  }
  return spec;
}

void to_json(json& j, const FeatureConfig& cfg) {
  j = json{{"all_in_p", cfg.all_in_p},
           {"h_is_subseq", cfg.h_is_subseq},
           {"percent_in_p", cfg.percent_in_p},
           {"neg_in_h", cfg.neg_in_h},
           {"length_ratio", cfg.length_ratio},
           {"negation_lexicon", cfg.negation_lexicon},
           {"subseq_mode", cfg.subseq_mode == SubseqMode::kContiguous ? "contiguous" : "in_order"}};
  j["bias_of_interest"] = cfg.bias_of_interest ? json(*cfg.bias_of_interest) : json(nullptr);
}

void from_json(const json& j, FeatureConfig& cfg) {
  FeatureConfig d;
  cfg.all_in_p = get_or<bool>(j, "all_in_p", d.all_in_p);
  cfg.h_is_subseq = get_or<bool>(j, "h_is_subseq", d.h_is_subseq);
  cfg.percent_in_p = get_or<bool>(j, "percent_in_p", d.percent_in_p);
  cfg.neg_in_h = get_or<bool>(j, "neg_in_h", d.neg_in_h);
  cfg.length_ratio = get_or<bool>(j, "length_ratio", d.length_ratio);
  if (j.contains("negation_lexicon_file")) {
    cfg.negation_lexicon = load_negation_lexicon(get_required<std::string>(j, "negation_lexicon_file"));
  } else {
    cfg.negation_lexicon = get_or<std::set<std::string>>(j, "negation_lexicon", d.negation_lexicon);
  }
  const auto mode = get_or<std::string>(j, "subseq_mode", "contiguous");
  if (mode == "contiguous") {
    cfg.subseq_mode = SubseqMode::kContiguous;
  } else if (mode == "in_order") {
    cfg.subseq_mode = SubseqMode::kInOrder;
  } else {
    throw ValidationError(fmt::format("unknown subseq_mode '{}'", mode));
  }
  if (auto it = j.find("bias_of_interest"); it != j.end() && !it->is_null()) {
    cfg.bias_of_interest = parse_bias_feature(*it);
  } else {
    cfg.bias_of_interest.reset();
  }
}

void to_json(json& j, const Schema& s) {
  j = json{{"id", s.id_field},         {"text_a", s.text_a_field},
           {"text_b", s.text_b_field}, {"text_b_optional", s.text_b_optional},
           {"label", s.label_field},   {"label_names", s.label_names}};
}

void from_json(const json& j, Schema& s) {
  Schema d;
  s.id_field = get_or<std::string>(j, "id", d.id_field);
  s.text_a_field = get_or<std::string>(j, "text_a", d.text_a_field);
  s.text_b_field = get_or<std::string>(j, "text_b", d.text_b_field);
  s.text_b_optional = get_or<bool>(j, "text_b_optional", d.text_b_optional);
  s.label_field = get_or<std::string>(j, "label", d.label_field);
  s.label_names = get_required<std::vector<std::string>>(j, "label_names");
}

void to_json(json& j, const SynthBias& b) {
  j = {{"kind", to_string(b.kind)}, {"strength", b.strength}};
}

void from_json(const json& j, SynthBias& b) {
  b.kind = parse_synth_bias_kind(get_or<std::string>(j, "kind", "lexical"));
  b.strength = get_or(j, "strength", SynthBias{}.strength);
}

void to_json(json& j, const SynthConfig& c) {
  j = {{"num_classes", c.num_classes},
       {"train_size", c.train_size},
       {"dev_size", c.dev_size},
       {"test_size", c.test_size},
       {"vocab_size", c.vocab_size},
       {"seq_len", c.seq_len},
       {"hyp_len", c.hyp_len},
       {"signal_tokens_per_class", c.signal_tokens_per_class},
       {"signal_rate", c.signal_rate},
       {"biases", c.biases},
       {"seed", c.seed}};
}

void from_json(const json& j, SynthConfig& c) {
  const SynthConfig d;
  c.num_classes = get_or(j, "num_classes", d.num_classes);
  c.train_size = get_or(j, "train_size", d.train_size);
  c.dev_size = get_or(j, "dev_size", d.dev_size);
  c.test_size = get_or(j, "test_size", d.test_size);
  c.vocab_size = get_or(j, "vocab_size", d.vocab_size);
  c.seq_len = get_or(j, "seq_len", d.seq_len);
  c.hyp_len = get_or(j, "hyp_len", d.hyp_len);
  c.signal_tokens_per_class = get_or(j, "signal_tokens_per_class", d.signal_tokens_per_class);
  c.signal_rate = get_or(j, "signal_rate", d.signal_rate);
  c.biases = get_or(j, "biases", d.biases);
  c.seed = get_or(j, "seed", d.seed);
  c.validate();
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open '{}'", path));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("'{}': malformed JSON: {}", path, e.what()));
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ValidationError(fmt::format("cannot write '{}'", path));
  out << j.dump(2) << '\n';
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

}  // namespace debias
