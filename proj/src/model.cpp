#include "debias/model.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "debias/error.hpp"
#include "debias/network.hpp"
#include "debias/rng.hpp"

namespace debias {

void ModelSpec::validate() const {
  if (num_classes < 2) {
    throw ValidationError(fmt::format("model '{}': num_classes must be >= 2", name));
  }
  if (arch == Arch::kFeatureLogReg && input_mode != InputMode::kFeatures) {
    throw ValidationError(fmt::format("model '{}': feature_logreg needs input 'features'", name));
  }
  if (arch == Arch::kBowLinear && input_mode == InputMode::kFeatures) {
    throw ValidationError(fmt::format("model '{}': bow_linear cannot read 'features'", name));
  }
  if (arch == Arch::kMlp) {
    if (hidden_dims.empty()) {
      throw ValidationError(fmt::format("model '{}': mlp needs hidden_dims", name));
    }
    for (int h : hidden_dims) {
      if (h < 1) throw ValidationError(fmt::format("model '{}': hidden dim {} < 1", name, h));
    }
  }
  if (input_mode != InputMode::kFeatures && embed_dim < 1) {
    throw ValidationError(fmt::format("model '{}': embed_dim must be >= 1", name));
  }
}

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::kFeatureLogReg: return "feature_logreg";
    case Arch::kBowLinear: return "bow_linear";
    case Arch::kMlp: return "mlp";
  }
  return "?";
}

std::string to_string(InputMode mode) {
  switch (mode) {
    case InputMode::kPair: return "pair";
    case InputMode::kAOnly: return "a_only";
    case InputMode::kBOnly: return "b_only";
    case InputMode::kFeatures: return "features";
  }
  return "?";
}

Arch parse_arch(const std::string& s) {
  for (auto a : {Arch::kFeatureLogReg, Arch::kBowLinear, Arch::kMlp}) {
    if (to_string(a) == s) return a;
  }
  throw ValidationError(fmt::format("unknown arch '{}'", s));
}

InputMode parse_input_mode(const std::string& s) {
  for (auto m : {InputMode::kPair, InputMode::kAOnly, InputMode::kBOnly, InputMode::kFeatures}) {
    if (to_string(m) == s) return m;
  }
  throw ValidationError(fmt::format("unknown input mode '{}'", s));
}

std::string describe(const ModelSpec& spec) {
  std::string out = to_string(spec.arch);
  if (spec.arch == Arch::kMlp) out += fmt::format("[{}]", fmt::join(spec.hidden_dims, ","));
  return out + "/" + to_string(spec.input_mode);
}

Model::Model(ModelSpec spec, std::shared_ptr<const Vocab> vocab, FeatureConfig features)
    : spec_(std::move(spec)), vocab_(std::move(vocab)), features_(std::move(features)) {
  spec_.validate();
  if (!vocab_) vocab_ = std::make_shared<const Vocab>();

  std::size_t offset = 0;
  auto add_slice = [&](std::string name, std::size_t rows, std::size_t cols) {
    slices_.push_back({std::move(name), offset, rows, cols});
    offset += rows * cols;
    return slices_.back();
  };

  if (spec_.input_mode == InputMode::kFeatures) {
    input_dim_ = features_.dimension();
    if (input_dim_ == 0) {
      throw ValidationError(fmt::format("model '{}': feature configuration is empty", spec_.name));
    }
  } else {
    const auto dim = static_cast<std::size_t>(spec_.embed_dim);
    embedding_ = add_slice("embedding", vocab_->size(), dim);
    input_dim_ = spec_.input_mode == InputMode::kPair ? 2 * dim : dim;
  }

  std::size_t in = input_dim_;
  if (spec_.arch == Arch::kMlp) {
    for (std::size_t i = 0; i < spec_.hidden_dims.size(); ++i) {
      const auto out = static_cast<std::size_t>(spec_.hidden_dims[i]);
      DenseLayout layer;
      layer.weight = add_slice(fmt::format("hidden{}.weight", i), out, in).offset;
      layer.bias = add_slice(fmt::format("hidden{}.bias", i), out, 1).offset;
      layer.in = in;
      layer.out = out;
      layers_.push_back(layer);
      in = out;
    }
  }
  const auto classes = static_cast<std::size_t>(spec_.num_classes);
  DenseLayout output;
  output.weight = add_slice("output.weight", classes, in).offset;
  output.bias = add_slice("output.bias", classes, 1).offset;
  output.in = in;
  output.out = classes;
  layers_.push_back(output);

  params_.assign(offset, 0.0);
}

const ParamSlice& Model::slice(const std::string& name) const {
  for (const auto& s : slices_) {
    if (s.name == name) return s;
  }
  throw ValidationError(fmt::format("model '{}' has no parameter '{}'", spec_.name, name));
}

void Model::initialize(std::uint64_t seed) {
  Rng rng(seed, "init");
  std::fill(params_.begin(), params_.end(), 0.0);
  if (embedding_) {
    // A lookup reads one row, so the fan-in is 1.
    const double a = 1.0;
    for (std::size_t i = 0; i < embedding_->size(); ++i) {
      params_[embedding_->offset + i] = rng.uniform(-a, a);
    }
  }
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    const DenseLayout& layer = layers_[l];
    const double a = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (std::size_t i = 0; i < layer.in * layer.out; ++i) {
      params_[layer.weight + i] = rng.uniform(-a, a);
    }
  }
}

Model make_model(const ModelSpec& spec, std::shared_ptr<const Vocab> vocab,
                 const FeatureConfig& features) {
  Model model(spec, std::move(vocab), features);
  model.initialize(spec.init_seed);
  return model;
}

namespace {

std::vector<int> token_ids(const Vocab& vocab, const std::string& text) {
  std::vector<int> ids;
  for (const auto& t : tokenize(text)) ids.push_back(vocab.index(t));
  return ids;
}

}  // namespace

EncodedExample encode(const Model& model, const Example& ex, BlankSide blank) {
  EncodedExample out;
  const InputMode mode = model.spec().input_mode;
  if (mode == InputMode::kFeatures) {
    if (blank != BlankSide::kNone) {
      throw ValidationError("feature-input models cannot probe a single side");
    }
    out.features = feature_vector(ex, model.features());
    return out;
  }
  if ((mode == InputMode::kPair || mode == InputMode::kAOnly) && blank != BlankSide::kA) {
    out.ids_a = token_ids(model.vocab(), ex.text_a);
  }
  if ((mode == InputMode::kPair || mode == InputMode::kBOnly) && blank != BlankSide::kB &&
      ex.text_b) {
    out.ids_b = token_ids(model.vocab(), *ex.text_b);
  }
  return out;
}

LogitVector forward(const Model& model, const Example& ex) {
  Workspace ws(model);
  forward_pass(model, encode(model, ex), ws);
  return ws.logits;
}

ProbVector predict_proba(const Model& model, const Example& ex) {
  return softmax(forward(model, ex));
}

void softmax_into(std::span<const double> logits, std::span<double> out) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp(logits[j] - m);
    sum += out[j];
  }
  for (std::size_t j = 0; j < logits.size(); ++j) out[j] /= sum;
}

ProbVector softmax(std::span<const double> logits) {
  ProbVector out(logits.size());
  softmax_into(logits, out);
  return out;
}

LabelId argmax(std::span<const double> values) {
  return static_cast<LabelId>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kPlainCe: return "plain_ce";
    case LossKind::kPoe: return "poe";
    case LossKind::kReweight: return "reweight";
    case LossKind::kDistill: return "distill";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& s) {
  for (auto k : {LossKind::kPlainCe, LossKind::kPoe, LossKind::kReweight, LossKind::kDistill}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError(fmt::format("unknown loss '{}'", s));
}

double softmax_cross_entropy(std::span<const double> logits, LabelId label,
                             std::span<double> dlogits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    dlogits[j] = std::exp(logits[j] - m);
    sum += dlogits[j];
  }
  for (std::size_t j = 0; j < logits.size(); ++j) dlogits[j] /= sum;
  dlogits[label] -= 1.0;
  return std::log(sum) + m - logits[label];
}

double CrossEntropyLoss::loss_and_grad(std::span<const double> logits, std::size_t,
                                       LabelId label, std::span<double> dlogits) const {
  return softmax_cross_entropy(logits, label, dlogits);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
}

}  // namespace debias
