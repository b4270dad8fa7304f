#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "debias/bias_features.hpp"
#include "debias/corpus.hpp"

namespace debias {

using ProbVector = std::vector<double>;
using LogitVector = std::vector<double>;

enum class Arch { kFeatureLogReg, kBowLinear, kMlp };
enum class InputMode { kPair, kAOnly, kBOnly, kFeatures };

// A rung of the capacity ladder. `name` identifies the candidate in reports.
struct ModelSpec {
  std::string name;
  Arch arch = Arch::kBowLinear;
  InputMode input_mode = InputMode::kPair;
  std::vector<int> hidden_dims;  // MLP only
  int embed_dim = 16;            // BOW / MLP
  int num_classes = 2;
  std::uint64_t init_seed = 0;

  void validate() const;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

std::string to_string(Arch arch);
std::string to_string(InputMode mode);
Arch parse_arch(const std::string& s);
InputMode parse_input_mode(const std::string& s);

// Default name such as "mlp[64,64]/b_only".
std::string describe(const ModelSpec& spec);

struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

// Dense affine layer inside the flat parameter store: weight is out x in,
// row-major.
struct DenseLayout {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;
};

// Trainable classifier. Holds the vocabulary it was built against and, for
// feature inputs, the feature configuration, so a checkpoint is
// self-contained.
class Model {
 public:
  Model(ModelSpec spec, std::shared_ptr<const Vocab> vocab, FeatureConfig features);

  const ModelSpec& spec() const { return spec_; }
  const Vocab& vocab() const { return *vocab_; }
  std::shared_ptr<const Vocab> vocab_ptr() const { return vocab_; }
  const FeatureConfig& features() const { return features_; }
  int num_classes() const { return spec_.num_classes; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }
  const std::vector<ParamSlice>& slices() const { return slices_; }
  const ParamSlice& slice(const std::string& name) const;

  bool has_embedding() const { return embedding_.has_value(); }
  const ParamSlice& embedding() const { return *embedding_; }
  // Hidden layers followed by the output layer.
  const std::vector<DenseLayout>& layers() const { return layers_; }
  std::size_t input_dim() const { return input_dim_; }

  // Fan-in scaled symmetric uniform init; output layer zero.
  void initialize(std::uint64_t seed);

 private:
  ModelSpec spec_;
  std::shared_ptr<const Vocab> vocab_;
  FeatureConfig features_;
  std::vector<double> params_;
  std::vector<ParamSlice> slices_;
  std::optional<ParamSlice> embedding_;
  std::vector<DenseLayout> layers_;
  std::size_t input_dim_ = 0;
};

// Builds and initializes from spec.init_seed.
Model make_model(const ModelSpec& spec, std::shared_ptr<const Vocab> vocab,
                 const FeatureConfig& features = {});

// Which text field to hide when a pair model probes one side.
enum class BlankSide { kNone, kA, kB };

struct EncodedExample {
  std::vector<int> ids_a;
  std::vector<int> ids_b;
  std::vector<double> features;
};

struct EncodedDataset {
  std::vector<EncodedExample> items;
  std::vector<LabelId> labels;
  std::size_t size() const { return items.size(); }
};

EncodedExample encode(const Model& model, const Example& ex,
                      BlankSide blank = BlankSide::kNone);

LogitVector forward(const Model& model, const Example& ex);
ProbVector predict_proba(const Model& model, const Example& ex);

// Numerically stable softmax; output sums to 1 within rounding.
ProbVector softmax(std::span<const double> logits);
void softmax_into(std::span<const double> logits, std::span<double> out);
// Cross-entropy of softmax(logits) against `label`, computed as
// logsumexp(logits) - logits[label]. Writes softmax - onehot into dlogits.
double softmax_cross_entropy(std::span<const double> logits, LabelId label,
                             std::span<double> dlogits);
// Smallest index among maxima.
LabelId argmax(std::span<const double> values);

enum class LossKind { kPlainCe, kPoe, kReweight, kDistill };
std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& s);

// Per-example training objective in terms of the main model's logits.
// `example` indexes the training dataset, so adapters can look up cached bias
// probabilities or distillation targets.
class LossAdapter {
 public:
  virtual ~LossAdapter() = default;
  virtual LossKind kind() const = 0;
  // Writes d(loss)/d(logits) into dlogits and returns the loss.
  virtual double loss_and_grad(std::span<const double> logits, std::size_t example,
                               LabelId label, std::span<double> dlogits) const = 0;
  // Throws ValidationError if the adapter cannot serve n examples of C classes.
  virtual void check(std::size_t /*n*/, int /*num_classes*/) const {}
};

class CrossEntropyLoss final : public LossAdapter {
 public:
  LossKind kind() const override { return LossKind::kPlainCe; }
  double loss_and_grad(std::span<const double> logits, std::size_t example,
                       LabelId label, std::span<double> dlogits) const override;
};

enum class OptimizerKind { kSgd, kAdam };

struct TrainConfig {
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 1e-2;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kPlainCe;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainResult {
  Model model;
  std::vector<double> epoch_losses;  // mean batch loss per epoch
};

// Builds a fresh model from `spec` and trains it on `data`. `adapter` is
// required when cfg.loss is not kPlainCe and must match it. Throws
// NumericError on a non-finite loss.
TrainResult train(const ModelSpec& spec, const Dataset& data,
                  std::shared_ptr<const Vocab> vocab, const FeatureConfig& features,
                  const TrainConfig& cfg, const LossAdapter* adapter = nullptr);

// Continues training an existing model in place.
std::vector<double> train_in_place(Model& model, const Dataset& data,
                                   const TrainConfig& cfg,
                                   const LossAdapter* adapter = nullptr);

inline constexpr std::string_view kCheckpointMagic = "DEBIAS-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

void save_model(const Model& model, const std::filesystem::path& path);
std::string serialize_model(const Model& model);
// With `expected`, architecture fields must match or a ValidationError names
// the mismatching field.
Model load_model(const std::filesystem::path& path,
                 const std::optional<ModelSpec>& expected = std::nullopt);
Model deserialize_model(std::string_view text,
                        const std::optional<ModelSpec>& expected = std::nullopt);

}  // namespace debias
