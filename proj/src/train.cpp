#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "debias/error.hpp"
#include "debias/kernels.hpp"
#include "debias/model.hpp"
#include "debias/rng.hpp"

namespace debias {

namespace {

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, std::size_t n) : kind_(kind), lr_(lr) {
    if (kind_ == OptimizerKind::kAdam) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
    }
  }

  void step(std::span<double> params, std::span<const double> grad) {
    if (kind_ == OptimizerKind::kSgd) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr_ * grad[i];
      return;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  OptimizerKind kind_;
  double lr_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

}  // namespace

std::vector<double> train_in_place(Model& model, const Dataset& data, const TrainConfig& cfg,
                                   const LossAdapter* adapter) {
  cfg.validate();
  if (data.empty()) throw ValidationError("cannot train on an empty dataset");
  if (data.num_classes() != model.num_classes()) {
    throw ValidationError(fmt::format("model '{}' has {} classes, dataset '{}' has {}",
                                      model.spec().name, model.num_classes(), data.provenance,
                                      data.num_classes()));
  }
  CrossEntropyLoss plain;
  const LossAdapter* loss = adapter;
  if (loss == nullptr) {
    if (cfg.loss != LossKind::kPlainCe) {
      throw ValidationError(fmt::format("loss '{}' needs an ensemble context", to_string(cfg.loss)));
    }
    loss = &plain;
  } else if (loss->kind() != cfg.loss) {
    throw ValidationError(fmt::format("train config asks for loss '{}' but adapter is '{}'",
                                      to_string(cfg.loss), to_string(loss->kind())));
  }
  loss->check(data.size(), data.num_classes());

  const EncodedDataset encoded = kernels::encode_dataset(model, data);
  kernels::BatchGradient batch_gradient(model);
  Optimizer optimizer(cfg.optimizer, cfg.learning_rate, model.parameter_count());
  std::vector<double> grad(model.parameter_count());

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed, "shuffle");
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);

  std::vector<double> epoch_losses;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t len = std::min(batch_size, order.size() - start);
      std::span<const std::size_t> batch(order.data() + start, len);
      const double l = batch_gradient(model, encoded, batch, *loss, grad);
      if (!std::isfinite(l)) {
        throw NumericError(fmt::format(
            "non-finite loss {} training '{}' at epoch {}, batch {} (learning_rate={})", l,
            model.spec().name, epoch, batches, cfg.learning_rate));
      }
      optimizer.step(model.parameters(), grad);
      sum += l;
      ++batches;
    }
    epoch_losses.push_back(sum / static_cast<double>(batches));
  }
  return epoch_losses;
}

TrainResult train(const ModelSpec& spec, const Dataset& data, std::shared_ptr<const Vocab> vocab,
                  const FeatureConfig& features, const TrainConfig& cfg,
                  const LossAdapter* adapter) {
  TrainResult result{make_model(spec, std::move(vocab), features), {}};
  result.epoch_losses = train_in_place(result.model, data, cfg, adapter);
  return result;
}

}  // namespace debias
