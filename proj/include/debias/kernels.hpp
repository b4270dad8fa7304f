#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "debias/model.hpp"
#include "debias/network.hpp"

// OpenMP-parallel data kernels. Every kernel has a serial twin in
// debias::reference used by the tests as the ground truth.
namespace debias::kernels {

// Examples per gradient block. The block partition depends only on the batch,
// never on the thread count, so parallel results are bit-identical for any
// number of threads.
inline constexpr std::size_t kBlockSize = 8;

// Mean loss and mean parameter gradient over a batch. Keeps per-thread
// scratch between calls.
class BatchGradient {
 public:
  explicit BatchGradient(const Model& model);

  // Overwrites `grad`; returns the mean loss.
  double operator()(const Model& model, const EncodedDataset& data,
                    std::span<const std::size_t> batch, const LossAdapter& loss,
                    std::span<double> grad);

 private:
  std::vector<std::vector<double>> partial_grads_;
  std::vector<Workspace> workspaces_;
};

EncodedDataset encode_dataset(const Model& model, const Dataset& data,
                              BlankSide blank = BlankSide::kNone);

std::vector<ProbVector> predict_proba_all(const Model& model, const EncodedDataset& data);
std::vector<LabelId> predict_labels(const Model& model, const EncodedDataset& data);

// Feature vectors of every example, one row each.
std::vector<std::vector<double>> feature_matrix(const Dataset& data, const FeatureConfig& cfg);

}  // namespace debias::kernels

namespace debias::reference {

double batch_loss_and_gradient(const Model& model, const EncodedDataset& data,
                               std::span<const std::size_t> batch, const LossAdapter& loss,
                               std::span<double> grad);

EncodedDataset encode_dataset(const Model& model, const Dataset& data,
                              BlankSide blank = BlankSide::kNone);
std::vector<ProbVector> predict_proba_all(const Model& model, const EncodedDataset& data);
std::vector<LabelId> predict_labels(const Model& model, const EncodedDataset& data);
std::vector<std::vector<double>> feature_matrix(const Dataset& data, const FeatureConfig& cfg);

}  // namespace debias::reference
