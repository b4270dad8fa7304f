// Serial implementations of the kernels, kept as ground truth for tests.
#include "debias/kernels.hpp"

#include <algorithm>

namespace debias::reference {

// Same summation order as the parallel kernel: per-block partial sums, then
// blocks in order. A single running sum would differ in the last bits.
double batch_loss_and_gradient(const Model& model, const EncodedDataset& data,
                               std::span<const std::size_t> batch, const LossAdapter& loss,
                               std::span<double> grad) {
  std::fill(grad.begin(), grad.end(), 0.0);
  Workspace ws(model);
  std::vector<double> block_grad(model.parameter_count());
  double total = 0.0;
  for (std::size_t begin = 0; begin < batch.size(); begin += kernels::kBlockSize) {
    const std::size_t end = std::min(batch.size(), begin + kernels::kBlockSize);
    std::fill(block_grad.begin(), block_grad.end(), 0.0);
    double block_loss = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      const std::size_t i = batch[k];
      forward_pass(model, data.items[i], ws);
      block_loss += loss.loss_and_grad(ws.logits, i, data.labels[i], ws.dlogits);
      backward_pass(model, data.items[i], ws, ws.dlogits, block_grad);
    }
    for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += block_grad[p];
    total += block_loss;
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (double& v : grad) v *= scale;
  return total * scale;
}

EncodedDataset encode_dataset(const Model& model, const Dataset& data, BlankSide blank) {
  EncodedDataset out;
  for (const Example& ex : data.examples) {
    out.items.push_back(encode(model, ex, blank));
    out.labels.push_back(ex.label);
  }
  return out;
}

std::vector<ProbVector> predict_proba_all(const Model& model, const EncodedDataset& data) {
  std::vector<ProbVector> out;
  Workspace ws(model);
  for (const auto& item : data.items) {
    forward_pass(model, item, ws);
    out.push_back(softmax(ws.logits));
  }
  return out;
}

std::vector<LabelId> predict_labels(const Model& model, const EncodedDataset& data) {
  std::vector<LabelId> out;
  Workspace ws(model);
  for (const auto& item : data.items) {
    forward_pass(model, item, ws);
    out.push_back(argmax(ws.logits));
  }
  return out;
}

std::vector<std::vector<double>> feature_matrix(const Dataset& data, const FeatureConfig& cfg) {
  std::vector<std::vector<double>> out;
  for (const Example& ex : data.examples) out.push_back(feature_vector(ex, cfg));
  return out;
}

}  // namespace debias::reference
