#include "debias/kernels.hpp"

#include <algorithm>

#include <omp.h>

#include "debias/error.hpp"

namespace debias::kernels {

namespace {

std::size_t num_blocks(std::size_t n) { return (n + kBlockSize - 1) / kBlockSize; }

}  // namespace

BatchGradient::BatchGradient(const Model& model) : workspaces_{Workspace(model)} {}

double BatchGradient::operator()(const Model& model, const EncodedDataset& data,
                                 std::span<const std::size_t> batch, const LossAdapter& loss,
                                 std::span<double> grad) {
  const auto nblocks = static_cast<long>(num_blocks(batch.size()));
  const std::size_t params = model.parameter_count();
  const int threads = omp_get_max_threads();
  while (workspaces_.size() < static_cast<std::size_t>(threads)) workspaces_.emplace_back(model);
  partial_grads_.resize(static_cast<std::size_t>(threads));

  std::fill(grad.begin(), grad.end(), 0.0);
  double total = 0.0;
#pragma omp parallel num_threads(threads)
  {
    std::vector<double>& g = partial_grads_[static_cast<std::size_t>(omp_get_thread_num())];
    Workspace& ws = workspaces_[static_cast<std::size_t>(omp_get_thread_num())];
    g.resize(params);
    // Blocks are folded into the total in index order, whatever thread ran them.
#pragma omp for ordered schedule(static, 1)
    for (long b = 0; b < nblocks; ++b) {
      std::fill(g.begin(), g.end(), 0.0);
      const std::size_t begin = static_cast<std::size_t>(b) * kBlockSize;
      const std::size_t end = std::min(batch.size(), begin + kBlockSize);
      double block_loss = 0.0;
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t i = batch[k];
        forward_pass(model, data.items[i], ws);
        block_loss += loss.loss_and_grad(ws.logits, i, data.labels[i], ws.dlogits);
        backward_pass(model, data.items[i], ws, ws.dlogits, g);
      }
#pragma omp ordered
      {
        for (std::size_t p = 0; p < params; ++p) grad[p] += g[p];
        total += block_loss;
      }
    }
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (double& v : grad) v *= scale;
  return total * scale;
}

EncodedDataset encode_dataset(const Model& model, const Dataset& data, BlankSide blank) {
  EncodedDataset out;
  out.items.resize(data.size());
  out.labels.resize(data.size());
  const auto n = static_cast<long>(data.size());
  // Exceptions may not cross the OpenMP region boundary.
  std::vector<std::string> errors(data.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    try {
      out.items[i] = encode(model, data.examples[i], blank);
      out.labels[i] = data.examples[i].label;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw ValidationError(e);
  }
  return out;
}

std::vector<ProbVector> predict_proba_all(const Model& model, const EncodedDataset& data) {
  std::vector<ProbVector> out(data.size());
  const auto n = static_cast<long>(data.size());
#pragma omp parallel
  {
    Workspace ws(model);
#pragma omp for schedule(static)
    for (long i = 0; i < n; ++i) {
      forward_pass(model, data.items[i], ws);
      out[i] = softmax(ws.logits);
    }
  }
  return out;
}

std::vector<LabelId> predict_labels(const Model& model, const EncodedDataset& data) {
  std::vector<LabelId> out(data.size());
  const auto n = static_cast<long>(data.size());
#pragma omp parallel
  {
    Workspace ws(model);
#pragma omp for schedule(static)
    for (long i = 0; i < n; ++i) {
      forward_pass(model, data.items[i], ws);
      out[i] = argmax(ws.logits);
    }
  }
  return out;
}

std::vector<std::vector<double>> feature_matrix(const Dataset& data, const FeatureConfig& cfg) {
  std::vector<std::vector<double>> out(data.size());
  std::vector<std::string> errors(data.size());
  const auto n = static_cast<long>(data.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    try {
      out[i] = feature_vector(data.examples[i], cfg);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw ValidationError(e);
  }
  return out;
}

}  // namespace debias::kernels
