#include "debias/network.hpp"

#include <algorithm>
#include <cmath>

namespace debias {

namespace {

// Adds the mean embedding of `ids` into out[0, dim).
void add_mean_embedding(std::span<const double> table, std::size_t dim,
                        const std::vector<int>& ids, double* out) {
  if (ids.empty()) return;
  const double scale = 1.0 / static_cast<double>(ids.size());
  for (int id : ids) {
    const double* row = table.data() + static_cast<std::size_t>(id) * dim;
    for (std::size_t d = 0; d < dim; ++d) out[d] += scale * row[d];
  }
}

void scatter_mean_embedding(std::span<double> table_grad, std::size_t dim,
                            const std::vector<int>& ids, const double* delta) {
  if (ids.empty()) return;
  const double scale = 1.0 / static_cast<double>(ids.size());
  for (int id : ids) {
    double* row = table_grad.data() + static_cast<std::size_t>(id) * dim;
    for (std::size_t d = 0; d < dim; ++d) row[d] += scale * delta[d];
  }
}

// out = W x + b
void affine(std::span<const double> params, const DenseLayout& layer,
            const std::vector<double>& x, std::vector<double>& out) {
  const double* w = params.data() + layer.weight;
  const double* b = params.data() + layer.bias;
  for (std::size_t o = 0; o < layer.out; ++o) {
    const double* row = w + o * layer.in;
    double acc = b[o];
    for (std::size_t i = 0; i < layer.in; ++i) acc += row[i] * x[i];
    out[o] = acc;
  }
}

}  // namespace

Workspace::Workspace(const Model& model) {
  const auto& layers = model.layers();
  input.assign(model.input_dim(), 0.0);
  hidden.resize(layers.size() - 1);
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) hidden[l].assign(layers[l].out, 0.0);
  logits.assign(model.num_classes(), 0.0);
  dlogits.assign(model.num_classes(), 0.0);
  std::size_t widest = model.input_dim();
  for (const auto& l : layers) widest = std::max({widest, l.in, l.out});
  delta.assign(widest, 0.0);
  delta_next.assign(widest, 0.0);
}

void forward_pass(const Model& model, const EncodedExample& ex, Workspace& ws) {
  std::span<const double> params = model.parameters();
  const InputMode mode = model.spec().input_mode;
  if (mode == InputMode::kFeatures) {
    std::copy(ex.features.begin(), ex.features.end(), ws.input.begin());
  } else {
    std::fill(ws.input.begin(), ws.input.end(), 0.0);
    const ParamSlice& emb = model.embedding();
    std::span<const double> table = params.subspan(emb.offset, emb.size());
    const std::size_t dim = emb.cols;
    switch (mode) {
      case InputMode::kPair:
        add_mean_embedding(table, dim, ex.ids_a, ws.input.data());
        add_mean_embedding(table, dim, ex.ids_b, ws.input.data() + dim);
        break;
      case InputMode::kAOnly: add_mean_embedding(table, dim, ex.ids_a, ws.input.data()); break;
      case InputMode::kBOnly: add_mean_embedding(table, dim, ex.ids_b, ws.input.data()); break;
      case InputMode::kFeatures: break;
    }
  }

  const auto& layers = model.layers();
  const std::vector<double>* x = &ws.input;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    affine(params, layers[l], *x, ws.hidden[l]);
    for (double& h : ws.hidden[l]) h = std::tanh(h);
    x = &ws.hidden[l];
  }
  affine(params, layers.back(), *x, ws.logits);
}

void backward_pass(const Model& model, const EncodedExample& ex, Workspace& ws,
                   std::span<const double> dlogits, std::span<double> grad) {
  std::span<const double> params = model.parameters();
  const auto& layers = model.layers();
  std::copy(dlogits.begin(), dlogits.end(), ws.delta.begin());

  for (std::size_t l = layers.size(); l-- > 0;) {
    const DenseLayout& layer = layers[l];
    const std::vector<double>& x = l == 0 ? ws.input : ws.hidden[l - 1];
    double* gw = grad.data() + layer.weight;
    double* gb = grad.data() + layer.bias;
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double d = ws.delta[o];
      gb[o] += d;
      double* row = gw + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) row[i] += d * x[i];
    }
    if (l == 0 && !model.has_embedding()) break;

    // delta_next = W^T delta, then through tanh for hidden inputs.
    const double* w = params.data() + layer.weight;
    std::fill(ws.delta_next.begin(), ws.delta_next.begin() + layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double d = ws.delta[o];
      const double* row = w + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) ws.delta_next[i] += row[i] * d;
    }
    if (l > 0) {
      const std::vector<double>& h = ws.hidden[l - 1];
      for (std::size_t i = 0; i < layer.in; ++i) ws.delta_next[i] *= 1.0 - h[i] * h[i];
    }
    std::swap(ws.delta, ws.delta_next);
  }

  if (!model.has_embedding()) return;
  const ParamSlice& emb = model.embedding();
  std::span<double> table = grad.subspan(emb.offset, emb.size());
  const std::size_t dim = emb.cols;
  switch (model.spec().input_mode) {
    case InputMode::kPair:
      scatter_mean_embedding(table, dim, ex.ids_a, ws.delta.data());
      scatter_mean_embedding(table, dim, ex.ids_b, ws.delta.data() + dim);
      break;
    case InputMode::kAOnly: scatter_mean_embedding(table, dim, ex.ids_a, ws.delta.data()); break;
    case InputMode::kBOnly: scatter_mean_embedding(table, dim, ex.ids_b, ws.delta.data()); break;
    case InputMode::kFeatures: break;
  }
}

}  // namespace debias
