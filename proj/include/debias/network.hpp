#pragma once

#include <span>
#include <vector>

#include "debias/model.hpp"

namespace debias {

// Activations of one forward pass, reused across examples.
struct Workspace {
  std::vector<double> input;
  std::vector<std::vector<double>> hidden;  // post-tanh
  std::vector<double> logits;
  std::vector<double> dlogits;
  std::vector<double> delta;
  std::vector<double> delta_next;

  explicit Workspace(const Model& model);
};

// Fills ws.input, ws.hidden and ws.logits.
void forward_pass(const Model& model, const EncodedExample& ex, Workspace& ws);

// Adds d(loss)/d(params) to `grad` given d(loss)/d(logits), using the
// activations left in `ws` by forward_pass on the same example.
void backward_pass(const Model& model, const EncodedExample& ex, Workspace& ws,
                   std::span<const double> dlogits, std::span<double> grad);

}  // namespace debias
