#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sustain/tensor.hpp"

namespace sustain {

struct Node;
using Value = std::shared_ptr<Node>;

/// One vertex of the recorded computation. Forward ops allocate fresh nodes;
/// parameters are long-lived leaves whose gradients accumulate across
/// backward() calls until zeroed.
struct Node {
  Tensor val;
  Tensor grad;  // allocated on first use, same shape as val
  std::vector<Value> parents;
  // Distributes this node's grad into the parents' grads. Null for leaves.
  std::function<void(const Node&)> backprop;
  bool requires_grad = false;

  Tensor& ensure_grad() {
    if (grad.numel() != val.numel()) grad = Tensor::zeros(val.shape());
    return grad;
  }
  bool has_grad() const { return grad.numel() == val.numel(); }
};

Value make_constant(Tensor t);
Value make_param(Tensor t);

/// Reverse pass from a scalar loss node. Seeds d(loss)/d(loss) = seed and
/// accumulates into every reachable requires_grad leaf. Accumulation is
/// additive: call ParamSet::zero_grad between optimizer steps.
void backward(const Value& loss, double seed = 1.0);

}  // namespace sustain
