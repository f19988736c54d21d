#include "sustain/graph.hpp"

#include <unordered_set>

#include "sustain/errors.hpp"

namespace sustain {

Value make_constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  return n;
}

Value make_param(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->requires_grad = true;
  return n;
}

namespace {

void topo_visit(const Value& v, std::unordered_set<const Node*>& seen,
                std::vector<Value>& order) {
  if (seen.count(v.get())) return;
  seen.insert(v.get());
  for (const auto& p : v->parents) topo_visit(p, seen, order);
  order.push_back(v);
}

}  // namespace

void backward(const Value& loss, double seed) {
  if (!loss) throw UsageError("backward: null loss node");
  if (loss->val.numel() != 1)
    throw UsageError("backward: loss must be a scalar, got shape " +
                     shape_str(loss->val.shape()));
  if (loss->parents.empty() && !loss->backprop)
    throw UsageError("backward: loss has no recorded forward computation");

  std::unordered_set<const Node*> seen;
  std::vector<Value> order;
  topo_visit(loss, seen, order);

  // Interior grads are per-pass scratch; only leaf grads accumulate across
  // calls (that is what minibatch accumulation relies on).
  for (const auto& v : order)
    if (!v->parents.empty() && v->has_grad()) v->grad.fill(0.0);

  loss->ensure_grad().data()[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Value& v = *it;
    if (v->backprop && v->has_grad()) v->backprop(*v);
  }
}

}  // namespace sustain
