#include "sustain/gradcheck.hpp"

#include <cmath>

#include "sustain/errors.hpp"

namespace sustain {

std::vector<Tensor> finite_diff_gradient(const LossFn& loss, ParamSet& params,
                                         double h) {
  if (!(h > 0.0)) throw UsageError("finite_diff_gradient: step must be positive");
  std::vector<Tensor> out;
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    Tensor& theta = e.node->val;
    Tensor g = Tensor::zeros(theta.shape());
    for (std::size_t k = 0; k < theta.numel(); ++k) {
      const double orig = theta[k];
      theta[k] = orig + h;
      const double up = loss();
      theta[k] = orig - h;
      const double down = loss();
      theta[k] = orig;
      g[k] = (up - down) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

GradCheckReport compare_gradients(const ParamSet& params,
                                  const std::vector<Tensor>& numeric) {
  GradCheckReport rep;
  std::size_t ni = 0;
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    if (ni >= numeric.size())
      throw UsageError("compare_gradients: fewer numeric tensors than trainable parameters");
    const Tensor& num = numeric[ni++];
    num.require_same_shape(e.node->val, "compare_gradients '" + e.name + "'");
    for (std::size_t k = 0; k < num.numel(); ++k) {
      const double a = e.node->has_grad() ? e.node->grad[k] : 0.0;
      const double n = num[k];
      const double rel = std::fabs(a - n) / std::max({1.0, std::fabs(a), std::fabs(n)});
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = e.name;
        rep.worst_index = k;
        rep.analytic_at_worst = a;
        rep.numeric_at_worst = n;
      }
    }
  }
  if (ni != numeric.size())
    throw UsageError("compare_gradients: more numeric tensors than trainable parameters");
  return rep;
}

}  // namespace sustain
