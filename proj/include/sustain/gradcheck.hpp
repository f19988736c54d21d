#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sustain/params.hpp"

namespace sustain {

/// Re-evaluates the loss from scratch; must not mutate any state itself.
using LossFn = std::function<double()>;

/// Central finite differences over every trainable parameter element.
/// Perturbs values in place and restores them. Returns one tensor per
/// trainable entry, in ParamSet order.
std::vector<Tensor> finite_diff_gradient(const LossFn& loss, ParamSet& params,
                                         double h = 1e-5);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// Relative error |a - n| / max(1, |a|, |n|) elementwise, maximized over all
/// trainable parameters. Call after backward() has filled the grads.
GradCheckReport compare_gradients(const ParamSet& params,
                                  const std::vector<Tensor>& numeric);

}  // namespace sustain
