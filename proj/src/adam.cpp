#include "sustain/adam.hpp"

#include <cmath>

#include "sustain/errors.hpp"

namespace sustain {

AdamState::AdamState(const ParamSet& params, AdamConfig cfg) : cfg_(cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    throw ConfigError("adam: betas must lie in [0, 1)");
  if (!(cfg.eps > 0.0)) throw ConfigError("adam: eps must be positive");
  for (const auto& e : params.entries()) {
    m_.push_back(Tensor::zeros(e.node->val.shape()));
    v_.push_back(Tensor::zeros(e.node->val.shape()));
    t_.push_back(0);
  }
}

void AdamState::step(ParamSet& params) {
  auto& entries = params.entries();
  if (entries.size() != m_.size())
    throw UsageError("adam: parameter set changed size after optimizer construction");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (!e.trainable || !e.node->has_grad()) continue;
    if (!m_[i].same_shape(e.node->val))
      throw UsageError("adam: parameter '" + e.name + "' changed shape after optimizer construction");
    const std::int64_t t = ++t_[i];
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
    Tensor& theta = e.node->val;
    const Tensor& g = e.node->grad;
    for (std::size_t k = 0; k < theta.numel(); ++k) {
      m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g[k];
      v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      const double mhat = m_[i][k] / bc1;
      const double vhat = v_[i][k] / bc2;
      theta[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace sustain
