#pragma once

#include <cstdint>
#include <vector>

#include "sustain/params.hpp"

namespace sustain {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments live here, parallel to the ParamSet
/// entries; frozen entries are skipped entirely so their moments and step
/// counts stay untouched until they thaw.
class AdamState {
 public:
  AdamState(const ParamSet& params, AdamConfig cfg = {});
  void step(ParamSet& params);

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::vector<std::int64_t> t_;
};

}  // namespace sustain
