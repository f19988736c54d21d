#pragma once

#include <cstddef>
#include <vector>

#include "sustain/graph.hpp"

namespace sustain {

enum class Activation { Linear, ReLU, Sigmoid };

/// Per-class loss weights. Empty `w` means unweighted. When positive_only is
/// set the weight scales just the -t*log(p) term, otherwise the whole
/// cross-entropy term for that class.
struct ClassWeights {
  std::vector<double> w;
  bool positive_only = false;
};

/// w_c = 1 + log2(gamma_c) with gamma_c the inverse class prior, floored so
/// rare classes get boosted and common ones stay near weight 1.
ClassWeights balanced_class_weights(const std::vector<double>& priors,
                                    bool positive_only = false);

/// x [n,d] or [d]; W [d,m]; b [m]. Returns act(x*W + b) with matching rank.
Value dense(const Value& x, const Value& W, const Value& b, Activation act);

/// x [B,Ci,L]; kern [Co,Ci,k]; b [Co]. Valid cross-correlation with the given
/// stride and symmetric zero padding; output length floor((L+2p-k)/s)+1.
Value conv1d(const Value& x, const Value& kern, const Value& b,
             std::size_t stride, std::size_t pad, Activation act);

/// [1,C,K] -> [C,K] copy with gradient pass-through.
Value squeeze_leading(const Value& x);

struct AttentionResult {
  Value pooled;     // [C]
  Tensor weights;   // [C,K] detached copy of the attention matrix
};

/// Class-specific attention pooling. scores [C,K] in (0,1), W [C,C]. Attention
/// logits are W*scores, softmaxed over the K segments per class; the pooled
/// output is the attention-weighted sum of scores. W = 0 reduces to mean_pool.
AttentionResult attention_pool(const Value& scores, const Value& W);

Value mean_pool(const Value& scores);  // [C,K] -> [C]
Value max_pool(const Value& scores);   // [C,K] -> [C]

/// Binary cross-entropy, mean over classes and batch rows. pred [C] or [n,C]
/// in [0,1]; target the same shape (soft targets allowed). Probabilities are
/// clipped to [1e-7, 1-1e-7] before the logs.
Value bce_loss(const Value& pred, const Tensor& target,
               const ClassWeights& cw = {});

/// Same reduction as bce_loss without building a graph.
double bce_value(const Tensor& pred, const Tensor& target,
                 const ClassWeights& cw = {});

Value sum_of_squares(const Value& x);
Value scale(const Value& x, double a);

}  // namespace sustain
