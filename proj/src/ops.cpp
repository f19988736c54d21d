#include "sustain/ops.hpp"

#include <algorithm>
#include <cmath>

#include "sustain/errors.hpp"

namespace sustain {

namespace {

constexpr double kBceClip = 1e-7;

double act_apply(double z, Activation a) {
  switch (a) {
    case Activation::Linear: return z;
    case Activation::ReLU: return z > 0.0 ? z : 0.0;
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
  }
  return z;
}

// Derivative written in terms of the activation output, so the forward pass
// only needs to keep the result tensor.
double act_dout(double y, Activation a) {
  switch (a) {
    case Activation::Linear: return 1.0;
    case Activation::ReLU: return y > 0.0 ? 1.0 : 0.0;
    case Activation::Sigmoid: return y * (1.0 - y);
  }
  return 1.0;
}

Value finish(Tensor out, std::vector<Value> parents,
             std::function<void(const Node&)> bp) {
  auto n = std::make_shared<Node>();
  n->val = std::move(out);
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  if (n->requires_grad) n->backprop = std::move(bp);
  return n;
}

}  // namespace

ClassWeights balanced_class_weights(const std::vector<double>& priors,
                                    bool positive_only) {
  ClassWeights cw;
  cw.positive_only = positive_only;
  cw.w.reserve(priors.size());
  for (double p : priors) {
    if (!(p > 0.0)) throw ConfigError("class prior must be positive");
    double gamma = std::max(1.0, 1.0 / p);
    cw.w.push_back(1.0 + std::log2(gamma));
  }
  return cw;
}

Value dense(const Value& x, const Value& W, const Value& b, Activation act) {
  const Tensor& xv = x->val;
  const Tensor& Wv = W->val;
  const Tensor& bv = b->val;
  if (Wv.ndim() != 2) throw DimensionError("dense: weight must be rank 2, got " + shape_str(Wv.shape()));
  const std::size_t d = Wv.extent(0), m = Wv.extent(1);
  if (bv.ndim() != 1 || bv.extent(0) != m)
    throw DimensionError("dense: bias shape " + shape_str(bv.shape()) + " does not match output width " + std::to_string(m));
  const bool batched = xv.ndim() == 2;
  if (!batched && xv.ndim() != 1)
    throw DimensionError("dense: input must be rank 1 or 2, got " + shape_str(xv.shape()));
  const std::size_t n = batched ? xv.extent(0) : 1;
  if (xv.extent(batched ? 1 : 0) != d)
    throw DimensionError("dense: input shape " + shape_str(xv.shape()) + " does not match weight rows " + std::to_string(d));

  Tensor out(batched ? Shape{n, m} : Shape{m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double z = bv[j];
      for (std::size_t k = 0; k < d; ++k) z += xv[i * d + k] * Wv[k * m + j];
      out[i * m + j] = act_apply(z, act);
    }

  return finish(std::move(out), {x, W, b}, [n, m, d, act](const Node& self) {
    const Value& x = self.parents[0];
    const Value& W = self.parents[1];
    const Value& b = self.parents[2];
    Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
    Tensor* gW = W->requires_grad ? &W->ensure_grad() : nullptr;
    Tensor* gb = b->requires_grad ? &b->ensure_grad() : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double y = self.val[i * m + j];
        const double dz = self.grad[i * m + j] * act_dout(y, act);
        if (dz == 0.0) continue;
        if (gb) (*gb)[j] += dz;
        for (std::size_t k = 0; k < d; ++k) {
          if (gx) (*gx)[i * d + k] += dz * W->val[k * m + j];
          if (gW) (*gW)[k * m + j] += x->val[i * d + k] * dz;
        }
      }
  });
}

Value conv1d(const Value& x, const Value& kern, const Value& b,
             std::size_t stride, std::size_t pad, Activation act) {
  const Tensor& xv = x->val;
  const Tensor& kv = kern->val;
  const Tensor& bv = b->val;
  if (xv.ndim() != 3) throw DimensionError("conv1d: input must be rank 3, got " + shape_str(xv.shape()));
  if (kv.ndim() != 3) throw DimensionError("conv1d: kernel must be rank 3, got " + shape_str(kv.shape()));
  const std::size_t B = xv.extent(0), Ci = xv.extent(1), L = xv.extent(2);
  const std::size_t Co = kv.extent(0), k = kv.extent(2);
  if (kv.extent(1) != Ci)
    throw DimensionError("conv1d: kernel expects " + std::to_string(kv.extent(1)) + " input channels, input has " + std::to_string(Ci));
  if (bv.ndim() != 1 || bv.extent(0) != Co)
    throw DimensionError("conv1d: bias shape " + shape_str(bv.shape()) + " does not match " + std::to_string(Co) + " output channels");
  if (stride == 0) throw GeometryError("conv1d: stride must be at least 1");
  if (L + 2 * pad < k)
    throw GeometryError("conv1d: input length " + std::to_string(L) + " with padding " + std::to_string(pad) +
                        " is shorter than kernel " + std::to_string(k));
  const std::size_t Lo = (L + 2 * pad - k) / stride + 1;

  Tensor out(Shape{B, Co, Lo});
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t t = 0; t < Lo; ++t) {
        double z = bv[o];
        for (std::size_t c = 0; c < Ci; ++c)
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t u = t * stride + j;  // position in padded input
            if (u < pad || u >= pad + L) continue;
            z += kv[(o * Ci + c) * k + j] * xv[(bi * Ci + c) * L + (u - pad)];
          }
        out[(bi * Co + o) * Lo + t] = act_apply(z, act);
      }

  return finish(std::move(out), {x, kern, b},
                [B, Ci, L, Co, k, Lo, stride, pad, act](const Node& self) {
    const Value& x = self.parents[0];
    const Value& kern = self.parents[1];
    const Value& b = self.parents[2];
    Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
    Tensor* gk = kern->requires_grad ? &kern->ensure_grad() : nullptr;
    Tensor* gb = b->requires_grad ? &b->ensure_grad() : nullptr;
    for (std::size_t bi = 0; bi < B; ++bi)
      for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t t = 0; t < Lo; ++t) {
          const double y = self.val[(bi * Co + o) * Lo + t];
          const double dz = self.grad[(bi * Co + o) * Lo + t] * act_dout(y, act);
          if (dz == 0.0) continue;
          if (gb) (*gb)[o] += dz;
          for (std::size_t c = 0; c < Ci; ++c)
            for (std::size_t j = 0; j < k; ++j) {
              const std::size_t u = t * stride + j;
              if (u < pad || u >= pad + L) continue;
              const std::size_t xi = (bi * Ci + c) * L + (u - pad);
              if (gk) (*gk)[(o * Ci + c) * k + j] += dz * x->val[xi];
              if (gx) (*gx)[xi] += dz * kern->val[(o * Ci + c) * k + j];
            }
        }
  });
}

Value squeeze_leading(const Value& x) {
  const Tensor& xv = x->val;
  if (xv.ndim() != 3 || xv.extent(0) != 1)
    throw DimensionError("squeeze_leading: expected shape [1, C, K], got " + shape_str(xv.shape()));
  Tensor out(Shape{xv.extent(1), xv.extent(2)}, xv.vec());
  return finish(std::move(out), {x}, [](const Node& self) {
    const Value& x = self.parents[0];
    if (!x->requires_grad) return;
    Tensor& gx = x->ensure_grad();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) gx[i] += self.grad[i];
  });
}

AttentionResult attention_pool(const Value& scores, const Value& W) {
  const Tensor& S = scores->val;
  const Tensor& Wv = W->val;
  if (S.ndim() != 2) throw DimensionError("attention_pool: scores must be rank 2, got " + shape_str(S.shape()));
  const std::size_t C = S.extent(0), K = S.extent(1);
  if (Wv.ndim() != 2 || Wv.extent(0) != C || Wv.extent(1) != C)
    throw DimensionError("attention_pool: transform shape " + shape_str(Wv.shape()) + " must be [" +
                         std::to_string(C) + ", " + std::to_string(C) + "]");

  // Logits Z = W*S, softmax over the K segments of each class row.
  Tensor A(Shape{C, K});
  for (std::size_t c = 0; c < C; ++c) {
    double zmax = -1e300;
    for (std::size_t t = 0; t < K; ++t) {
      double z = 0.0;
      for (std::size_t j = 0; j < C; ++j) z += Wv[c * C + j] * S[j * K + t];
      A[c * K + t] = z;
      zmax = std::max(zmax, z);
    }
    double sum = 0.0;
    for (std::size_t t = 0; t < K; ++t) {
      A[c * K + t] = std::exp(A[c * K + t] - zmax);
      sum += A[c * K + t];
    }
    for (std::size_t t = 0; t < K; ++t) A[c * K + t] /= sum;
  }

  Tensor out(Shape{C});
  for (std::size_t c = 0; c < C; ++c) {
    double o = 0.0;
    for (std::size_t t = 0; t < K; ++t) o += A[c * K + t] * S[c * K + t];
    out[c] = o;
  }

  AttentionResult res;
  res.weights = A;
  res.pooled = finish(std::move(out), {scores, W}, [C, K, A](const Node& self) {
    const Value& scores = self.parents[0];
    const Value& W = self.parents[1];
    const Tensor& S = scores->val;
    // dL/dZ_ct = g_c * A_ct * (S_ct - o_c) by the softmax-weighted-sum rule.
    Tensor B(Shape{C, K});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < K; ++t)
        B[c * K + t] = self.grad[c] * A[c * K + t] * (S[c * K + t] - self.val[c]);
    if (scores->requires_grad) {
      Tensor& gS = scores->ensure_grad();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < K; ++t) {
          double acc = self.grad[c] * A[c * K + t];
          for (std::size_t j = 0; j < C; ++j)
            acc += W->val[j * C + c] * B[j * K + t];
          gS[c * K + t] += acc;
        }
    }
    if (W->requires_grad) {
      Tensor& gW = W->ensure_grad();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < C; ++j) {
          double acc = 0.0;
          for (std::size_t t = 0; t < K; ++t) acc += B[c * K + t] * S[j * K + t];
          gW[c * C + j] += acc;
        }
    }
  });
  return res;
}

Value mean_pool(const Value& scores) {
  const Tensor& S = scores->val;
  if (S.ndim() != 2) throw DimensionError("mean_pool: scores must be rank 2, got " + shape_str(S.shape()));
  const std::size_t C = S.extent(0), K = S.extent(1);
  Tensor out(Shape{C});
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t t = 0; t < K; ++t) s += S[c * K + t];
    out[c] = s / static_cast<double>(K);
  }
  return finish(std::move(out), {scores}, [C, K](const Node& self) {
    const Value& scores = self.parents[0];
    if (!scores->requires_grad) return;
    Tensor& gS = scores->ensure_grad();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < K; ++t)
        gS[c * K + t] += self.grad[c] / static_cast<double>(K);
  });
}

Value max_pool(const Value& scores) {
  const Tensor& S = scores->val;
  if (S.ndim() != 2) throw DimensionError("max_pool: scores must be rank 2, got " + shape_str(S.shape()));
  const std::size_t C = S.extent(0), K = S.extent(1);
  Tensor out(Shape{C});
  std::vector<std::size_t> arg(C, 0);
  for (std::size_t c = 0; c < C; ++c) {
    double best = S[c * K];
    for (std::size_t t = 1; t < K; ++t)
      if (S[c * K + t] > best) { best = S[c * K + t]; arg[c] = t; }
    out[c] = best;
  }
  return finish(std::move(out), {scores}, [C, K, arg](const Node& self) {
    const Value& scores = self.parents[0];
    if (!scores->requires_grad) return;
    Tensor& gS = scores->ensure_grad();
    for (std::size_t c = 0; c < C; ++c) gS[c * K + arg[c]] += self.grad[c];
  });
}

namespace {

struct BceShape {
  std::size_t rows;
  std::size_t C;
};

BceShape bce_check(const Tensor& pred, const Tensor& target, const ClassWeights& cw) {
  if (pred.ndim() != 1 && pred.ndim() != 2)
    throw DimensionError("bce: prediction must be rank 1 or 2, got " + shape_str(pred.shape()));
  pred.require_same_shape(target, "bce");
  BceShape s;
  s.rows = pred.ndim() == 2 ? pred.extent(0) : 1;
  s.C = pred.ndim() == 2 ? pred.extent(1) : pred.extent(0);
  if (!cw.w.empty() && cw.w.size() != s.C)
    throw DimensionError("bce: " + std::to_string(cw.w.size()) + " class weights for " + std::to_string(s.C) + " classes");
  return s;
}

}  // namespace

double bce_value(const Tensor& pred, const Tensor& target, const ClassWeights& cw) {
  const BceShape s = bce_check(pred, target, cw);
  double total = 0.0;
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t c = 0; c < s.C; ++c) {
      const double p = std::clamp(pred[i * s.C + c], kBceClip, 1.0 - kBceClip);
      const double t = target[i * s.C + c];
      const double w = cw.w.empty() ? 1.0 : cw.w[c];
      const double pos = -t * std::log(p);
      const double neg = -(1.0 - t) * std::log(1.0 - p);
      total += cw.positive_only ? w * pos + neg : w * (pos + neg);
    }
  return total / static_cast<double>(s.rows * s.C);
}

Value bce_loss(const Value& pred, const Tensor& target, const ClassWeights& cw) {
  const BceShape s = bce_check(pred->val, target, cw);
  Tensor out(Shape{1}, std::vector<double>{bce_value(pred->val, target, cw)});
  return finish(std::move(out), {pred}, [s, target, cw](const Node& self) {
    const Value& pred = self.parents[0];
    if (!pred->requires_grad) return;
    Tensor& gp = pred->ensure_grad();
    const double g = self.grad[0] / static_cast<double>(s.rows * s.C);
    for (std::size_t i = 0; i < s.rows; ++i)
      for (std::size_t c = 0; c < s.C; ++c) {
        const double raw = pred->val[i * s.C + c];
        if (raw < kBceClip || raw > 1.0 - kBceClip) continue;  // clipped flat
        const double t = target[i * s.C + c];
        const double w = cw.w.empty() ? 1.0 : cw.w[c];
        const double dpos = -w * t / raw;
        const double dneg = (1.0 - t) / (1.0 - raw);
        gp[i * s.C + c] += g * (cw.positive_only ? dpos + dneg : dpos + w * dneg);
      }
  });
}

Value sum_of_squares(const Value& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x->val.numel(); ++i) s += x->val[i] * x->val[i];
  Tensor out(Shape{1}, std::vector<double>{s});
  return finish(std::move(out), {x}, [](const Node& self) {
    const Value& x = self.parents[0];
    if (!x->requires_grad) return;
    Tensor& gx = x->ensure_grad();
    for (std::size_t i = 0; i < x->val.numel(); ++i)
      gx[i] += 2.0 * x->val[i] * self.grad[0];
  });
}

Value scale(const Value& x, double a) {
  Tensor out(x->val.shape(), x->val.vec());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= a;
  return finish(std::move(out), {x}, [a](const Node& self) {
    const Value& x = self.parents[0];
    if (!x->requires_grad) return;
    Tensor& gx = x->ensure_grad();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) gx[i] += a * self.grad[i];
  });
}

}  // namespace sustain
