#include "sustain/noise.hpp"

#include <cmath>

#include "sustain/errors.hpp"

namespace sustain {

double NoiseSpec::delta_for(std::size_t c) const {
  if (delta.empty()) throw ConfigError("noise spec has no delta values");
  return delta.size() == 1 ? delta[0] : delta.at(c);
}

void NoiseSpec::validate(std::size_t num_classes) const {
  if (delta.empty()) throw ConfigError("noise spec has no delta values");
  if (delta.size() != 1 && delta.size() != num_classes)
    throw ConfigError("noise spec has " + std::to_string(delta.size()) + " delta values for " +
                      std::to_string(num_classes) + " classes");
  for (double d : delta)
    if (!(d >= 0.0 && d <= 1.0))
      throw ConfigError("delta must lie in [0, 1], got " + std::to_string(d));
}

Tensor inject_noise(const Tensor& true_labels, const NoiseSpec& spec) {
  if (true_labels.ndim() != 2)
    throw DimensionError("inject_noise: labels must be [samples, classes], got " +
                         shape_str(true_labels.shape()));
  const std::size_t N = true_labels.extent(0), C = true_labels.extent(1);
  spec.validate(C);
  Rng rng(mix_seed(spec.seed, 0x6e6f697365ull));
  Tensor out(true_labels.shape());
  for (std::size_t s = 0; s < N; ++s)
    for (std::size_t c = 0; c < C; ++c) {
      const double t = true_labels[s * C + c];
      if (t != 0.0 && t != 1.0)
        throw ConfigError("inject_noise: labels must be binary, found " + std::to_string(t));
      const bool keep = rng.bernoulli(spec.delta_for(c));
      out[s * C + c] = keep ? t : 1.0 - t;
    }
  return out;
}

double predicted_teacher_noise(double eps_c, double delta) {
  if (!(eps_c >= 0.0 && eps_c <= 1.0) || !(delta >= 0.0 && delta <= 1.0))
    throw ConfigError("predicted_teacher_noise: arguments must lie in [0, 1]");
  return eps_c * delta + (1.0 - eps_c) * (1.0 - delta);
}

GainReport predicted_gain(double eps_c, double delta, double alpha0) {
  if (!(alpha0 >= 0.0 && alpha0 <= 1.0))
    throw ConfigError("predicted_gain: alpha0 must lie in [0, 1]");
  GainReport r;
  r.delta_bar = predicted_teacher_noise(eps_c, delta);
  r.stated_gain = (1.0 - eps_c) * (1.0 - 2.0 * delta);
  r.blend_gain = alpha0 * delta + (1.0 - alpha0) * r.delta_bar - delta;
  // Same sign as blend_gain, but the factored form keeps the boundary cases
  // (delta = 1/2, eps = 1, alpha0 = 1) at exactly zero instead of one ulp off.
  r.improvement = (1.0 - alpha0) * (1.0 - eps_c) * (1.0 - 2.0 * delta) > 0.0;
  r.high_noise = delta < 0.5;
  return r;
}

int SyntheticTeacher::sample(int y_star, int y_observed, Rng& rng) const {
  const int anchor = mode == TeacherMode::DirectTruth ? y_star : y_observed;
  return rng.bernoulli(rate) ? anchor : 1 - anchor;
}

AlignmentEstimate monte_carlo_alignment(const NoiseSpec& spec,
                                        const SyntheticTeacher& teacher,
                                        double alpha0, std::size_t n_samples) {
  if (n_samples == 0) throw ConfigError("monte_carlo_alignment: need at least one sample");
  if (!(alpha0 >= 0.0 && alpha0 <= 1.0))
    throw ConfigError("monte_carlo_alignment: alpha0 must lie in [0, 1]");
  spec.validate(1);
  if (!(teacher.rate >= 0.0 && teacher.rate <= 1.0))
    throw ConfigError("monte_carlo_alignment: teacher rate must lie in [0, 1]");
  Rng rng(mix_seed(spec.seed, 0x616c69676eull));
  const double delta = spec.delta_for(0);
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const int y_star = rng.bernoulli(0.5) ? 1 : 0;
    const int y = rng.bernoulli(delta) ? y_star : 1 - y_star;
    const int p_hat = teacher.sample(y_star, y, rng);
    const double w = alpha0 * (y == y_star) + (1.0 - alpha0) * (p_hat == y_star);
    sum += w;
    sumsq += w * w;
  }
  AlignmentEstimate est;
  est.n = n_samples;
  est.estimate = sum / static_cast<double>(n_samples);
  const double var = sumsq / static_cast<double>(n_samples) - est.estimate * est.estimate;
  est.std_error = std::sqrt(std::max(0.0, var) / static_cast<double>(n_samples));
  est.low_sample_warning = n_samples < 1000;
  return est;
}

std::vector<std::optional<double>> measure_teacher_accuracy(
    const Tensor& predictions, const Tensor& true_labels, double threshold) {
  if (predictions.ndim() != 2)
    throw DimensionError("measure_teacher_accuracy: predictions must be [samples, classes], got " +
                         shape_str(predictions.shape()));
  predictions.require_same_shape(true_labels, "measure_teacher_accuracy");
  const std::size_t N = predictions.extent(0), C = predictions.extent(1);
  std::vector<std::optional<double>> eps(C);
  if (N == 0) return eps;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t agree = 0;
    for (std::size_t s = 0; s < N; ++s) {
      const int pred = predictions[s * C + c] >= threshold ? 1 : 0;
      const int t = true_labels[s * C + c] != 0.0 ? 1 : 0;
      agree += (pred == t);
    }
    eps[c] = static_cast<double>(agree) / static_cast<double>(N);
  }
  return eps;
}

}  // namespace sustain
