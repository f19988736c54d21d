#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sustain/rng.hpp"
#include "sustain/tensor.hpp"

namespace sustain {

/// Symmetric label-flip model: an observed bit agrees with the true bit with
/// probability delta, independently per sample and class. delta holds either
/// one shared value or one value per class.
struct NoiseSpec {
  std::vector<double> delta;
  std::uint64_t seed = 0;

  double delta_for(std::size_t c) const;
  bool high_noise(std::size_t c = 0) const { return delta_for(c) < 0.5; }
  void validate(std::size_t num_classes) const;
};

/// Flip each entry of a binary [N,C] matrix per the spec. Deterministic for a
/// fixed spec (seed included).
Tensor inject_noise(const Tensor& true_labels, const NoiseSpec& spec);

/// Agreement probability between a teacher trained on noisy labels and the
/// truth: eps*delta + (1-eps)*(1-delta).
double predicted_teacher_noise(double eps_c, double delta);

/// Per-class analysis of whether blending teacher predictions into the
/// targets moves weight toward the truth.
struct GainReport {
  double delta_bar = 0.0;
  // The headline quantity (1-eps)(1-2*delta) and the blend-level quantity
  // alpha0*delta + (1-alpha0)*delta_bar - delta. They differ by a factor of
  // (1-alpha0); both are carried so the discrepancy stays visible.
  double stated_gain = 0.0;
  double blend_gain = 0.0;
  bool improvement = false;  // blended weight-on-truth strictly exceeds delta
  bool high_noise = false;
};

GainReport predicted_gain(double eps_c, double delta, double alpha0);

enum class TeacherMode {
  DirectTruth,      // agree with the true bit with probability `rate`
  ComposeObserved,  // agree with the observed (noisy) bit with probability `rate`
};

/// Closed-form teacher sampler used by the Monte-Carlo verifiers.
struct SyntheticTeacher {
  TeacherMode mode = TeacherMode::DirectTruth;
  double rate = 1.0;
  int sample(int y_star, int y_observed, Rng& rng) const;
};

struct AlignmentEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
  bool low_sample_warning = false;
};

/// Simulates (true, observed, teacher) label triples and averages the
/// weight-on-truth alpha0*[y == y*] + (1-alpha0)*[p_hat == y*]. The mean
/// should land on alpha0*delta + (1-alpha0)*delta_bar.
AlignmentEstimate monte_carlo_alignment(const NoiseSpec& spec,
                                        const SyntheticTeacher& teacher,
                                        double alpha0, std::size_t n_samples);

/// Per-class agreement rate between thresholded predictions and true labels.
/// Absent (not zero) when there are no samples to measure on.
std::vector<std::optional<double>> measure_teacher_accuracy(
    const Tensor& predictions, const Tensor& true_labels, double threshold = 0.5);

}  // namespace sustain
