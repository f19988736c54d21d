#include <cmath>
#include <cstring>

#include "doctest.h"
#include "sustain/errors.hpp"
#include "sustain/noise.hpp"
#include "sustain/rng.hpp"

using namespace sustain;

namespace {

Tensor random_binary(std::size_t n, std::size_t c, double p, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, c});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.bernoulli(p) ? 1.0 : 0.0;
  return t;
}

double agreement(const Tensor& a, const Tensor& b) {
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) same += (a[i] == b[i]);
  return static_cast<double>(same) / static_cast<double>(a.numel());
}

}  // namespace

TEST_CASE("noise injection at the deterministic endpoints") {
  Tensor truth = random_binary(200, 4, 0.5, 11);
  NoiseSpec keep{{1.0}, 5};
  Tensor same = inject_noise(truth, keep);
  CHECK(agreement(truth, same) == 1.0);

  NoiseSpec flip{{0.0}, 5};
  Tensor inverted = inject_noise(truth, flip);
  CHECK(agreement(truth, inverted) == 0.0);
  for (std::size_t i = 0; i < truth.numel(); ++i)
    CHECK(inverted[i] == 1.0 - truth[i]);
}

TEST_CASE("noise injection hits the configured agreement rate") {
  Tensor truth = random_binary(100000, 1, 0.5, 21);
  NoiseSpec spec{{0.7}, 9001};
  Tensor noisy = inject_noise(truth, spec);
  CHECK(agreement(truth, noisy) == doctest::Approx(0.7).epsilon(0.0072));  // 0.005 absolute

  SUBCASE("reruns with the same spec are bitwise identical") {
    Tensor again = inject_noise(truth, spec);
    CHECK(std::memcmp(noisy.data(), again.data(), noisy.numel() * sizeof(double)) == 0);
  }
  SUBCASE("a different seed flips a different subset") {
    NoiseSpec other{{0.7}, 9002};
    Tensor different = inject_noise(truth, other);
    CHECK(agreement(noisy, different) < 1.0);
  }
}

TEST_CASE("per-class deltas apply column by column") {
  Tensor truth = random_binary(500, 3, 0.5, 33);
  NoiseSpec spec{{1.0, 0.0, 0.5}, 77};
  Tensor noisy = inject_noise(truth, spec);
  for (std::size_t s = 0; s < 500; ++s) {
    CHECK(noisy[s * 3 + 0] == truth[s * 3 + 0]);
    CHECK(noisy[s * 3 + 1] == 1.0 - truth[s * 3 + 1]);
  }
}

TEST_CASE("noise spec validation") {
  Tensor truth = random_binary(10, 2, 0.5, 1);
  CHECK_THROWS_AS(inject_noise(truth, NoiseSpec{{1.2}, 0}), ConfigError);
  CHECK_THROWS_AS(inject_noise(truth, NoiseSpec{{-0.1}, 0}), ConfigError);
  CHECK_THROWS_AS(inject_noise(truth, NoiseSpec{{0.5, 0.5, 0.5}, 0}), ConfigError);
  CHECK_THROWS_AS(inject_noise(truth, NoiseSpec{{}, 0}), ConfigError);
  Tensor soft({1, 1}, {0.5});
  CHECK_THROWS_AS(inject_noise(soft, NoiseSpec{{0.5}, 0}), ConfigError);
  CHECK(NoiseSpec{{0.3}, 0}.high_noise());
  CHECK_FALSE(NoiseSpec{{0.7}, 0}.high_noise());
}

TEST_CASE("teacher noise formula spot values") {
  CHECK(predicted_teacher_noise(0.0, 0.5) == doctest::Approx(0.5));
  CHECK(predicted_teacher_noise(0.3, 0.5) == doctest::Approx(0.5));
  CHECK(predicted_teacher_noise(1.0, 0.5) == doctest::Approx(0.5));
  CHECK(predicted_teacher_noise(1.0, 0.23) == doctest::Approx(0.23));
  CHECK(predicted_teacher_noise(0.6, 0.3) == doctest::Approx(0.46).epsilon(1e-12));
  CHECK_THROWS_AS(predicted_teacher_noise(1.1, 0.5), ConfigError);
}

TEST_CASE("teacher advantage shrinks as labels get cleaner") {
  // The excess agreement delta_bar - delta equals (1-eps)(1-2*delta), so for
  // any imperfect teacher it falls strictly as delta rises and crosses zero
  // at the half-noise line.
  for (double eps : {0.0, 0.4, 0.6, 0.99}) {
    double prev = predicted_teacher_noise(eps, 0.0) - 0.0;
    for (int i = 1; i <= 20; ++i) {
      const double d = i / 20.0;
      const double cur = predicted_teacher_noise(eps, d) - d;
      CHECK(cur < prev);
      prev = cur;
    }
  }
  // Below the half-noise line an imperfect teacher beats the raw labels.
  for (double d : {0.0, 0.1, 0.25, 0.4, 0.49})
    for (double e : {0.0, 0.3, 0.6, 0.99})
      CHECK(predicted_teacher_noise(e, d) > d);
}

TEST_CASE("gain report spot values") {
  for (double e : {0.0, 0.4, 1.0})
    for (double a : {0.0, 0.5, 1.0}) {
      auto r = predicted_gain(e, 0.5, a);
      CHECK(r.stated_gain == doctest::Approx(0.0));
      CHECK(r.blend_gain == doctest::Approx(0.0));
    }

  auto r = predicted_gain(0.6, 0.3, 0.3);
  CHECK(r.delta_bar == doctest::Approx(0.46));
  CHECK(r.stated_gain == doctest::Approx(0.16).epsilon(1e-12));
  CHECK(r.blend_gain == doctest::Approx(0.7 * 0.16).epsilon(1e-9));
  CHECK(r.improvement);
  CHECK(r.high_noise);

  auto low = predicted_gain(0.6, 0.7, 0.3);
  CHECK(low.stated_gain < 0.0);
  CHECK_FALSE(low.improvement);
  CHECK_FALSE(low.high_noise);
}

TEST_CASE("improvement flag matches the sign condition") {
  for (double e : {0.0, 0.3, 0.7, 0.999, 1.0})
    for (double d : {0.0, 0.2, 0.49, 0.5, 0.51, 0.8, 1.0})
      for (double a : {0.0, 0.3, 0.7}) {
        auto r = predicted_gain(e, d, a);
        CHECK(r.improvement == (d < 0.5 && e < 1.0));
      }
  // Pure observed-label targets cannot improve on themselves.
  for (double e : {0.0, 0.5, 1.0})
    for (double d : {0.1, 0.4, 0.6}) {
      CHECK_FALSE(predicted_gain(e, d, 1.0).improvement);
    }
}

TEST_CASE("alignment estimator at the degenerate blends") {
  NoiseSpec spec{{0.3}, 424242};
  SyntheticTeacher teacher{TeacherMode::DirectTruth, 0.46};

  auto pure_labels = monte_carlo_alignment(spec, teacher, 1.0, 100000);
  CHECK(pure_labels.estimate == doctest::Approx(0.3).epsilon(0.02));
  CHECK_FALSE(pure_labels.low_sample_warning);

  auto pure_teacher = monte_carlo_alignment(spec, teacher, 0.0, 100000);
  CHECK(pure_teacher.estimate == doctest::Approx(0.46).epsilon(0.02));
}

TEST_CASE("alignment estimator matches the closed-form blend") {
  NoiseSpec spec{{0.3}, 31415};
  SyntheticTeacher teacher{TeacherMode::DirectTruth, 0.46};
  auto est = monte_carlo_alignment(spec, teacher, 0.3, 100000);
  const double expect = 0.3 * 0.3 + 0.7 * 0.46;  // 0.412
  CHECK(std::fabs(est.estimate - expect) < 3.0 * est.std_error);
  CHECK(est.std_error > 0.0);
  CHECK(est.std_error < 0.01);

  SUBCASE("small runs carry the warning flag") {
    auto tiny = monte_carlo_alignment(spec, teacher, 0.3, 500);
    CHECK(tiny.low_sample_warning);
  }
}

TEST_CASE("sampled teacher agreement matches the configured rate") {
  // Teacher sampled directly against the truth.
  NoiseSpec spec{{0.3}, 112233};
  SyntheticTeacher direct{TeacherMode::DirectTruth, 0.46};
  auto est = monte_carlo_alignment(spec, direct, 0.0, 100000);
  CHECK(std::fabs(est.estimate - 0.46) < 3.0 * est.std_error);
}

TEST_CASE("composing label noise with teacher error reproduces the formula") {
  // Teacher agrees with the observed label with probability eps; its implied
  // agreement with the truth is eps*delta + (1-eps)*(1-delta).
  const double delta = 0.3, eps = 0.6;
  NoiseSpec spec{{delta}, 5150};
  SyntheticTeacher composed{TeacherMode::ComposeObserved, eps};
  auto est = monte_carlo_alignment(spec, composed, 0.0, 200000);
  const double expect = predicted_teacher_noise(eps, delta);
  CHECK(std::fabs(est.estimate - expect) < 3.0 * est.std_error);
}

TEST_CASE("teacher accuracy measurement") {
  Tensor truth = random_binary(1000, 2, 0.5, 99);
  auto perfect = measure_teacher_accuracy(truth, truth);
  CHECK(*perfect[0] == doctest::Approx(1.0));
  CHECK(*perfect[1] == doctest::Approx(1.0));

  SUBCASE("constant sub-threshold predictor scores the negative prior") {
    Tensor flat = Tensor::full({1000, 2}, 0.49);
    auto eps = measure_teacher_accuracy(flat, truth);
    double neg0 = 0.0;
    for (std::size_t s = 0; s < 1000; ++s) neg0 += (truth[s * 2] == 0.0);
    CHECK(*eps[0] == doctest::Approx(neg0 / 1000.0));
  }
  SUBCASE("random predictor sits near one half") {
    Rng rng(1234);
    Tensor noise({1000, 2});
    for (std::size_t i = 0; i < noise.numel(); ++i) noise[i] = rng.uniform();
    auto eps = measure_teacher_accuracy(noise, truth);
    CHECK(*eps[0] == doctest::Approx(0.5).epsilon(0.15));
    CHECK(*eps[1] == doctest::Approx(0.5).epsilon(0.15));
  }
  SUBCASE("shape mismatch is rejected") {
    Tensor wide = random_binary(1000, 3, 0.5, 7);
    CHECK_THROWS_AS(measure_teacher_accuracy(wide, truth), DimensionError);
  }
}
