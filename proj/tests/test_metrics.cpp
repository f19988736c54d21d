#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "sustain/errors.hpp"
#include "sustain/metrics.hpp"
#include "sustain/rng.hpp"

using namespace sustain;

namespace {

// Independent counting-based formulations, deliberately different from the
// sort-based implementations under test.

double oracle_ap(const std::vector<double>& s, const std::vector<int>& t) {
  const std::size_t n = s.size();
  double sum = 0.0;
  std::size_t npos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!t[i]) continue;
    ++npos;
    std::size_t rank = 1, pos_at_or_above = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const bool above = s[j] > s[i] || (s[j] == s[i] && j < i);
      if (j != i && above) ++rank;
      if (t[j] && (above || j == i)) ++pos_at_or_above;
    }
    sum += static_cast<double>(pos_at_or_above) / static_cast<double>(rank);
  }
  return sum / static_cast<double>(npos);
}

double oracle_auc(const std::vector<double>& s, const std::vector<int>& t) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!t[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (t[j]) continue;
      ++pairs;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

double oracle_lwlrap(const Tensor& scores, const Tensor& truth) {
  const std::size_t N = scores.extent(0), C = scores.extent(1);
  double acc = 0.0, total = 0.0;
  for (std::size_t smp = 0; smp < N; ++smp) {
    for (std::size_t c = 0; c < C; ++c) {
      if (truth[smp * C + c] == 0.0) continue;
      total += 1.0;
      std::size_t rank = 1, true_in_prefix = 0;
      for (std::size_t d = 0; d < C; ++d) {
        const bool above = scores[smp * C + d] > scores[smp * C + c] ||
                           (scores[smp * C + d] == scores[smp * C + c] && d < c);
        if (d != c && above) ++rank;
        if (truth[smp * C + d] != 0.0 && (above || d == c)) ++true_in_prefix;
      }
      acc += static_cast<double>(true_in_prefix) / static_cast<double>(rank);
    }
  }
  return acc / total;
}

}  // namespace

TEST_CASE("average precision spot values") {
  CHECK(*average_precision({0.9, 0.8, 0.1}, {1, 1, 0}) == doctest::Approx(1.0));
  CHECK(*average_precision({0.9, 0.8, 0.7}, {0, 1, 0}) == doctest::Approx(0.5));
  CHECK(*average_precision({0.42}, {1}) == doctest::Approx(1.0));
  CHECK_FALSE(average_precision({0.1, 0.2}, {0, 0}).has_value());
  CHECK_THROWS_AS(average_precision({0.1}, {0, 1}), DimensionError);
}

TEST_CASE("auc spot values") {
  CHECK(*auc_roc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == doctest::Approx(1.0));
  CHECK(*auc_roc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == doctest::Approx(0.5));
  CHECK(*auc_roc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == doctest::Approx(0.75));
  CHECK_FALSE(auc_roc({0.1, 0.2}, {1, 1}).has_value());
  CHECK_FALSE(auc_roc({0.1, 0.2}, {0, 0}).has_value());
}

TEST_CASE("lwlrap reproduces the two-label worked example") {
  Tensor scores({1, 3}, {0.9, 0.8, 0.7});
  Tensor truth({1, 3}, {1.0, 0.0, 1.0});
  // label 0 at rank 1 -> 1/1; label 2 at rank 3 with 2 true -> 2/3.
  CHECK(*lwlrap(scores, truth) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("lwlrap degenerate and perfect cases") {
  Tensor scores({2, 3}, {0.9, 0.5, 0.1, 0.2, 0.8, 0.3});
  Tensor perfect({2, 3}, {1.0, 0.0, 0.0, 0.0, 1.0, 0.0});
  CHECK(*lwlrap(scores, perfect) == doctest::Approx(1.0));
  Tensor none({2, 3}, std::vector<double>(6, 0.0));
  CHECK_FALSE(lwlrap(scores, none).has_value());
}

TEST_CASE("single-label lwlrap equals mean reciprocal prefix precision") {
  Rng rng(404);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t N = 1 + rng.below(20), C = 2 + rng.below(6);
    Tensor scores({N, C});
    Tensor truth = Tensor::zeros({N, C});
    for (std::size_t i = 0; i < scores.numel(); ++i) scores[i] = rng.uniform();
    for (std::size_t s = 0; s < N; ++s) truth[s * C + rng.below(C)] = 1.0;
    // With one true label per sample the prefix holds exactly one true label,
    // so each contribution is 1/rank of that label.
    double expect = 0.0;
    for (std::size_t s = 0; s < N; ++s) {
      std::size_t c = 0;
      while (truth[s * C + c] == 0.0) ++c;
      std::size_t rank = 1;
      for (std::size_t d = 0; d < C; ++d)
        if (d != c && (scores[s * C + d] > scores[s * C + c] ||
                       (scores[s * C + d] == scores[s * C + c] && d < c)))
          ++rank;
      expect += 1.0 / static_cast<double>(rank);
    }
    expect /= static_cast<double>(N);
    CHECK(*lwlrap(scores, truth) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("per-class accuracy spot values and complement identity") {
  Tensor truth({4, 2}, {1, 0, 0, 1, 1, 1, 0, 0});
  Tensor perfect({4, 2}, {0.9, 0.1, 0.2, 0.8, 0.7, 0.6, 0.3, 0.4});
  auto acc = per_class_accuracy(perfect, truth);
  CHECK(acc[0] == doctest::Approx(1.0));
  CHECK(acc[1] == doctest::Approx(1.0));

  Tensor flipped({4, 2});
  for (std::size_t i = 0; i < flipped.numel(); ++i) flipped[i] = 1.0 - perfect[i];
  auto acc_flip = per_class_accuracy(flipped, truth);
  CHECK(acc_flip[0] == doctest::Approx(1.0 - acc[0]));
  CHECK(acc_flip[1] == doctest::Approx(1.0 - acc[1]));

  CHECK_THROWS_AS(per_class_accuracy(perfect, truth, 0.0), ConfigError);
  CHECK_THROWS_AS(per_class_accuracy(perfect, truth, 1.0), ConfigError);
}

TEST_CASE("ap and auc are invariant under strictly monotone transforms") {
  Rng rng(555);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng.below(40);
    std::vector<double> s(n);
    std::vector<int> t(n);
    bool has_pos = false, has_neg = false;
    for (std::size_t i = 0; i < n; ++i) {
      // Quantized scores so ties actually occur.
      s[i] = std::round(rng.uniform() * 10.0) / 10.0;
      t[i] = rng.bernoulli(0.4) ? 1 : 0;
      (t[i] ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) continue;
    std::vector<double> warped(n);
    for (std::size_t i = 0; i < n; ++i) warped[i] = std::exp(3.0 * s[i]) - 2.0;
    CHECK(*average_precision(s, t) == *average_precision(warped, t));
    CHECK(*auc_roc(s, t) == *auc_roc(warped, t));
  }
}

TEST_CASE("auc complement identity on tie-free scores") {
  Rng rng(808);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 4 + rng.below(30);
    std::vector<double> s(n);
    std::vector<int> t(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = rng.uniform() + 1e-9 * static_cast<double>(i);  // distinct
      t[i] = (i % 2 == 0) ? 1 : 0;
    }
    std::vector<double> neg(n);
    for (std::size_t i = 0; i < n; ++i) neg[i] = -s[i];
    CHECK(*auc_roc(s, t) + *auc_roc(neg, t) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("randomized agreement with brute-force enumeration oracles") {
  Rng rng(161803);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng.below(99);
    std::vector<double> s(n);
    std::vector<int> t(n);
    const bool with_ties = rng.bernoulli(0.5);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = with_ties ? std::round(rng.uniform() * 8.0) / 8.0 : rng.uniform();
      t[i] = rng.bernoulli(0.35) ? 1 : 0;
    }
    const std::size_t P = static_cast<std::size_t>(std::count(t.begin(), t.end(), 1));
    if (P > 0) {
      CHECK(*average_precision(s, t) == doctest::Approx(oracle_ap(s, t)).epsilon(1e-10));
    }
    if (P > 0 && P < n) {
      CHECK(*auc_roc(s, t) == doctest::Approx(oracle_auc(s, t)).epsilon(1e-10));
      ++checked;
    }
  }
  CHECK(checked > 300);  // the sampler actually exercised two-sided cases
}

TEST_CASE("randomized lwlrap agreement with the enumeration oracle") {
  Rng rng(271828);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t N = 1 + rng.below(30), C = 2 + rng.below(7);
    Tensor scores({N, C});
    Tensor truth({N, C});
    bool any = false;
    for (std::size_t i = 0; i < scores.numel(); ++i) {
      scores[i] = rng.bernoulli(0.3) ? 0.5 : rng.uniform();
      truth[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
      any = any || truth[i] != 0.0;
    }
    if (!any) continue;
    CHECK(*lwlrap(scores, truth) == doctest::Approx(oracle_lwlrap(scores, truth)).epsilon(1e-10));
  }
}

TEST_CASE("report aggregates means over included classes only") {
  // Class 2 has no positives and must drop out of the mAP.
  Tensor scores({3, 3}, {0.9, 0.1, 0.5, 0.8, 0.3, 0.6, 0.2, 0.7, 0.4});
  Tensor truth({3, 3}, {1, 0, 0, 1, 1, 0, 0, 0, 0});
  auto rep = evaluate_scores(scores, truth);
  REQUIRE(rep.excluded.size() == 1);
  CHECK(rep.excluded[0] == 2);
  CHECK(rep.ap[2] == std::nullopt);
  REQUIRE(rep.map.has_value());
  CHECK(*rep.map == doctest::Approx((*rep.ap[0] + *rep.ap[1]) / 2.0));
  CHECK(rep.lw.has_value());

  SUBCASE("csv has one row per class with gaps for excluded metrics") {
    std::string csv = metrics_csv(rep);
    CHECK(csv.find("class,ap,auc,accuracy\n") == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  }
  SUBCASE("json summary carries the exclusion list") {
    std::string js = metrics_json(rep);
    CHECK(js.find("\"excluded_classes\"") != std::string::npos);
    CHECK(js.find("\"lwlrap\"") != std::string::npos);
  }
}
