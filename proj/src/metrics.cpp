#include "sustain/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "sustain/errors.hpp"

namespace sustain {

namespace {

void check_column(const std::vector<double>& scores, const std::vector<int>& truth) {
  if (scores.size() != truth.size())
    throw DimensionError("metrics: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(truth.size()) + " truth entries");
}

void check_matrix(const Tensor& scores, const Tensor& truth) {
  if (scores.ndim() != 2)
    throw DimensionError("metrics: scores must be [samples, classes], got " + shape_str(scores.shape()));
  scores.require_same_shape(truth, "metrics");
}

// Indices 0..n-1 ordered by descending score, original order among ties.
std::vector<std::size_t> ranked_order(const double* scores, std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<int>& truth) {
  check_column(scores, truth);
  const std::size_t npos = static_cast<std::size_t>(
      std::count_if(truth.begin(), truth.end(), [](int t) { return t != 0; }));
  if (npos == 0) return std::nullopt;
  auto idx = ranked_order(scores.data(), scores.size());
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (truth[idx[k]] != 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return sum / static_cast<double>(npos);
}

std::optional<double> auc_roc(const std::vector<double>& scores,
                              const std::vector<int>& truth) {
  check_column(scores, truth);
  const std::size_t n = scores.size();
  std::size_t P = 0;
  for (int t : truth) P += (t != 0);
  const std::size_t N = n - P;
  if (P == 0 || N == 0) return std::nullopt;

  // Midrank assignment, then the rank-sum form of the Mann-Whitney statistic.
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t k = i; k < j; ++k)
      if (truth[idx[k]] != 0) rank_sum_pos += midrank;
    i = j;
  }
  const double U = rank_sum_pos - 0.5 * static_cast<double>(P) * static_cast<double>(P + 1);
  return U / (static_cast<double>(P) * static_cast<double>(N));
}

std::optional<double> lwlrap(const Tensor& scores, const Tensor& truth) {
  check_matrix(scores, truth);
  const std::size_t N = scores.extent(0), C = scores.extent(1);
  double total_pos = 0.0;
  for (std::size_t i = 0; i < truth.numel(); ++i) total_pos += (truth[i] != 0.0);
  if (total_pos == 0.0) return std::nullopt;

  double acc = 0.0;
  for (std::size_t s = 0; s < N; ++s) {
    auto idx = ranked_order(scores.data() + s * C, C);
    std::size_t true_seen = 0;
    for (std::size_t k = 0; k < C; ++k) {
      if (truth[s * C + idx[k]] != 0.0) {
        ++true_seen;
        acc += static_cast<double>(true_seen) / static_cast<double>(k + 1);
      }
    }
  }
  return acc / total_pos;
}

std::vector<double> per_class_accuracy(const Tensor& scores, const Tensor& truth,
                                       double threshold) {
  check_matrix(scores, truth);
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("per_class_accuracy: threshold must lie in (0, 1)");
  const std::size_t N = scores.extent(0), C = scores.extent(1);
  std::vector<double> acc(C, 0.0);
  for (std::size_t s = 0; s < N; ++s)
    for (std::size_t c = 0; c < C; ++c) {
      const int pred = scores[s * C + c] >= threshold ? 1 : 0;
      const int t = truth[s * C + c] != 0.0 ? 1 : 0;
      acc[c] += (pred == t);
    }
  for (double& a : acc) a /= static_cast<double>(N);
  return acc;
}

MetricsReport evaluate_scores(const Tensor& scores, const Tensor& truth,
                              double threshold) {
  check_matrix(scores, truth);
  const std::size_t N = scores.extent(0), C = scores.extent(1);
  MetricsReport r;
  r.accuracy = per_class_accuracy(scores, truth, threshold);
  double ap_sum = 0.0, auc_sum = 0.0;
  std::size_t ap_n = 0, auc_n = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<double> col(N);
    std::vector<int> t(N);
    for (std::size_t s = 0; s < N; ++s) {
      col[s] = scores[s * C + c];
      t[s] = truth[s * C + c] != 0.0 ? 1 : 0;
    }
    r.ap.push_back(average_precision(col, t));
    r.auc.push_back(auc_roc(col, t));
    if (r.ap.back()) {
      ap_sum += *r.ap.back();
      ++ap_n;
    } else {
      r.excluded.push_back(c);
    }
    if (r.auc.back()) {
      auc_sum += *r.auc.back();
      ++auc_n;
    }
  }
  if (ap_n) r.map = ap_sum / static_cast<double>(ap_n);
  if (auc_n) r.mauc = auc_sum / static_cast<double>(auc_n);
  r.lw = lwlrap(scores, truth);
  return r;
}

std::string metrics_csv(const MetricsReport& r) {
  std::ostringstream out;
  out.precision(10);
  out << "class,ap,auc,accuracy\n";
  for (std::size_t c = 0; c < r.accuracy.size(); ++c) {
    out << c << ',';
    if (r.ap[c]) out << *r.ap[c];
    out << ',';
    if (r.auc[c]) out << *r.auc[c];
    out << ',' << r.accuracy[c] << '\n';
  }
  return out.str();
}

std::string metrics_json(const MetricsReport& r) {
  nlohmann::json j;
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  j["map"] = opt(r.map);
  j["mauc"] = opt(r.mauc);
  j["lwlrap"] = opt(r.lw);
  j["excluded_classes"] = r.excluded;
  j["per_class"] = nlohmann::json::array();
  for (std::size_t c = 0; c < r.accuracy.size(); ++c) {
    nlohmann::json row;
    row["class"] = c;
    row["ap"] = opt(r.ap[c]);
    row["auc"] = opt(r.auc[c]);
    row["accuracy"] = r.accuracy[c];
    j["per_class"].push_back(row);
  }
  return j.dump(2);
}

}  // namespace sustain
