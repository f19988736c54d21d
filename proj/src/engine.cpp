#include "sustain/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "sustain/errors.hpp"
#include "sustain/ops.hpp"
#include "sustain/rng.hpp"

namespace fs = std::filesystem;

namespace sustain {

namespace {

constexpr std::uint64_t kStageTag = 0x7374616765ull;
constexpr std::uint64_t kOrderTag = 0x6f72646572ull;
constexpr std::uint64_t kProbeTag = 0x70726f6265ull;
constexpr double kAlphaPattern[] = {1.0, 0.3, 0.2, 0.1, 0.05};

void validate_alphas(const std::vector<double>& alphas) {
  if (alphas.empty()) throw ConfigError("alpha vector is empty");
  double sum = 0.0;
  for (double a : alphas) {
    if (!(a >= 0.0))
      throw ConfigError("alpha vector has a negative entry " + std::to_string(a));
    sum += a;
  }
  if (std::fabs(sum - 1.0) > 1e-12)
    throw ConfigError("alpha vector must sum to 1, got " + std::to_string(sum));
}

Tensor label_matrix(const Split& split, std::size_t C, bool truth) {
  Tensor m({split.bags.size(), C});
  for (std::size_t b = 0; b < split.bags.size(); ++b) {
    const Tensor& row = truth ? split.bags[b].true_labels : split.bags[b].observed;
    for (std::size_t c = 0; c < C; ++c) m[b * C + c] = row[c];
  }
  return m;
}

std::vector<Tensor> snapshot_params(const WeanetModel& model) {
  std::vector<Tensor> vals;
  vals.reserve(model.params().size());
  for (const auto& e : model.params().entries()) vals.push_back(e.node->val);
  return vals;
}

void restore_params(WeanetModel& model, const std::vector<Tensor>& vals) {
  auto& entries = model.params().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i].node->val = vals[i];
}

}  // namespace

void StagePlan::validate() const {
  validate_alphas(alphas);
  if (alphas.size() != teachers.size() + 1)
    throw ConfigError("stage " + std::to_string(stage) + ": " + std::to_string(alphas.size()) +
                      " alphas for " + std::to_string(teachers.size()) +
                      " teachers (need one per teacher plus the observed-label weight)");
  for (std::size_t i = 0; i < teachers.size(); ++i) {
    if (teachers[i] >= stage)
      throw ConfigError("stage " + std::to_string(stage) + " references teacher " +
                        std::to_string(teachers[i]) + ", which is not an earlier stage");
    for (std::size_t j = 0; j < i; ++j)
      if (teachers[j] == teachers[i])
        throw ConfigError("stage " + std::to_string(stage) + " lists teacher " +
                          std::to_string(teachers[i]) + " twice");
  }
  if (epochs == 0) throw ConfigError("stage " + std::to_string(stage) + ": epochs must be positive");
  if (minibatch == 0)
    throw ConfigError("stage " + std::to_string(stage) + ": minibatch must be positive");
  if (!(attention_warmup >= 0.0 && attention_warmup <= 1.0))
    throw ConfigError("stage " + std::to_string(stage) + ": attention_warmup must lie in [0, 1]");
}

Tensor blend_targets(const Tensor& observed, const std::vector<const Tensor*>& teacher_preds,
                     const std::vector<double>& alphas) {
  validate_alphas(alphas);
  if (teacher_preds.size() + 1 != alphas.size())
    throw ConfigError("blend got " + std::to_string(teacher_preds.size()) +
                      " teacher matrices for " + std::to_string(alphas.size()) + " alphas");
  if (alphas[0] == 1.0) return observed;

  Tensor out = observed;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= alphas[0];
  for (std::size_t k = 0; k < teacher_preds.size(); ++k) {
    const Tensor& p = *teacher_preds[k];
    observed.require_same_shape(p, "blend_targets teacher " + std::to_string(k));
    for (std::size_t i = 0; i < out.numel(); ++i) {
      if (!(p[i] >= 0.0 && p[i] <= 1.0))
        throw ConfigError("teacher predictions must lie in [0, 1], found " + std::to_string(p[i]));
      out[i] += alphas[1 + k] * p[i];
    }
  }
  // Convexity keeps entries in [0, 1] up to rounding; pin them exactly.
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = std::min(1.0, std::max(0.0, out[i]));
  return out;
}

StopDecision stopping_rule(const std::vector<double>& history, double tau_sat) {
  if (history.empty()) throw UsageError("stopping rule needs at least one history entry");
  StopDecision d;
  d.best_stage = static_cast<std::size_t>(
      std::max_element(history.begin(), history.end()) - history.begin());
  if (history.size() == 1) return d;
  const double best_prev = *std::max_element(history.begin(), history.end() - 1);
  d.stop = history.back() <= best_prev + tau_sat;
  return d;
}

std::uint64_t stage_seed(const CascadeConfig& config, std::size_t stage) {
  return mix_seed(config.seed, kStageTag, stage);
}

std::size_t Cascade::best_stage() const {
  if (results.empty()) throw UsageError("cascade has no trained stages");
  std::size_t best = 0;
  for (std::size_t i = 1; i < results.size(); ++i)
    if (results[i].selection_metric > results[best].selection_metric) best = i;
  return best;
}

MetricsReport evaluate_model(WeanetModel& model, const Split& split, bool against_truth,
                             double threshold) {
  if (against_truth && !split.has_truth)
    throw ConfigError("split carries no true labels to evaluate against");
  Tensor scores = predict_pooled(model, split.bags);
  Tensor labels = label_matrix(split, model.config().classes, against_truth);
  return evaluate_scores(scores, labels, threshold);
}

StageResult run_stage(Cascade& cascade, const StagePlan& plan, const Dataset& data) {
  plan.validate();
  const std::size_t t = cascade.models.size();
  if (plan.stage != t)
    throw UsageError("plan for stage " + std::to_string(plan.stage) + " arrived when stage " +
                     std::to_string(t) + " is next");
  if (t == 0 && plan.alphas[0] != 1.0)
    throw ConfigError("the first stage must train on observed labels alone (alpha0 = 1)");
  const std::size_t C = cascade.config.model.classes;
  if (C != data.spec.classes)
    throw ConfigError("model expects " + std::to_string(C) + " classes but the dataset has " +
                      std::to_string(data.spec.classes));

  const auto& train = data.train.bags;
  const std::size_t n = train.size();
  Tensor observed = label_matrix(data.train, C, false);
  std::vector<const Tensor*> teacher_preds;
  teacher_preds.reserve(plan.teachers.size());
  for (std::size_t tid : plan.teachers) teacher_preds.push_back(&cascade.train_predictions[tid]);
  Tensor targets = blend_targets(observed, teacher_preds, plan.alphas);

  const std::uint64_t seed = stage_seed(cascade.config, t);
  WeanetModel model(cascade.config.model, seed);
  if (plan.warm_start && t > 0) restore_params(model, snapshot_params(cascade.models.back()));

  ClassWeights cw;
  if (cascade.config.use_class_weights) {
    std::vector<double> rates = positive_rates(data.train, C);
    const double floor_rate = 0.5 / static_cast<double>(n);
    for (double& r : rates) r = std::max(r, floor_rate);
    cw = balanced_class_weights(rates, cascade.config.positive_only_weights);
  }

  AdamState adam(model.params(), plan.adam);
  const bool attentive = cascade.config.model.pooling == Pooling::Attention;
  const std::size_t warm_epochs =
      static_cast<std::size_t>(std::floor(plan.attention_warmup * static_cast<double>(plan.epochs)));
  if (attentive) model.freeze_attention(warm_epochs > 0);

  Rng order_rng(mix_seed(seed, kOrderTag));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  StageResult res;
  res.stage = t;
  double best_metric = -1.0;
  std::vector<Tensor> best_vals = snapshot_params(model);

  Tensor val_labels = label_matrix(data.val, C, false);
  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    if (attentive && warm_epochs > 0 && epoch == warm_epochs) model.freeze_attention(false);
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[order_rng.below(i)]);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += plan.minibatch) {
      const std::size_t count = std::min(plan.minibatch, n - start);
      std::vector<const Bag*> batch;
      batch.reserve(count);
      Tensor batch_targets({count, C});
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t row = order[start + i];
        batch.push_back(&train[row]);
        for (std::size_t c = 0; c < C; ++c) batch_targets[i * C + c] = targets[row * C + c];
      }
      model.params().zero_grad();
      loss_sum += mil_loss(model, batch, batch_targets, cw, true) * static_cast<double>(count);
      adam.step(model.params());
    }
    res.train_loss.push_back(loss_sum / static_cast<double>(n));

    Tensor val_scores = predict_pooled(model, data.val.bags);
    const double vmap = evaluate_scores(val_scores, val_labels).map.value_or(0.0);
    res.val_map.push_back(vmap);
    if (vmap > best_metric) {
      best_metric = vmap;
      res.best_epoch = epoch;
      best_vals = snapshot_params(model);
    }
  }

  restore_params(model, best_vals);
  res.selection_metric = best_metric;

  Tensor cache = predict_pooled(model, train);
  Tensor val_scores = predict_pooled(model, data.val.bags);
  Tensor test_scores = predict_pooled(model, data.test.bags);
  res.val_observed = evaluate_scores(val_scores, val_labels);
  res.test_observed = evaluate_scores(test_scores, label_matrix(data.test, C, false));
  if (data.val.has_truth)
    res.val_truth = evaluate_scores(val_scores, label_matrix(data.val, C, true));
  if (data.test.has_truth)
    res.test_truth = evaluate_scores(test_scores, label_matrix(data.test, C, true));

  cascade.models.push_back(std::move(model));
  cascade.train_predictions.push_back(std::move(cache));
  cascade.stage_targets.push_back(std::move(targets));
  cascade.plans.push_back(plan);
  cascade.results.push_back(res);
  return res;
}

Cascade run_cascade(const Dataset& data, const std::vector<StagePlan>& schedule,
                    const CascadeConfig& config) {
  if (schedule.empty()) throw ConfigError("cascade schedule is empty");
  Cascade cascade;
  cascade.config = config;
  std::vector<double> history;
  for (const StagePlan& plan : schedule) {
    StageResult res = run_stage(cascade, plan, data);
    history.push_back(res.selection_metric);
    if (config.stop_early && stopping_rule(history, config.tau_sat).stop) {
      cascade.stopped_at = res.stage;
      break;
    }
  }
  return cascade;
}

std::vector<StagePlan> decreasing_schedule(std::size_t stages, std::size_t window,
                                           std::size_t epochs) {
  if (stages == 0) throw ConfigError("schedule needs at least one stage");
  if (window == 0) throw ConfigError("teacher window must be positive");
  std::vector<StagePlan> plans;
  constexpr std::size_t kPatternLen = sizeof(kAlphaPattern) / sizeof(kAlphaPattern[0]);
  for (std::size_t t = 0; t < stages; ++t) {
    StagePlan plan;
    plan.stage = t;
    plan.epochs = epochs;
    const double a0 = kAlphaPattern[std::min(t, kPatternLen - 1)];
    if (t == 0) {
      plan.alphas = {1.0};
    } else {
      const std::size_t k = std::min(window, t);
      plan.alphas = {a0};
      for (std::size_t i = 0; i < k; ++i) {
        plan.teachers.push_back(t - k + i);
        plan.alphas.push_back((1.0 - a0) / static_cast<double>(k));
      }
    }
    plans.push_back(std::move(plan));
  }
  return plans;
}

std::vector<StagePlan> fixed_alpha_schedule(std::size_t stages, double alpha0,
                                            std::size_t epochs) {
  if (stages == 0) throw ConfigError("schedule needs at least one stage");
  if (!(alpha0 >= 0.0 && alpha0 <= 1.0))
    throw ConfigError("alpha0 must lie in [0, 1], got " + std::to_string(alpha0));
  std::vector<StagePlan> plans;
  for (std::size_t t = 0; t < stages; ++t) {
    StagePlan plan;
    plan.stage = t;
    plan.epochs = epochs;
    if (t > 0) {
      plan.teachers = {t - 1};
      plan.alphas = {alpha0, 1.0 - alpha0};
    }
    plans.push_back(std::move(plan));
  }
  return plans;
}

AlphaSearchResult alpha_search(const Dataset& data, const std::vector<double>& grid,
                               const CascadeConfig& config, const StagePlan& student_plan) {
  if (grid.empty()) throw ConfigError("alpha search grid is empty");
  for (double a : grid)
    if (!(a >= 0.0 && a <= 1.0))
      throw ConfigError("alpha grid value " + std::to_string(a) + " lies outside [0, 1]");

  Cascade base;
  base.config = config;
  StagePlan p0 = student_plan;
  p0.stage = 0;
  p0.teachers.clear();
  p0.alphas = {1.0};
  StageResult r0 = run_stage(base, p0, data);

  AlphaSearchResult out;
  out.baseline_val_map = r0.selection_metric;
  out.baseline_test_map = r0.test_observed.map.value_or(0.0);
  double best = -1.0;
  for (double a0 : grid) {
    Cascade work = base;  // shares the finished stage, which no stage mutates
    StagePlan p1 = student_plan;
    p1.stage = 1;
    p1.teachers = {0};
    p1.alphas = {a0, 1.0 - a0};
    StageResult r1 = run_stage(work, p1, data);
    out.rows.push_back({a0, r1.selection_metric, r1.test_observed.map.value_or(0.0)});
    if (r1.selection_metric > best) {
      best = r1.selection_metric;
      out.best_alpha0 = a0;
    }
  }
  return out;
}

namespace {

nlohmann::json metric_summary(const MetricsReport& r) {
  nlohmann::json j;
  j["map"] = r.map ? nlohmann::json(*r.map) : nlohmann::json();
  j["mauc"] = r.mauc ? nlohmann::json(*r.mauc) : nlohmann::json();
  j["lwlrap"] = r.lw ? nlohmann::json(*r.lw) : nlohmann::json();
  return j;
}

MetricsReport summary_to_report(const nlohmann::json& j) {
  MetricsReport r;
  if (j.contains("map") && !j["map"].is_null()) r.map = j["map"].get<double>();
  if (j.contains("mauc") && !j["mauc"].is_null()) r.mauc = j["mauc"].get<double>();
  if (j.contains("lwlrap") && !j["lwlrap"].is_null()) r.lw = j["lwlrap"].get<double>();
  return r;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_prediction_csv(const std::string& path, const Tensor& preds) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  const std::size_t C = preds.extent(1);
  out << "row";
  for (std::size_t c = 0; c < C; ++c) out << ",p_" << c;
  out << '\n';
  for (std::size_t b = 0; b < preds.extent(0); ++b) {
    out << b;
    for (std::size_t c = 0; c < C; ++c) out << ',' << format_double(preds[b * C + c]);
    out << '\n';
  }
  if (!out) throw FormatError(path + ": write failed");
}

Tensor read_prediction_csv(const std::string& path, std::size_t C) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": missing header");
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string field;
    bool first = true;
    while (std::getline(ss, field, ',')) {
      if (first) {
        first = false;
        continue;
      }
      try {
        row.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw FormatError(path + ":" + std::to_string(lineno) + ": bad number '" + field + "'");
      }
    }
    if (row.size() != C)
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(C) +
                        " prediction columns, got " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  Tensor t({rows.size(), C});
  for (std::size_t b = 0; b < rows.size(); ++b)
    for (std::size_t c = 0; c < C; ++c) t[b * C + c] = rows[b][c];
  return t;
}

}  // namespace

void save_cascade(const Cascade& cascade, const std::string& dir) {
  if (cascade.models.empty()) throw UsageError("cascade has no trained stages to save");
  fs::create_directories(dir);

  nlohmann::json manifest;
  manifest["format"] = "sustain-cascade";
  manifest["version"] = 1;
  manifest["seed"] = cascade.config.seed;
  manifest["tau_sat"] = cascade.config.tau_sat;
  manifest["stop_early"] = cascade.config.stop_early;
  manifest["use_class_weights"] = cascade.config.use_class_weights;
  manifest["positive_only_weights"] = cascade.config.positive_only_weights;
  manifest["model"] = nlohmann::json::parse(model_config_json(cascade.config.model));
  manifest["stopped_at"] =
      cascade.stopped_at ? nlohmann::json(*cascade.stopped_at) : nlohmann::json();
  manifest["best_stage"] = cascade.best_stage();

  nlohmann::json stages = nlohmann::json::array();
  for (std::size_t t = 0; t < cascade.models.size(); ++t) {
    const StagePlan& plan = cascade.plans[t];
    const StageResult& res = cascade.results[t];
    nlohmann::json s;
    s["stage"] = plan.stage;
    s["teachers"] = plan.teachers;
    s["alphas"] = plan.alphas;
    s["epochs"] = plan.epochs;
    s["minibatch"] = plan.minibatch;
    s["lr"] = plan.adam.lr;
    s["beta1"] = plan.adam.beta1;
    s["beta2"] = plan.adam.beta2;
    s["adam_eps"] = plan.adam.eps;
    s["warm_start"] = plan.warm_start;
    s["attention_warmup"] = plan.attention_warmup;
    s["seed"] = stage_seed(cascade.config, t);
    s["best_epoch"] = res.best_epoch;
    s["selection_metric"] = res.selection_metric;
    s["train_loss"] = res.train_loss;
    s["val_map"] = res.val_map;
    s["val_observed"] = metric_summary(res.val_observed);
    s["test_observed"] = metric_summary(res.test_observed);
    s["val_truth"] = metric_summary(res.val_truth);
    s["test_truth"] = metric_summary(res.test_truth);
    stages.push_back(std::move(s));

    char name[32];
    std::snprintf(name, sizeof name, "stage_%zu.sstm", t);
    save_model(cascade.models[t], (fs::path(dir) / name).string());
    std::snprintf(name, sizeof name, "predictions_stage_%zu.csv", t);
    write_prediction_csv((fs::path(dir) / name).string(), cascade.train_predictions[t]);
  }
  manifest["stages"] = std::move(stages);

  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw FormatError(dir + "/manifest.json: cannot open for writing");
  out << manifest.dump(2) << '\n';
  if (!out) throw FormatError(dir + "/manifest.json: write failed");
}

Cascade load_cascade(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw FormatError(dir + "/manifest.json: cannot open");
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(dir + "/manifest.json: invalid JSON: " + e.what());
  }

  Cascade cascade;
  try {
    if (manifest.at("format").get<std::string>() != "sustain-cascade")
      throw FormatError(dir + "/manifest.json: not a cascade manifest");
    cascade.config.seed = manifest.at("seed").get<std::uint64_t>();
    cascade.config.tau_sat = manifest.at("tau_sat").get<double>();
    cascade.config.stop_early = manifest.at("stop_early").get<bool>();
    cascade.config.use_class_weights = manifest.at("use_class_weights").get<bool>();
    cascade.config.positive_only_weights = manifest.at("positive_only_weights").get<bool>();
    cascade.config.model = model_config_from_json(manifest.at("model").dump());
    if (!manifest.at("stopped_at").is_null())
      cascade.stopped_at = manifest.at("stopped_at").get<std::size_t>();

    for (const auto& s : manifest.at("stages")) {
      StagePlan plan;
      plan.stage = s.at("stage").get<std::size_t>();
      plan.teachers = s.at("teachers").get<std::vector<std::size_t>>();
      plan.alphas = s.at("alphas").get<std::vector<double>>();
      plan.epochs = s.at("epochs").get<std::size_t>();
      plan.minibatch = s.at("minibatch").get<std::size_t>();
      plan.adam.lr = s.at("lr").get<double>();
      plan.adam.beta1 = s.at("beta1").get<double>();
      plan.adam.beta2 = s.at("beta2").get<double>();
      plan.adam.eps = s.at("adam_eps").get<double>();
      plan.warm_start = s.at("warm_start").get<bool>();
      plan.attention_warmup = s.at("attention_warmup").get<double>();

      StageResult res;
      res.stage = plan.stage;
      res.best_epoch = s.at("best_epoch").get<std::size_t>();
      res.selection_metric = s.at("selection_metric").get<double>();
      res.train_loss = s.at("train_loss").get<std::vector<double>>();
      res.val_map = s.at("val_map").get<std::vector<double>>();
      res.val_observed = summary_to_report(s.at("val_observed"));
      res.test_observed = summary_to_report(s.at("test_observed"));
      res.val_truth = summary_to_report(s.at("val_truth"));
      res.test_truth = summary_to_report(s.at("test_truth"));

      const std::size_t t = plan.stage;
      char name[32];
      std::snprintf(name, sizeof name, "stage_%zu.sstm", t);
      cascade.models.push_back(
          load_model((fs::path(dir) / name).string(), cascade.config.model.classes));
      std::snprintf(name, sizeof name, "predictions_stage_%zu.csv", t);
      cascade.train_predictions.push_back(
          read_prediction_csv((fs::path(dir) / name).string(), cascade.config.model.classes));
      cascade.plans.push_back(std::move(plan));
      cascade.results.push_back(std::move(res));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir + "/manifest.json: " + e.what());
  }
  return cascade;
}

Tensor extract_embeddings(WeanetModel& model, const std::vector<Bag>& bags) {
  if (bags.empty()) throw UsageError("extract_embeddings: empty bag list");
  const std::size_t dim = model.config().embed_dim;
  Tensor out({bags.size(), dim});
  for (std::size_t b = 0; b < bags.size(); ++b) {
    Tensor e = model.extract_embedding(bags[b].features);
    for (std::size_t i = 0; i < dim; ++i) out.at(b, i) = e[i];
  }
  return out;
}

Tensor mean_feature_rows(const std::vector<Bag>& bags) {
  if (bags.empty()) throw UsageError("mean_feature_rows: empty bag list");
  const std::size_t dim = bags.front().features.extent(1);
  Tensor out({bags.size(), dim});
  for (std::size_t b = 0; b < bags.size(); ++b) {
    const Tensor& f = bags[b].features;
    if (f.ndim() != 2 || f.extent(1) != dim)
      throw UsageError("mean_feature_rows: inconsistent feature dims across bags");
    const std::size_t frames = f.extent(0);
    for (std::size_t d = 0; d < dim; ++d) {
      double acc = 0.0;
      for (std::size_t r = 0; r < frames; ++r) acc += f.at(r, d);
      out.at(b, d) = acc / static_cast<double>(frames);
    }
  }
  return out;
}

Tensor LinearProbe::predict(const Tensor& rows) const {
  if (rows.ndim() != 2 || rows.extent(1) != weights.extent(0))
    throw UsageError("probe predict: rows must be [n, " +
                     std::to_string(weights.extent(0)) + "], got " + shape_str(rows.shape()));
  const std::size_t n = rows.extent(0), d = weights.extent(0), C = weights.extent(1);
  Tensor out({n, C});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      double z = bias[c];
      for (std::size_t k = 0; k < d; ++k) z += rows.at(r, k) * weights.at(k, c);
      out.at(r, c) = 1.0 / (1.0 + std::exp(-z));
    }
  return out;
}

LinearProbe train_probe(const Tensor& rows, const Tensor& labels, const ProbeConfig& config) {
  if (rows.ndim() != 2 || labels.ndim() != 2)
    throw UsageError("train_probe: rows and labels must be rank-2 matrices");
  if (labels.extent(0) != rows.extent(0))
    throw UsageError("train_probe: " + std::to_string(rows.extent(0)) + " feature rows vs " +
                     std::to_string(labels.extent(0)) + " label rows");
  if (config.epochs == 0 || config.minibatch == 0)
    throw ConfigError("probe config: epochs and minibatch must be positive");
  const std::size_t n = rows.extent(0), d = rows.extent(1), C = labels.extent(1);
  if (n == 0) throw UsageError("train_probe: empty training set");

  ParamSet params;
  Value W = params.add("probe.w", Tensor::zeros({d, C}));
  Value b = params.add("probe.b", Tensor::zeros({C}));
  AdamState adam(params, config.adam);

  Rng order_rng(mix_seed(config.seed, kProbeTag));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[order_rng.below(i)]);
    for (std::size_t start = 0; start < n; start += config.minibatch) {
      const std::size_t count = std::min(config.minibatch, n - start);
      Tensor batch({count, d});
      Tensor targets({count, C});
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t src = order[start + i];
        for (std::size_t k = 0; k < d; ++k) batch.at(i, k) = rows.at(src, k);
        for (std::size_t c = 0; c < C; ++c) targets.at(i, c) = labels.at(src, c);
      }
      params.zero_grad();
      Value pred = dense(make_constant(std::move(batch)), W, b, Activation::Sigmoid);
      backward(bce_loss(pred, targets));
      adam.step(params);
    }
  }

  LinearProbe probe;
  probe.weights = W->val;
  probe.bias = b->val;
  return probe;
}

double argmax_accuracy(const Tensor& scores, const Tensor& labels) {
  if (scores.ndim() != 2 || labels.ndim() != 2 || scores.shape() != labels.shape())
    throw UsageError("argmax_accuracy: scores and labels must share a [n, C] shape");
  const std::size_t n = scores.extent(0), C = scores.extent(1);
  if (n == 0) throw UsageError("argmax_accuracy: empty score matrix");
  std::size_t hits = 0;
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best_s = 0, best_l = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (scores.at(r, c) > scores.at(r, best_s)) best_s = c;
      if (labels.at(r, c) > labels.at(r, best_l)) best_l = c;
    }
    if (best_s == best_l) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace sustain
