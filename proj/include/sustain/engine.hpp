#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sustain/adam.hpp"
#include "sustain/dataset.hpp"
#include "sustain/metrics.hpp"
#include "sustain/mil.hpp"

namespace sustain {

/// One stage of the cascade: which earlier stages act as teachers, how target
/// mass splits between observed labels and those teachers, and the training
/// budget for the student.
struct StagePlan {
  std::size_t stage = 0;
  std::vector<std::size_t> teachers;   // earlier stage indices
  std::vector<double> alphas = {1.0};  // [0] observed labels, [1 + i] teachers[i]
  std::size_t epochs = 8;
  std::size_t minibatch = 16;
  AdamConfig adam{};
  bool warm_start = false;         // start from the previous stage instead of fresh
  double attention_warmup = 0.2;   // fraction of epochs with attention frozen

  /// Alphas must be a convex combination (each >= 0, summing to 1 within
  /// 1e-12, one entry per teacher plus the leading observed-label weight) and
  /// teachers may only point at earlier stages.
  void validate() const;
};

/// Elementwise convex blend of the observed label matrix with teacher
/// prediction matrices. alphas[0] == 1 returns `observed` verbatim, so a
/// degenerate plan is bit-for-bit plain supervised training.
Tensor blend_targets(const Tensor& observed, const std::vector<const Tensor*>& teacher_preds,
                     const std::vector<double>& alphas);

struct StopDecision {
  bool stop = false;
  std::size_t best_stage = 0;  // argmax over the whole history
};

/// Saturation rule over a per-stage validation history: stop once the newest
/// entry fails to beat the best earlier entry by more than tau_sat. A single
/// entry never stops (there is nothing to compare against yet).
StopDecision stopping_rule(const std::vector<double>& history, double tau_sat);

struct CascadeConfig {
  ModelConfig model{};
  std::uint64_t seed = 0;
  double tau_sat = 0.002;
  bool stop_early = true;
  bool use_class_weights = true;
  bool positive_only_weights = false;
};

struct StageResult {
  std::size_t stage = 0;
  std::size_t best_epoch = 0;
  std::vector<double> train_loss;  // per epoch, batch-mean weighted cross-entropy
  std::vector<double> val_map;     // per epoch, against observed validation labels
  MetricsReport val_observed, test_observed;
  MetricsReport val_truth, test_truth;  // populated only when the split carries truth
  double selection_metric = 0.0;        // best epoch's observed-label validation mAP
};

/// Trained stages in order, plus everything needed to rebuild any stage's
/// targets: cached soft predictions (from each stage's best checkpoint, over
/// the full training set) and the plans that consumed them. Caches are
/// append-only; nothing mutates entries for finished stages.
struct Cascade {
  CascadeConfig config;
  std::vector<WeanetModel> models;
  std::vector<Tensor> train_predictions;  // [n_train, C] per stage
  std::vector<Tensor> stage_targets;      // the exact blend each stage trained on
  std::vector<StagePlan> plans;
  std::vector<StageResult> results;
  std::optional<std::size_t> stopped_at;  // stage whose result tripped the rule

  std::size_t best_stage() const;  // argmax selection metric
};

/// Seed for stage t's fresh parameters and batch order, derived from the
/// cascade seed so stages are independent but reproducible.
std::uint64_t stage_seed(const CascadeConfig& config, std::size_t stage);

/// Train the next stage: fresh student, targets blended from the observed
/// labels and the cached teacher predictions, best-validation-epoch
/// checkpointing, then cache this student's own predictions. The first stage
/// must put all target mass on the observed labels.
StageResult run_stage(Cascade& cascade, const StagePlan& plan, const Dataset& data);

/// Run the schedule in order, recording each stage's validation metric and
/// halting early once it saturates (when config.stop_early is set).
Cascade run_cascade(const Dataset& data, const std::vector<StagePlan>& schedule,
                    const CascadeConfig& config);

/// Schedules. The decreasing pattern follows alpha0 = 1.0, 0.3, 0.2, 0.1,
/// 0.05 (then held at 0.05), each stage taught by its previous `window`
/// stages with the non-observed mass split equally.
std::vector<StagePlan> decreasing_schedule(std::size_t stages, std::size_t window = 1,
                                           std::size_t epochs = 8);
std::vector<StagePlan> fixed_alpha_schedule(std::size_t stages, double alpha0,
                                            std::size_t epochs = 8);

struct AlphaRow {
  double alpha0 = 0.0;
  double val_map = 0.0;
  double test_map = 0.0;
};

struct AlphaSearchResult {
  std::vector<AlphaRow> rows;
  double best_alpha0 = 1.0;
  double baseline_val_map = 0.0;  // the shared teacher's numbers
  double baseline_test_map = 0.0;
};

/// Train one shared first stage, then one student per grid value of alpha0
/// (single teacher, identical student seed across the grid so only the blend
/// varies). Returns the sweep table and the argmax.
AlphaSearchResult alpha_search(const Dataset& data, const std::vector<double>& grid,
                               const CascadeConfig& config, const StagePlan& student_plan);

/// Pooled scores for a split, measured against its observed or true labels.
MetricsReport evaluate_model(WeanetModel& model, const Split& split, bool against_truth,
                             double threshold = 0.5);

/// Directory layout: manifest.json (config, plans, seeds, per-stage summary
/// metrics, stopping record), stage_<t>.sstm snapshots, and
/// predictions_stage_<t>.csv caches written with full double precision.
/// Loading restores models, plans, caches, and summary metrics (the
/// per-class breakdowns live in the reports the CLI writes, not here).
void save_cascade(const Cascade& cascade, const std::string& dir);
Cascade load_cascade(const std::string& dir);

/// One embedding row per bag: the model's penultimate activations max-pooled
/// across segments.
Tensor extract_embeddings(WeanetModel& model, const std::vector<Bag>& bags);

/// Row means of per-frame features, one row per bag; the representation
/// baseline a probe can be trained on without any model.
Tensor mean_feature_rows(const std::vector<Bag>& bags);

/// Independent logistic regression per class on fixed feature rows, trained
/// with minibatch Adam on binary cross-entropy.
struct ProbeConfig {
  std::size_t epochs = 30;
  std::size_t minibatch = 32;
  AdamConfig adam{};
  std::uint64_t seed = 0;

  ProbeConfig() { adam.lr = 1e-2; }
};

struct LinearProbe {
  Tensor weights;  // [dim, classes]
  Tensor bias;     // [classes]

  /// Sigmoid scores [rows, classes].
  Tensor predict(const Tensor& rows) const;
};

LinearProbe train_probe(const Tensor& rows, const Tensor& labels, const ProbeConfig& config);

/// Fraction of rows whose top-scoring class matches the top label entry;
/// the single-label probe readout.
double argmax_accuracy(const Tensor& scores, const Tensor& labels);

}  // namespace sustain
