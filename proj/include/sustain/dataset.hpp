#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sustain/mil.hpp"
#include "sustain/noise.hpp"

namespace sustain {

/// Recipe for a synthetic weakly labeled dataset: class-specific event
/// templates planted at random offsets over a white-noise floor, bag labels
/// marking which classes were planted, then label flips per the noise spec.
struct DatasetSpec {
  std::size_t classes = 8;
  std::size_t train_bags = 2000;
  std::size_t val_bags = 800;
  std::size_t test_bags = 800;
  std::size_t frames = 128;
  std::size_t feature_dim = 16;
  std::size_t template_len = 24;
  double template_gain = 2.5;
  std::size_t events_min = 1;       // planted events per positive class
  std::size_t events_max = 2;
  double overlap_prob = 0.5;        // chance a placement ignores spacing
  double feature_noise = 1.0;       // noise floor sigma
  bool multi_label = true;          // independent priors; else one class per bag
  std::vector<double> priors = {0.5};  // one shared value or one per class
  std::vector<double> delta = {1.0};   // label agreement, shared or per class
  std::uint64_t seed = 0;

  double prior_for(std::size_t c) const;
  void validate() const;
};

/// Fixed per-class event pattern [template_len, feature_dim], derived from the
/// dataset seed only (stable across splits and bags).
Tensor class_template(const DatasetSpec& spec, std::size_t c);

/// Seed used to flip labels for a split (0 train, 1 val, 2 test). Observed
/// labels always equal inject_noise(truth, {spec.delta, split_noise_seed(...)}),
/// so a saved dataset can be audited from spec.json alone.
std::uint64_t split_noise_seed(const DatasetSpec& spec, std::size_t split_index);

struct Split {
  std::vector<Bag> bags;
  bool has_truth = true;
};

struct Dataset {
  DatasetSpec spec;
  Split train, val, test;
};

/// Deterministic generation: per-bag derived seeds, features quantized through
/// 32-bit floats so memory and disk agree bitwise. The test split is redrawn
/// until every class has at least one positive bag.
Dataset generate_dataset(const DatasetSpec& spec);

/// Directory layout: spec.json plus train/ val/ test/, each holding
/// labels.csv and features/<bag_id>.sstn.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

void write_feature_file(const std::string& path, const Tensor& features);
Tensor read_feature_file(const std::string& path);

std::string dataset_spec_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const std::string& text);

/// Ready-made recipes: the desk-scale benchmark and a power-law-imbalanced
/// variant where the weighted loss has something to do.
DatasetSpec standard_benchmark_spec();
DatasetSpec audioset_like_spec();

/// Model snapshots: parameters plus embedded architecture, no optimizer
/// state. Round-trips are bitwise (doubles stored verbatim).
void save_model(const WeanetModel& model, const std::string& path);
WeanetModel load_model(const std::string& path,
                       std::optional<std::size_t> expect_classes = std::nullopt);

/// Per-class positive rates of the observed labels in a split.
std::vector<double> positive_rates(const Split& split, std::size_t classes);

}  // namespace sustain
