#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sustain/engine.hpp"

namespace sustain {

/// Declarative experiment description. Every section is optional in the JSON;
/// absent keys keep the defaults below, unknown keys are rejected anywhere.
/// `config-schema` prints the full documented schema.
struct ExperimentConfig {
  // dataset: either a saved directory or an inline recipe.
  std::optional<std::string> dataset_path;
  DatasetSpec dataset;
  bool dataset_seed_explicit = false;  // inline "seed" given, so --seed leaves it alone

  ModelConfig model;

  // Training schedule; empty means one plain supervised stage at the CLI
  // default of 8 epochs.
  std::vector<StagePlan> schedule;

  double threshold = 0.5;
  double tau_sat = 0.002;

  bool stop_rule = false;
  bool class_weights = true;
  bool positive_only_weights = false;

  std::string output = "out";
  std::uint64_t seed = 0;

  // alpha-sweep
  std::vector<double> sweep_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5,
                                    0.6, 0.7, 0.8, 0.9, 1.0};

  // verify
  std::size_t verify_samples = 100000;

  // transfer
  std::optional<std::string> transfer_cascade;
  std::optional<std::string> probe_dataset_path;
  std::vector<std::size_t> transfer_stages;  // empty -> first and last stage
  ProbeConfig probe;
  bool probe_against_truth = true;

  // dump-attention
  std::optional<std::string> attention_model_path;  // .sstm snapshot
  std::optional<std::string> attention_cascade;     // or a cascade directory
  std::optional<std::size_t> attention_stage;       // default: best stage
  std::string attention_split = "test";
  std::size_t attention_bag = 0;
};

/// Strict parse: unknown keys, wrong types, and out-of-range values throw
/// ConfigError/FormatError before any work starts.
ExperimentConfig experiment_from_json(const std::string& text);

/// The documented schema with every default, as printed by `config-schema`.
std::string config_schema_text();

/// Minimal SVG emitters (polyline chart and a celled heatmap); CSV stays the
/// canonical output, these are the convenience pictures.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<double>& xs,
                           const std::vector<std::vector<double>>& series,
                           const std::vector<std::string>& series_names);
std::string heatmap_svg(const std::string& title, const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels,
                        const std::vector<std::vector<double>>& cells, double lo, double hi);

/// Finite-difference pass over every layer type plus the composed bag model.
struct GradSuiteCase {
  std::string name;
  double rel_err = 0.0;
  bool pass = false;
};
std::vector<GradSuiteCase> gradient_suite(std::uint64_t seed, double limit = 1e-4);

/// Subcommands. Console output goes to `out`; artifacts land under
/// config.output. Returned exit codes: 0 success, 2 statistical/acceptance
/// failure. Validation problems throw (the driver maps them to exit 1).
int cmd_generate(const ExperimentConfig& config, std::ostream& out);
int cmd_train(const ExperimentConfig& config, std::ostream& out);
int cmd_verify(const ExperimentConfig& config, std::size_t threads, std::ostream& out);
int cmd_alpha_sweep(const ExperimentConfig& config, std::ostream& out);
int cmd_gradcheck(std::ostream& out);
int cmd_transfer(const ExperimentConfig& config, std::ostream& out);
int cmd_dump_attention(const ExperimentConfig& config, std::ostream& out);
int cmd_config_schema(std::ostream& out);

/// Full argv driver: parses flags, loads --config, applies --seed/--out
/// overrides, dispatches, and maps library errors to exit code 1.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sustain
