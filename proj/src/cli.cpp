#include "sustain/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "sustain/errors.hpp"
#include "sustain/gradcheck.hpp"
#include "sustain/noise.hpp"
#include "sustain/ops.hpp"
#include "sustain/rng.hpp"

namespace fs = std::filesystem;

namespace sustain {

namespace {

using nlohmann::json;

constexpr std::uint64_t kVerifyTag = 0x766572696679ull;

// ---------------------------------------------------------------------------
// Strict JSON helpers: every section lists its keys, anything else throws.

void reject_unknown(const json& obj, const std::string& where,
                    std::initializer_list<const char*> known) {
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* k : known)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(where + ": unknown key \"" + item.key() + "\"");
  }
}

const json* find(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

double get_num(const json& obj, const char* key, double fallback, const std::string& where) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number()) throw ConfigError(where + "." + key + " must be a number");
  return v->get<double>();
}

std::size_t get_count(const json& obj, const char* key, std::size_t fallback,
                      const std::string& where) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number_unsigned())
    throw ConfigError(where + "." + key + " must be a non-negative integer");
  return v->get<std::size_t>();
}

bool get_bool(const json& obj, const char* key, bool fallback, const std::string& where) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw ConfigError(where + "." + key + " must be true or false");
  return v->get<bool>();
}

std::string get_str(const json& obj, const char* key, const std::string& fallback,
                    const std::string& where) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_string()) throw ConfigError(where + "." + key + " must be a string");
  return v->get<std::string>();
}

// Scalar-or-array shorthand for per-class vectors.
std::vector<double> get_spread(const json& obj, const char* key, std::vector<double> fallback,
                               const std::string& where) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (v->is_number()) return {v->get<double>()};
  if (v->is_array()) {
    std::vector<double> out;
    for (const auto& e : *v) {
      if (!e.is_number())
        throw ConfigError(where + "." + key + " entries must all be numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }
  throw ConfigError(where + "." + key + " must be a number or an array of numbers");
}

DatasetSpec parse_dataset_section(const json& obj, bool& seed_explicit) {
  const std::string where = "dataset";
  reject_unknown(obj, where,
                 {"path", "classes", "train_bags", "val_bags", "test_bags", "frames",
                  "feature_dim", "template_len", "template_gain", "events_min", "events_max",
                  "overlap_prob", "feature_noise", "multi_label", "priors", "delta", "seed"});
  DatasetSpec spec;
  spec.classes = get_count(obj, "classes", spec.classes, where);
  spec.train_bags = get_count(obj, "train_bags", spec.train_bags, where);
  spec.val_bags = get_count(obj, "val_bags", spec.val_bags, where);
  spec.test_bags = get_count(obj, "test_bags", spec.test_bags, where);
  spec.frames = get_count(obj, "frames", spec.frames, where);
  spec.feature_dim = get_count(obj, "feature_dim", spec.feature_dim, where);
  spec.template_len = get_count(obj, "template_len", spec.template_len, where);
  spec.template_gain = get_num(obj, "template_gain", spec.template_gain, where);
  spec.events_min = get_count(obj, "events_min", spec.events_min, where);
  spec.events_max = get_count(obj, "events_max", spec.events_max, where);
  spec.overlap_prob = get_num(obj, "overlap_prob", spec.overlap_prob, where);
  spec.feature_noise = get_num(obj, "feature_noise", spec.feature_noise, where);
  const json* ml = find(obj, "multi_label");
  if (ml) {
    if (!ml->is_boolean()) throw ConfigError("dataset.multi_label must be true or false");
    spec.multi_label = ml->get<bool>();
  }
  spec.priors = get_spread(obj, "priors", spec.priors, where);
  spec.delta = get_spread(obj, "delta", spec.delta, where);
  seed_explicit = find(obj, "seed") != nullptr;
  spec.seed = get_count(obj, "seed", spec.seed, where);
  return spec;
}

void parse_model_section(const json& obj, ModelConfig& model) {
  const std::string where = "model";
  reject_unknown(obj, where,
                 {"feature_dim", "classes", "conv1_channels", "conv1_kernel", "conv1_stride",
                  "conv2_channels", "conv2_kernel", "conv2_stride", "embed_dim", "embed_kernel",
                  "embed_stride", "pooling"});
  model.feature_dim = get_count(obj, "feature_dim", model.feature_dim, where);
  model.classes = get_count(obj, "classes", model.classes, where);
  model.conv1_channels = get_count(obj, "conv1_channels", model.conv1_channels, where);
  model.conv1_kernel = get_count(obj, "conv1_kernel", model.conv1_kernel, where);
  model.conv1_stride = get_count(obj, "conv1_stride", model.conv1_stride, where);
  model.conv2_channels = get_count(obj, "conv2_channels", model.conv2_channels, where);
  model.conv2_kernel = get_count(obj, "conv2_kernel", model.conv2_kernel, where);
  model.conv2_stride = get_count(obj, "conv2_stride", model.conv2_stride, where);
  model.embed_dim = get_count(obj, "embed_dim", model.embed_dim, where);
  model.embed_kernel = get_count(obj, "embed_kernel", model.embed_kernel, where);
  model.embed_stride = get_count(obj, "embed_stride", model.embed_stride, where);
  const json* pool = find(obj, "pooling");
  if (pool) {
    if (!pool->is_string()) throw ConfigError("model.pooling must be a string");
    model.pooling = pooling_from_name(pool->get<std::string>());
  }
}

void apply_plan_overrides(const json& obj, const std::string& where, StagePlan& plan) {
  plan.epochs = get_count(obj, "epochs", plan.epochs, where);
  plan.minibatch = get_count(obj, "minibatch", plan.minibatch, where);
  plan.adam.lr = get_num(obj, "lr", plan.adam.lr, where);
  plan.adam.beta1 = get_num(obj, "beta1", plan.adam.beta1, where);
  plan.adam.beta2 = get_num(obj, "beta2", plan.adam.beta2, where);
  plan.adam.eps = get_num(obj, "adam_eps", plan.adam.eps, where);
  plan.warm_start = get_bool(obj, "warm_start", plan.warm_start, where);
  plan.attention_warmup = get_num(obj, "attention_warmup", plan.attention_warmup, where);
}

std::vector<StagePlan> parse_schedule_section(const json& node) {
  std::vector<StagePlan> plans;
  if (node.is_object()) {
    const std::string where = "schedule";
    reject_unknown(node, where,
                   {"type", "stages", "window", "alpha0", "epochs", "minibatch", "lr", "beta1",
                    "beta2", "adam_eps", "warm_start", "attention_warmup"});
    const std::string type = get_str(node, "type", "decreasing", where);
    const std::size_t stages = get_count(node, "stages", 1, where);
    const std::size_t epochs = get_count(node, "epochs", 8, where);
    if (type == "decreasing") {
      plans = decreasing_schedule(stages, get_count(node, "window", 1, where), epochs);
    } else if (type == "fixed") {
      const json* a = find(node, "alpha0");
      if (!a) throw ConfigError("schedule.alpha0 is required when type is \"fixed\"");
      plans = fixed_alpha_schedule(stages, a->get<double>(), epochs);
    } else {
      throw ConfigError("schedule.type must be \"decreasing\" or \"fixed\", got \"" + type + "\"");
    }
    json overrides = node;
    overrides.erase("type");
    overrides.erase("stages");
    overrides.erase("window");
    overrides.erase("alpha0");
    overrides.erase("epochs");
    for (auto& plan : plans) apply_plan_overrides(overrides, where, plan);
    return plans;
  }
  if (!node.is_array()) throw ConfigError("schedule must be an object or an array of stages");
  for (std::size_t t = 0; t < node.size(); ++t) {
    const std::string where = "schedule[" + std::to_string(t) + "]";
    const json& obj = node[t];
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    reject_unknown(obj, where,
                   {"teachers", "alphas", "epochs", "minibatch", "lr", "beta1", "beta2",
                    "adam_eps", "warm_start", "attention_warmup"});
    StagePlan plan;
    plan.stage = t;
    const json* teachers = find(obj, "teachers");
    if (teachers) {
      if (!teachers->is_array()) throw ConfigError(where + ".teachers must be an array");
      plan.teachers.clear();
      for (const auto& e : *teachers) {
        if (!e.is_number_unsigned())
          throw ConfigError(where + ".teachers entries must be stage indices");
        plan.teachers.push_back(e.get<std::size_t>());
      }
    }
    const json* alphas = find(obj, "alphas");
    if (alphas) {
      plan.alphas.clear();
      if (!alphas->is_array()) throw ConfigError(where + ".alphas must be an array");
      for (const auto& e : *alphas) {
        if (!e.is_number()) throw ConfigError(where + ".alphas entries must be numbers");
        plan.alphas.push_back(e.get<double>());
      }
    }
    apply_plan_overrides(obj, where, plan);
    plan.validate();
    plans.push_back(std::move(plan));
  }
  return plans;
}

// ---------------------------------------------------------------------------
// Output plumbing.

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  out << text;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string opt_fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::string opt_fmt4(const std::optional<double>& v) {
  return v ? fmt4(*v) : std::string("   -  ");
}

std::string join_sizes(const std::vector<std::size_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += '+';
    out += std::to_string(xs[i]);
  }
  return out.empty() ? "-" : out;
}

std::string join_doubles(const std::vector<double>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += '+';
    out += fmt(xs[i]);
  }
  return out;
}

Dataset obtain_dataset(const ExperimentConfig& config, std::ostream& out) {
  if (config.dataset_path) {
    out << "loading dataset from " << *config.dataset_path << "\n";
    return load_dataset(*config.dataset_path);
  }
  out << "generating dataset (seed " << config.dataset.seed << ")\n";
  return generate_dataset(config.dataset);
}

ModelConfig model_for(const ExperimentConfig& config, const DatasetSpec& spec) {
  ModelConfig model = config.model;
  if (model.classes != spec.classes)
    throw ConfigError("model has " + std::to_string(model.classes) + " classes but the dataset has " +
                      std::to_string(spec.classes) + "; set the model section to match");
  if (model.feature_dim != spec.feature_dim)
    throw ConfigError("model feature_dim " + std::to_string(model.feature_dim) +
                      " does not match dataset feature_dim " + std::to_string(spec.feature_dim));
  return model;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config parsing.

ExperimentConfig experiment_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("experiment config: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("experiment config must be a JSON object");
  reject_unknown(root, "config",
                 {"dataset", "model", "schedule", "metrics", "train", "sweep", "verify",
                  "transfer", "attention", "output", "seed"});

  ExperimentConfig config;
  try {
    if (const json* seed = find(root, "seed")) {
      if (!seed->is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
      config.seed = seed->get<std::uint64_t>();
    }
    if (const json* output = find(root, "output")) {
      if (!output->is_string()) throw ConfigError("output must be a string");
      config.output = output->get<std::string>();
    }

    if (const json* ds = find(root, "dataset")) {
      if (!ds->is_object()) throw ConfigError("dataset must be a JSON object");
      if (const json* path = find(*ds, "path")) {
        if (ds->size() != 1)
          throw ConfigError("dataset.path excludes inline recipe fields");
        if (!path->is_string()) throw ConfigError("dataset.path must be a string");
        config.dataset_path = path->get<std::string>();
      } else {
        config.dataset = parse_dataset_section(*ds, config.dataset_seed_explicit);
      }
    }
    if (!config.dataset_seed_explicit && !config.dataset_path)
      config.dataset.seed = config.seed;

    // The model follows the inline dataset's shape unless set explicitly.
    bool model_classes_explicit = false, model_dim_explicit = false;
    if (const json* model = find(root, "model")) {
      if (!model->is_object()) throw ConfigError("model must be a JSON object");
      model_classes_explicit = find(*model, "classes") != nullptr;
      model_dim_explicit = find(*model, "feature_dim") != nullptr;
      parse_model_section(*model, config.model);
    }
    if (!config.dataset_path) {
      if (!model_classes_explicit) config.model.classes = config.dataset.classes;
      if (!model_dim_explicit) config.model.feature_dim = config.dataset.feature_dim;
    }
    config.model.validate();

    if (const json* sched = find(root, "schedule"))
      config.schedule = parse_schedule_section(*sched);

    if (const json* metrics = find(root, "metrics")) {
      if (!metrics->is_object()) throw ConfigError("metrics must be a JSON object");
      reject_unknown(*metrics, "metrics", {"threshold", "tau_sat"});
      config.threshold = get_num(*metrics, "threshold", config.threshold, "metrics");
      config.tau_sat = get_num(*metrics, "tau_sat", config.tau_sat, "metrics");
      if (config.threshold < 0.0 || config.threshold > 1.0)
        throw ConfigError("metrics.threshold must lie in [0, 1]");
      if (config.tau_sat < 0.0) throw ConfigError("metrics.tau_sat must be non-negative");
    }

    if (const json* train = find(root, "train")) {
      if (!train->is_object()) throw ConfigError("train must be a JSON object");
      reject_unknown(*train, "train", {"stop_rule", "class_weights", "positive_only_weights"});
      config.stop_rule = get_bool(*train, "stop_rule", config.stop_rule, "train");
      config.class_weights = get_bool(*train, "class_weights", config.class_weights, "train");
      config.positive_only_weights =
          get_bool(*train, "positive_only_weights", config.positive_only_weights, "train");
    }

    if (const json* sweep = find(root, "sweep")) {
      if (!sweep->is_object()) throw ConfigError("sweep must be a JSON object");
      reject_unknown(*sweep, "sweep", {"grid"});
      config.sweep_grid = get_spread(*sweep, "grid", config.sweep_grid, "sweep");
    }

    if (const json* verify = find(root, "verify")) {
      if (!verify->is_object()) throw ConfigError("verify must be a JSON object");
      reject_unknown(*verify, "verify", {"samples"});
      config.verify_samples = get_count(*verify, "samples", config.verify_samples, "verify");
      if (config.verify_samples == 0) throw ConfigError("verify.samples must be positive");
    }

    if (const json* transfer = find(root, "transfer")) {
      if (!transfer->is_object()) throw ConfigError("transfer must be a JSON object");
      reject_unknown(*transfer, "transfer",
                     {"cascade", "probe_path", "stages", "epochs", "minibatch", "lr", "labels"});
      if (const json* cascade = find(*transfer, "cascade")) {
        if (!cascade->is_string()) throw ConfigError("transfer.cascade must be a string");
        config.transfer_cascade = cascade->get<std::string>();
      }
      if (const json* probe = find(*transfer, "probe_path")) {
        if (!probe->is_string()) throw ConfigError("transfer.probe_path must be a string");
        config.probe_dataset_path = probe->get<std::string>();
      }
      if (const json* stages = find(*transfer, "stages")) {
        if (!stages->is_array()) throw ConfigError("transfer.stages must be an array");
        for (const auto& e : *stages) {
          if (!e.is_number_unsigned())
            throw ConfigError("transfer.stages entries must be stage indices");
          config.transfer_stages.push_back(e.get<std::size_t>());
        }
      }
      config.probe.epochs = get_count(*transfer, "epochs", config.probe.epochs, "transfer");
      config.probe.minibatch = get_count(*transfer, "minibatch", config.probe.minibatch, "transfer");
      config.probe.adam.lr = get_num(*transfer, "lr", config.probe.adam.lr, "transfer");
      const std::string labels = get_str(*transfer, "labels", "truth", "transfer");
      if (labels == "truth")
        config.probe_against_truth = true;
      else if (labels == "observed")
        config.probe_against_truth = false;
      else
        throw ConfigError("transfer.labels must be \"truth\" or \"observed\"");
    }
    config.probe.seed = config.seed;

    if (const json* attention = find(root, "attention")) {
      if (!attention->is_object()) throw ConfigError("attention must be a JSON object");
      reject_unknown(*attention, "attention", {"model", "cascade", "stage", "split", "bag"});
      if (const json* model = find(*attention, "model")) {
        if (!model->is_string()) throw ConfigError("attention.model must be a string");
        config.attention_model_path = model->get<std::string>();
      }
      if (const json* cascade = find(*attention, "cascade")) {
        if (!cascade->is_string()) throw ConfigError("attention.cascade must be a string");
        config.attention_cascade = cascade->get<std::string>();
      }
      if (config.attention_model_path && config.attention_cascade)
        throw ConfigError("attention.model and attention.cascade are mutually exclusive");
      if (find(*attention, "stage"))
        config.attention_stage = get_count(*attention, "stage", 0, "attention");
      config.attention_split = get_str(*attention, "split", config.attention_split, "attention");
      if (config.attention_split != "train" && config.attention_split != "val" &&
          config.attention_split != "test")
        throw ConfigError("attention.split must be train, val, or test");
      config.attention_bag = get_count(*attention, "bag", config.attention_bag, "attention");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("experiment config: ") + e.what());
  }

  if (!config.dataset_path) config.dataset.validate();
  return config;
}

std::string config_schema_text() {
  return R"(sustain experiment config (JSON). Every section and key is optional;
unknown keys are rejected. Defaults shown after each key.

{
  "seed": 0,            // master seed; training and (unless set) data use it
  "output": "out",      // artifact directory

  "dataset": {          // inline recipe (default: the standard benchmark)...
    "classes": 8, "train_bags": 2000, "val_bags": 800, "test_bags": 800,
    "frames": 128, "feature_dim": 16,
    "template_len": 24, "template_gain": 2.5,
    "events_min": 1, "events_max": 2, "overlap_prob": 0.5,
    "feature_noise": 1.0, "multi_label": true,
    "priors": 0.5,      // scalar or per-class array
    "delta": 1.0,       // label agreement; < 0.5 = majority flipped
    "seed": 0           // defaults to the master seed
  },
  // ...or a saved directory instead of the inline fields:
  //   "dataset": { "path": "out/dataset" }

  "model": {            // classes/feature_dim follow the inline dataset
    "feature_dim": 16, "classes": 8,
    "conv1_channels": 16, "conv1_kernel": 8, "conv1_stride": 2,
    "conv2_channels": 32, "conv2_kernel": 5, "conv2_stride": 2,
    "embed_dim": 64, "embed_kernel": 10, "embed_stride": 2,
    "pooling": "attention"   // attention | mean | max
  },

  "schedule":           // default: one supervised stage of 8 epochs
    { "type": "decreasing",  // alpha0 pattern 1.0, 0.3, 0.2, 0.1, 0.05...
      "stages": 1, "window": 1, "epochs": 8,
      // "type": "fixed" uses "alpha0" for every stage past the first
      "minibatch": 16, "lr": 0.001, "beta1": 0.9, "beta2": 0.999,
      "adam_eps": 1e-8, "warm_start": false, "attention_warmup": 0.2 },
  // ...or an explicit array, one object per stage, same per-stage keys plus
  //   "teachers": [0] and "alphas": [0.3, 0.7]

  "metrics": { "threshold": 0.5, "tau_sat": 0.002 },

  "train": { "stop_rule": false, "class_weights": true,
             "positive_only_weights": false },

  "sweep": { "grid": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0] },

  "verify": { "samples": 100000 },

  "transfer": { "cascade": "out/cascade",  // required by the subcommand
                "probe_path": null,        // default: the dataset section
                "stages": [],              // default: first and last
                "epochs": 30, "minibatch": 32, "lr": 0.01,
                "labels": "truth" },       // truth | observed

  "attention": { "model": null,            // .sstm path...
                 "cascade": null,          // ...or cascade dir (best stage)
                 "stage": null, "split": "test", "bag": 0 }
}
)";
}

// ---------------------------------------------------------------------------
// SVG emitters.

namespace {

const char* kSeriesColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<double>& xs,
                           const std::vector<std::vector<double>>& series,
                           const std::vector<std::string>& series_names) {
  if (xs.empty() || series.empty()) throw UsageError("line chart needs at least one point");
  for (const auto& s : series)
    if (s.size() != xs.size())
      throw UsageError("line chart series length does not match the x axis");
  if (series_names.size() != series.size())
    throw UsageError("line chart needs one name per series");

  const double W = 640, H = 400, L = 70, R = 620, T = 44, B = 352;
  double ymin = series[0][0], ymax = ymin;
  for (const auto& s : series)
    for (double v : s) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  double xmin = xs.front(), xmax = xs.back();
  for (double x : xs) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
  }
  if (xmax - xmin < 1e-12) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (R - L); };
  auto py = [&](double y) { return B - (y - ymin) / (ymax - ymin) * (B - T); };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  out << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
      << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = ymin + (ymax - ymin) * i / 4.0;
    out << "<line x1=\"" << L << "\" y1=\"" << svg_num(py(y)) << "\" x2=\"" << R << "\" y2=\""
        << svg_num(py(y)) << "\" stroke=\"#dddddd\"/>\n";
    out << "<text x=\"" << L - 6 << "\" y=\"" << svg_num(py(y) + 4)
        << "\" text-anchor=\"end\" font-size=\"11\">" << tick_label(y) << "</text>\n";
  }
  for (double x : xs) {
    out << "<text x=\"" << svg_num(px(x)) << "\" y=\"" << B + 16
        << "\" text-anchor=\"middle\" font-size=\"11\">" << tick_label(x) << "</text>\n";
  }
  out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << B
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << B << "\" x2=\"" << R << "\" y2=\"" << B
      << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << (L + R) / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
  out << "<text x=\"18\" y=\"" << (T + B) / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
      << "transform=\"rotate(-90 18 " << (T + B) / 2 << ")\">" << y_label << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kSeriesColors[s % 5];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i) out << ' ';
      out << svg_num(px(xs[i])) << ',' << svg_num(py(series[s][i]));
    }
    out << "\"/>\n";
    for (std::size_t i = 0; i < xs.size(); ++i)
      out << "<circle cx=\"" << svg_num(px(xs[i])) << "\" cy=\"" << svg_num(py(series[s][i]))
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    out << "<rect x=\"" << R - 150 << "\" y=\"" << T + 14.0 * s << "\" width=\"10\" height=\"10\" fill=\""
        << color << "\"/>\n";
    out << "<text x=\"" << R - 136 << "\" y=\"" << T + 14.0 * s + 9 << "\" font-size=\"11\">"
        << series_names[s] << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string heatmap_svg(const std::string& title, const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels,
                        const std::vector<std::vector<double>>& cells, double lo, double hi) {
  if (cells.size() != row_labels.size()) throw UsageError("heatmap needs one row label per row");
  for (const auto& row : cells)
    if (row.size() != col_labels.size())
      throw UsageError("heatmap needs one column label per column");
  const double cw = 44, ch = 26, L = 64, T = 40;
  const double W = L + cw * col_labels.size() + 16;
  const double H = T + ch * row_labels.size() + 28;

  auto color = [&](double v) {
    double t = (v - lo) / (hi - lo);
    t = std::clamp(t, 0.0, 1.0);
    // Green through amber to red.
    int r, g;
    if (t < 0.5) {
      r = static_cast<int>(44 + (255 - 44) * (t * 2));
      g = static_cast<int>(160 + (221 - 160) * (t * 2));
    } else {
      r = static_cast<int>(255 - (255 - 214) * (t - 0.5) * 2);
      g = static_cast<int>(221 - (221 - 39) * (t - 0.5) * 2);
    }
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x30", r, g);
    return std::string(buf);
  };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  out << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
      << "</text>\n";
  for (std::size_t c = 0; c < col_labels.size(); ++c)
    out << "<text x=\"" << svg_num(L + cw * (c + 0.5)) << "\" y=\"" << T - 6
        << "\" text-anchor=\"middle\" font-size=\"10\">" << col_labels[c] << "</text>\n";
  for (std::size_t r = 0; r < row_labels.size(); ++r) {
    out << "<text x=\"" << L - 6 << "\" y=\"" << svg_num(T + ch * (r + 0.5) + 3)
        << "\" text-anchor=\"end\" font-size=\"10\">" << row_labels[r] << "</text>\n";
    for (std::size_t c = 0; c < col_labels.size(); ++c) {
      const double v = cells[r][c];
      out << "<rect x=\"" << svg_num(L + cw * c) << "\" y=\"" << svg_num(T + ch * r)
          << "\" width=\"" << cw << "\" height=\"" << ch << "\" fill=\"" << color(v)
          << "\" stroke=\"white\"/>\n";
      char label[16];
      std::snprintf(label, sizeof label, "%.2f", v);
      out << "<text x=\"" << svg_num(L + cw * (c + 0.5)) << "\" y=\""
          << svg_num(T + ch * (r + 0.5) + 3) << "\" text-anchor=\"middle\" font-size=\"9\">"
          << label << "</text>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Gradient suite.

namespace {

GradSuiteCase graph_case(const std::string& name, ParamSet& ps, const std::function<Value()>& fwd,
                         double limit) {
  ps.zero_grad();
  backward(fwd());
  auto numeric = finite_diff_gradient([&]() { return fwd()->val[0]; }, ps);
  GradCheckReport rep = compare_gradients(ps, numeric);
  return {name, rep.max_rel_err, rep.max_rel_err < limit};
}

}  // namespace

std::vector<GradSuiteCase> gradient_suite(std::uint64_t seed, double limit) {
  std::vector<GradSuiteCase> out;

  for (auto act : {Activation::Linear, Activation::ReLU, Activation::Sigmoid}) {
    Rng rng(mix_seed(seed, 1));
    ParamSet ps;
    auto W = ps.add("w", Tensor::uniform({4, 3}, 0.6, rng));
    auto b = ps.add("b", Tensor::uniform({3}, 0.3, rng));
    Tensor xv = Tensor::uniform({2, 4}, 1.0, rng);
    auto fwd = [&, act]() { return sum_of_squares(dense(make_constant(xv), W, b, act)); };
    const char* names[] = {"dense (linear)", "dense (relu)", "dense (sigmoid)"};
    out.push_back(graph_case(names[static_cast<int>(act)], ps, fwd, limit));
  }

  {
    Rng rng(mix_seed(seed, 2));
    ParamSet ps;
    auto k = ps.add("k", Tensor::uniform({3, 2, 3}, 0.5, rng));
    auto b = ps.add("b", Tensor::uniform({3}, 0.2, rng));
    Tensor xv = Tensor::uniform({1, 2, 12}, 1.0, rng);
    auto fwd = [&]() {
      return sum_of_squares(conv1d(make_constant(xv), k, b, 2, 1, Activation::ReLU));
    };
    out.push_back(graph_case("conv1d (stride 2, padded, relu)", ps, fwd, limit));
  }
  {
    Rng rng(mix_seed(seed, 3));
    ParamSet ps;
    auto k = ps.add("k", Tensor::uniform({2, 2, 5}, 0.5, rng));
    auto b = ps.add("b", Tensor::uniform({2}, 0.2, rng));
    Tensor xv = Tensor::uniform({1, 2, 12}, 1.0, rng);
    auto fwd = [&]() {
      return sum_of_squares(conv1d(make_constant(xv), k, b, 1, 0, Activation::Sigmoid));
    };
    out.push_back(graph_case("conv1d (stride 1, sigmoid)", ps, fwd, limit));
  }

  {
    Rng rng(mix_seed(seed, 4));
    ParamSet ps;
    Tensor s0({3, 5});
    for (std::size_t i = 0; i < s0.numel(); ++i) s0[i] = rng.uniform(0.15, 0.85);
    auto s = ps.add("scores", std::move(s0));
    auto W = ps.add("attn", Tensor::uniform({3, 3}, 0.8, rng));
    auto fwd = [&]() { return sum_of_squares(attention_pool(s, W).pooled); };
    out.push_back(graph_case("attention pooling", ps, fwd, limit));
  }
  {
    Rng rng(mix_seed(seed, 5));
    ParamSet ps;
    auto s = ps.add("scores", Tensor::uniform({3, 5}, 0.9, rng));
    auto fwd = [&]() { return sum_of_squares(mean_pool(s)); };
    out.push_back(graph_case("mean pooling", ps, fwd, limit));
  }
  {
    Rng rng(mix_seed(seed, 6));
    ParamSet ps;
    auto s = ps.add("scores", Tensor::uniform({3, 5}, 0.9, rng));
    auto fwd = [&]() { return sum_of_squares(max_pool(s)); };
    out.push_back(graph_case("max pooling", ps, fwd, limit));
  }

  {
    Rng rng(mix_seed(seed, 7));
    ParamSet ps;
    Tensor p0({2, 3});
    for (std::size_t i = 0; i < p0.numel(); ++i) p0[i] = rng.uniform(0.2, 0.8);
    auto p = ps.add("pred", std::move(p0));
    Tensor target({2, 3});
    for (std::size_t i = 0; i < target.numel(); ++i) target[i] = rng.uniform(0.0, 1.0);
    ClassWeights cw{{1.5, 1.0, 2.0}, false};
    auto fwd = [&]() { return bce_loss(p, target, cw); };
    out.push_back(graph_case("weighted cross-entropy", ps, fwd, limit));
  }

  for (auto pooling : {Pooling::Attention, Pooling::Mean, Pooling::Max}) {
    ModelConfig cfg;
    cfg.feature_dim = 5;
    cfg.classes = 3;
    cfg.conv1_channels = 4;
    cfg.conv1_kernel = 4;
    cfg.conv1_stride = 2;
    cfg.conv2_channels = 4;
    cfg.conv2_kernel = 3;
    cfg.conv2_stride = 2;
    cfg.embed_dim = 6;
    cfg.embed_kernel = 3;
    cfg.embed_stride = 2;
    cfg.pooling = pooling;
    WeanetModel model(cfg, mix_seed(seed, 8));
    // Zero-initialized heads sit exactly on flat spots; jitter every weight.
    Rng jitter(mix_seed(seed, 9));
    for (auto& entry : model.params().entries())
      for (std::size_t i = 0; i < entry.node->val.numel(); ++i)
        entry.node->val[i] += jitter.uniform(-0.3, 0.3);

    Rng rng(mix_seed(seed, 10));
    std::vector<Bag> bags(2);
    Tensor targets({2, 3});
    for (std::size_t b = 0; b < 2; ++b) {
      bags[b].features = Tensor::uniform({26 + 8 * b, 5}, 1.0, rng);
      bags[b].true_labels = Tensor({3});
      bags[b].observed = Tensor({3});
      for (std::size_t c = 0; c < 3; ++c) targets.at(b, c) = rng.uniform(0.0, 1.0);
    }
    ClassWeights cw{{1.0, 1.3, 0.8}, false};

    model.params().zero_grad();
    mil_loss(model, bags, targets, cw, true);
    auto numeric = finite_diff_gradient(
        [&]() { return mil_loss(model, bags, targets, cw, false); }, model.params());
    GradCheckReport rep = compare_gradients(model.params(), numeric);
    const char* names[] = {"bag model (attention pooling)", "bag model (mean pooling)",
                           "bag model (max pooling)"};
    out.push_back({names[static_cast<int>(pooling)], rep.max_rel_err, rep.max_rel_err < limit});
  }

  return out;
}

// ---------------------------------------------------------------------------
// Subcommands.

int cmd_generate(const ExperimentConfig& config, std::ostream& out) {
  if (config.dataset_path)
    throw ConfigError("generate needs an inline dataset recipe, not dataset.path");
  Dataset ds = generate_dataset(config.dataset);
  save_dataset(ds, config.output);

  out << "wrote " << config.output << "\n";
  out << "split   bags  positive rate per class (observed)\n";
  const Split* splits[] = {&ds.train, &ds.val, &ds.test};
  const char* names[] = {"train", "val", "test"};
  for (int s = 0; s < 3; ++s) {
    std::vector<double> rates = positive_rates(*splits[s], ds.spec.classes);
    char head[32];
    std::snprintf(head, sizeof head, "%-6s %6zu ", names[s], splits[s]->bags.size());
    out << head;
    for (double r : rates) out << ' ' << fmt4(r).substr(0, 5);
    out << "\n";
  }
  return 0;
}

namespace {

std::string stage_metrics_csv(const Cascade& cascade) {
  std::string csv =
      "stage,teachers,alpha0,alphas,epochs,best_epoch,selection_val_map,"
      "val_map,val_mauc,val_lwlrap,test_map,test_mauc,test_lwlrap,"
      "val_truth_map,test_truth_map\n";
  for (std::size_t t = 0; t < cascade.results.size(); ++t) {
    const StagePlan& plan = cascade.plans[t];
    const StageResult& r = cascade.results[t];
    csv += std::to_string(t) + ',' + join_sizes(plan.teachers) + ',' + fmt(plan.alphas[0]) + ',' +
           join_doubles(plan.alphas) + ',' + std::to_string(plan.epochs) + ',' +
           std::to_string(r.best_epoch) + ',' + fmt(r.selection_metric) + ',' +
           opt_fmt(r.val_observed.map) + ',' + opt_fmt(r.val_observed.mauc) + ',' +
           opt_fmt(r.val_observed.lw) + ',' + opt_fmt(r.test_observed.map) + ',' +
           opt_fmt(r.test_observed.mauc) + ',' + opt_fmt(r.test_observed.lw) + ',' +
           opt_fmt(r.val_truth.map) + ',' + opt_fmt(r.test_truth.map) + '\n';
  }
  return csv;
}

}  // namespace

int cmd_train(const ExperimentConfig& config, std::ostream& out) {
  Dataset data = obtain_dataset(config, out);

  CascadeConfig cc;
  cc.model = model_for(config, data.spec);
  cc.seed = config.seed;
  cc.tau_sat = config.tau_sat;
  cc.stop_early = config.stop_rule;
  cc.use_class_weights = config.class_weights;
  cc.positive_only_weights = config.positive_only_weights;

  std::vector<StagePlan> schedule = config.schedule;
  if (schedule.empty()) schedule.push_back(StagePlan{});

  Cascade cascade = run_cascade(data, schedule, cc);
  save_cascade(cascade, (fs::path(config.output) / "cascade").string());
  write_file(fs::path(config.output) / "stage_metrics.csv", stage_metrics_csv(cascade));

  std::vector<double> xs, val_series, test_series;
  for (std::size_t t = 0; t < cascade.results.size(); ++t) {
    xs.push_back(static_cast<double>(t));
    val_series.push_back(cascade.results[t].selection_metric);
    test_series.push_back(cascade.results[t].test_observed.map.value_or(0.0));
  }
  write_file(fs::path(config.output) / "map_vs_stage.svg",
             line_chart_svg("mAP by stage", "stage", "mAP", xs, {val_series, test_series},
                            {"validation", "test"}));

  out << "stage  teachers  alpha0  best_ep  val_map  test_map  truth_map\n";
  for (std::size_t t = 0; t < cascade.results.size(); ++t) {
    const StageResult& r = cascade.results[t];
    char line[128];
    std::snprintf(line, sizeof line, "%5zu  %-8s  %6.3f  %7zu  %s   %s    %s\n", t,
                  join_sizes(cascade.plans[t].teachers).c_str(), cascade.plans[t].alphas[0],
                  r.best_epoch, opt_fmt4(r.val_observed.map).c_str(),
                  opt_fmt4(r.test_observed.map).c_str(), opt_fmt4(r.test_truth.map).c_str());
    out << line;
  }
  if (cascade.stopped_at)
    out << "stopping rule fired after stage " << *cascade.stopped_at << "\n";
  out << "best stage " << cascade.best_stage() << " (validation mAP "
      << fmt4(cascade.results[cascade.best_stage()].selection_metric) << ")\n";
  out << "cascade written to " << (fs::path(config.output) / "cascade").string() << "\n";
  return 0;
}

int cmd_verify(const ExperimentConfig& config, std::size_t threads, std::ostream& out) {
  const std::vector<double> deltas = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  const std::vector<double> epsilons = {0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  const std::vector<double> alphas = {0.0, 0.3, 0.7, 1.0};

  struct Cell {
    double delta, eps, alpha0;
    double delta_bar, analytic, mc, se, z;
    bool improvement, pass;
  };
  std::vector<Cell> cells;
  for (double a : alphas)
    for (double d : deltas)
      for (double e : epsilons) cells.push_back({d, e, a, 0, 0, 0, 0, 0, false, false});

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Cell& cell = cells[i];
      cell.delta_bar = predicted_teacher_noise(cell.eps, cell.delta);
      cell.analytic = cell.alpha0 * cell.delta + (1.0 - cell.alpha0) * cell.delta_bar;
      NoiseSpec spec{{cell.delta}, mix_seed(config.seed, kVerifyTag, i)};
      SyntheticTeacher teacher{TeacherMode::ComposeObserved, cell.eps};
      AlignmentEstimate est =
          monte_carlo_alignment(spec, teacher, cell.alpha0, config.verify_samples);
      cell.mc = est.estimate;
      cell.se = est.std_error;
      cell.z = est.std_error > 0.0 ? (est.estimate - cell.analytic) / est.std_error : 0.0;
      cell.pass = std::fabs(cell.z) <= 3.0;
      cell.improvement = predicted_gain(cell.eps, cell.delta, cell.alpha0).improvement;
    }
  };
  threads = std::max<std::size_t>(1, threads);
  if (threads == 1) {
    work(0, cells.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (cells.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads && t * chunk < cells.size(); ++t)
      pool.emplace_back(work, t * chunk, std::min(cells.size(), (t + 1) * chunk));
    for (auto& th : pool) th.join();
  }

  std::string csv = "delta,eps,alpha0,delta_bar,alignment_analytic,alignment_mc,std_error,z,"
                    "improvement_predicted,pass\n";
  std::size_t passed = 0;
  for (const Cell& c : cells) {
    csv += fmt(c.delta) + ',' + fmt(c.eps) + ',' + fmt(c.alpha0) + ',' + fmt(c.delta_bar) + ',' +
           fmt(c.analytic) + ',' + fmt(c.mc) + ',' + fmt(c.se) + ',' + fmt(c.z) + ',' +
           (c.improvement ? "1" : "0") + ',' + (c.pass ? "1" : "0") + '\n';
    if (c.pass) ++passed;
  }
  write_file(fs::path(config.output) / "verify.csv", csv);

  // One |z| panel per alpha0, stitched side by side.
  std::vector<std::string> row_labels, col_labels;
  for (double d : deltas) row_labels.push_back("d=" + tick_label(d));
  for (double e : epsilons) col_labels.push_back("e=" + tick_label(e));
  std::ostringstream svg;
  const double panel_w = 64 + 44.0 * epsilons.size() + 16;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << panel_w * alphas.size()
      << "\" height=\"" << 40 + 26.0 * deltas.size() + 28 << "\">\n";
  for (std::size_t a = 0; a < alphas.size(); ++a) {
    std::vector<std::vector<double>> panel(deltas.size(), std::vector<double>(epsilons.size()));
    for (std::size_t d = 0; d < deltas.size(); ++d)
      for (std::size_t e = 0; e < epsilons.size(); ++e)
        panel[d][e] = std::fabs(cells[(a * deltas.size() + d) * epsilons.size() + e].z);
    svg << "<svg x=\"" << panel_w * a << "\" y=\"0\">\n"
        << heatmap_svg("|z|, alpha0=" + tick_label(alphas[a]), row_labels, col_labels, panel, 0.0,
                       3.0)
        << "</svg>\n";
  }
  svg << "</svg>\n";
  write_file(fs::path(config.output) / "verify.svg", svg.str());

  const double rate = static_cast<double>(passed) / static_cast<double>(cells.size());
  out << "verified " << cells.size() << " (delta, eps, alpha0) cells at "
      << config.verify_samples << " samples each: " << passed << " within 3 standard errors ("
      << fmt4(rate) << ")\n";
  out << "wrote " << (fs::path(config.output) / "verify.csv").string() << "\n";
  if (rate < 0.99) {
    out << "FAIL: pass rate below 0.99\n";
    return 2;
  }
  return 0;
}

int cmd_alpha_sweep(const ExperimentConfig& config, std::ostream& out) {
  Dataset data = obtain_dataset(config, out);

  CascadeConfig cc;
  cc.model = model_for(config, data.spec);
  cc.seed = config.seed;
  cc.use_class_weights = config.class_weights;
  cc.positive_only_weights = config.positive_only_weights;

  StagePlan student;
  if (config.schedule.size() > 1)
    student = config.schedule[1];
  else if (!config.schedule.empty())
    student = config.schedule[0];
  student.stage = 0;
  student.teachers.clear();
  student.alphas = {1.0};

  AlphaSearchResult res = alpha_search(data, config.sweep_grid, cc, student);

  std::string csv = "alpha0,val_map,test_map\n";
  std::vector<double> xs, val_series, test_series;
  for (const AlphaRow& row : res.rows) {
    csv += fmt(row.alpha0) + ',' + fmt(row.val_map) + ',' + fmt(row.test_map) + '\n';
    xs.push_back(row.alpha0);
    val_series.push_back(row.val_map);
    test_series.push_back(row.test_map);
  }
  write_file(fs::path(config.output) / "alpha_sweep.csv", csv);
  write_file(fs::path(config.output) / "alpha_sweep.svg",
             line_chart_svg("student mAP by alpha0", "alpha0", "mAP", xs,
                            {val_series, test_series}, {"validation", "test"}));

  out << "teacher baseline: val " << fmt4(res.baseline_val_map) << "  test "
      << fmt4(res.baseline_test_map) << "\n";
  out << "alpha0  val_map  test_map\n";
  for (const AlphaRow& row : res.rows) {
    char line[64];
    std::snprintf(line, sizeof line, "%6.2f  %s   %s\n", row.alpha0, fmt4(row.val_map).c_str(),
                  fmt4(row.test_map).c_str());
    out << line;
  }
  out << "best alpha0 " << fmt4(res.best_alpha0) << " by validation mAP\n";
  out << "wrote " << (fs::path(config.output) / "alpha_sweep.csv").string() << "\n";
  return 0;
}

int cmd_gradcheck(std::ostream& out) {
  std::vector<GradSuiteCase> cases = gradient_suite(20240801);
  bool all_pass = true;
  for (const GradSuiteCase& c : cases) {
    char line[96];
    std::snprintf(line, sizeof line, "%-34s rel_err %.3e  %s\n", c.name.c_str(), c.rel_err,
                  c.pass ? "pass" : "FAIL");
    out << line;
    all_pass = all_pass && c.pass;
  }
  out << (all_pass ? "all gradients match finite differences\n"
                   : "FAIL: analytic and numeric gradients disagree\n");
  return all_pass ? 0 : 2;
}

int cmd_transfer(const ExperimentConfig& config, std::ostream& out) {
  if (!config.transfer_cascade)
    throw ConfigError("transfer.cascade must point at a saved cascade directory");
  Cascade cascade = load_cascade(*config.transfer_cascade);
  if (cascade.models.empty()) throw ConfigError("transfer: the cascade has no trained stages");

  Dataset data;
  if (config.probe_dataset_path) {
    out << "loading probe dataset from " << *config.probe_dataset_path << "\n";
    data = load_dataset(*config.probe_dataset_path);
  } else {
    data = obtain_dataset(config, out);
  }
  if (cascade.config.model.feature_dim != data.spec.feature_dim)
    throw ConfigError("cascade models expect feature_dim " +
                      std::to_string(cascade.config.model.feature_dim) +
                      " but the probe dataset has " + std::to_string(data.spec.feature_dim));
  if (config.probe_against_truth && !data.train.has_truth)
    throw ConfigError("probe dataset has no true labels; set transfer.labels to \"observed\"");

  std::vector<std::size_t> stages = config.transfer_stages;
  if (stages.empty()) {
    stages.push_back(0);
    if (cascade.models.size() > 1) stages.push_back(cascade.models.size() - 1);
  }
  for (std::size_t s : stages)
    if (s >= cascade.models.size())
      throw ConfigError("transfer stage " + std::to_string(s) + " does not exist; cascade has " +
                        std::to_string(cascade.models.size()) + " stages");

  const std::size_t C = cascade.config.model.classes;
  auto labels_of = [&](const Split& split) {
    Tensor m({split.bags.size(), C});
    for (std::size_t b = 0; b < split.bags.size(); ++b)
      for (std::size_t c = 0; c < C; ++c)
        m.at(b, c) = config.probe_against_truth ? split.bags[b].true_labels[c]
                                                : split.bags[b].observed[c];
    return m;
  };
  Tensor train_labels = labels_of(data.train);
  Tensor test_labels = labels_of(data.test);

  std::string csv = "stage,probe_map,probe_mauc,probe_lwlrap,argmax_accuracy\n";
  out << "stage  probe_map  probe_mauc  accuracy\n";
  std::vector<double> maps;
  for (std::size_t s : stages) {
    WeanetModel& model = cascade.models[s];
    LinearProbe probe =
        train_probe(extract_embeddings(model, data.train.bags), train_labels, config.probe);
    Tensor scores = probe.predict(extract_embeddings(model, data.test.bags));
    MetricsReport rep = evaluate_scores(scores, test_labels, config.threshold);
    const double acc = argmax_accuracy(scores, test_labels);
    csv += std::to_string(s) + ',' + opt_fmt(rep.map) + ',' + opt_fmt(rep.mauc) + ',' +
           opt_fmt(rep.lw) + ',' + fmt(acc) + '\n';
    char line[96];
    std::snprintf(line, sizeof line, "%5zu  %s     %s      %s\n", s,
                  opt_fmt4(rep.map).c_str(), opt_fmt4(rep.mauc).c_str(), fmt4(acc).c_str());
    out << line;
    maps.push_back(rep.map.value_or(0.0));
  }
  write_file(fs::path(config.output) / "transfer.csv", csv);
  if (maps.size() >= 2) {
    const double gain = maps.back() - maps.front();
    out << "probe mAP " << (gain >= 0 ? "gain " : "drop ") << fmt4(std::fabs(gain))
        << " from stage " << stages.front() << " to stage " << stages.back() << "\n";
  }
  out << "wrote " << (fs::path(config.output) / "transfer.csv").string() << "\n";
  return 0;
}

int cmd_dump_attention(const ExperimentConfig& config, std::ostream& out) {
  std::optional<WeanetModel> model;
  if (config.attention_model_path) {
    model.emplace(load_model(*config.attention_model_path));
  } else if (config.attention_cascade) {
    Cascade cascade = load_cascade(*config.attention_cascade);
    if (cascade.models.empty()) throw ConfigError("attention: the cascade has no trained stages");
    const std::size_t stage = config.attention_stage.value_or(cascade.best_stage());
    if (stage >= cascade.models.size())
      throw ConfigError("attention stage " + std::to_string(stage) + " does not exist; cascade has " +
                        std::to_string(cascade.models.size()) + " stages");
    model.emplace(std::move(cascade.models[stage]));
  } else {
    throw ConfigError("attention needs either attention.model or attention.cascade");
  }

  Dataset data = obtain_dataset(config, out);
  const Split& split = config.attention_split == "train"
                           ? data.train
                           : (config.attention_split == "val" ? data.val : data.test);
  if (config.attention_bag >= split.bags.size())
    throw ConfigError("attention.bag " + std::to_string(config.attention_bag) +
                      " is out of range; the " + config.attention_split + " split has " +
                      std::to_string(split.bags.size()) + " bags");
  const Bag& bag = split.bags[config.attention_bag];

  auto fwd = model->forward(bag.features);
  const std::size_t C = fwd.attention.extent(0), K = fwd.attention.extent(1);
  const double uniform = 1.0 / static_cast<double>(K);

  std::string csv = "class,segment,score,attention,uniform_weight\n";
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < K; ++k)
      csv += std::to_string(c) + ',' + std::to_string(k) + ',' + fmt(fwd.scores->val.at(c, k)) +
             ',' + fmt(fwd.attention.at(c, k)) + ',' + fmt(uniform) + '\n';
  write_file(fs::path(config.output) / "attention.csv", csv);

  out << "bag " << bag.id << " (" << config.attention_split << "[" << config.attention_bag
      << "]): " << C << " classes x " << K << " segments, uniform weight " << fmt4(uniform)
      << "\n";
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (fwd.attention.at(c, k) > fwd.attention.at(c, arg)) arg = k;
    char line[96];
    std::snprintf(line, sizeof line, "class %zu: peak attention %s at segment %zu (label %g)\n", c,
                  fmt4(fwd.attention.at(c, arg)).c_str(), arg, bag.true_labels[c]);
    out << line;
  }
  out << "wrote " << (fs::path(config.output) / "attention.csv").string() << "\n";
  return 0;
}

int cmd_config_schema(std::ostream& out) {
  out << config_schema_text();
  return 0;
}

// ---------------------------------------------------------------------------
// Driver.

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"sequential self-teaching for weakly labeled data"};
  app.require_subcommand(1);

  std::string config_path, out_dir, preset = "standard";
  std::optional<std::uint64_t> seed_override;
  std::size_t threads = 1;
  app.add_option("--config", config_path, "experiment config JSON path");
  app.add_option("--seed", seed_override, "override the config seed");
  app.add_option("--threads", threads, "worker cap for Monte-Carlo sweeps");
  app.add_option("--out", out_dir, "override the output directory");

  CLI::App* generate = app.add_subcommand("generate", "synthesize and save a dataset");
  generate->add_option("--preset", preset, "dataset preset: standard or audioset-like");
  CLI::App* train = app.add_subcommand("train", "run a cascade and report per-stage metrics");
  train->add_flag("--stop-rule", "halt at validation saturation");
  CLI::App* verify =
      app.add_subcommand("verify", "Monte-Carlo check of the noise-blend predictions");
  CLI::App* sweep = app.add_subcommand("alpha-sweep", "train one student per alpha0 grid point");
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  CLI::App* transfer = app.add_subcommand("transfer", "linear probes on stage embeddings");
  CLI::App* attention = app.add_subcommand("dump-attention", "per-segment scores and weights");
  CLI::App* schema = app.add_subcommand("config-schema", "print the documented config schema");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    ExperimentConfig config;
    if (!config_path.empty()) {
      std::ifstream in(config_path, std::ios::binary);
      if (!in) throw FormatError(config_path + ": cannot open config");
      std::ostringstream text;
      text << in.rdbuf();
      config = experiment_from_json(text.str());
    }
    if (seed_override) {
      config.seed = *seed_override;
      if (!config.dataset_seed_explicit) config.dataset.seed = *seed_override;
      config.probe.seed = *seed_override;
    }
    if (!out_dir.empty()) config.output = out_dir;
    if (generate->parsed()) {
      if (preset == "audioset-like") {
        DatasetSpec base = audioset_like_spec();
        base.seed = config.dataset.seed;
        base.delta = config.dataset.delta;
        config.dataset = base;
      } else if (preset != "standard") {
        throw ConfigError("unknown preset \"" + preset + "\" (use standard or audioset-like)");
      }
      return cmd_generate(config, out);
    }
    if (train->parsed()) {
      if (train->count("--stop-rule") > 0) config.stop_rule = true;
      return cmd_train(config, out);
    }
    if (verify->parsed()) return cmd_verify(config, threads, out);
    if (sweep->parsed()) return cmd_alpha_sweep(config, out);
    if (gradcheck->parsed()) return cmd_gradcheck(out);
    if (transfer->parsed()) return cmd_transfer(config, out);
    if (attention->parsed()) return cmd_dump_attention(config, out);
    if (schema->parsed()) return cmd_config_schema(out);
    err << "error: no subcommand\n";
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace sustain
