#include "sustain/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sustain/errors.hpp"

namespace fs = std::filesystem;

namespace sustain {

namespace {

constexpr std::uint16_t kFeatureVersion = 1;
constexpr std::uint16_t kModelVersion = 1;
constexpr std::uint64_t kTemplateTag = 0x74656d706cull;
constexpr std::uint64_t kNoiseTagBase = 0x6c626c6e7aull;

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void put_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void put_u16(std::ostream& out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  put_bytes(out, b, 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  put_bytes(out, b, 4);
}

void put_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  put_bytes(out, b, 8);
}

bool get_bytes(std::istream& in, void* data, std::size_t n) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(in.gcount()) == n;
}

std::uint16_t get_u16(std::istream& in, const std::string& path, const char* what) {
  unsigned char b[2];
  if (!get_bytes(in, b, 2)) throw FormatError(path + ": truncated while reading " + what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in, const std::string& path, const char* what) {
  unsigned char b[4];
  if (!get_bytes(in, b, 4)) throw FormatError(path + ": truncated while reading " + what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

float get_f32(std::istream& in, const std::string& path, const char* what) {
  std::uint32_t bits = get_u32(in, path, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

double get_f64(std::istream& in, const std::string& path, const char* what) {
  unsigned char b[8];
  if (!get_bytes(in, b, 8)) throw FormatError(path + ": truncated while reading " + what);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

double DatasetSpec::prior_for(std::size_t c) const {
  if (priors.empty()) throw ConfigError("dataset spec has no class priors");
  return priors.size() == 1 ? priors[0] : priors.at(c);
}

void DatasetSpec::validate() const {
  if (classes == 0) throw ConfigError("dataset spec: classes must be positive");
  if (train_bags == 0 || val_bags == 0 || test_bags == 0)
    throw ConfigError("dataset spec: every split needs at least one bag");
  if (frames == 0 || feature_dim == 0)
    throw ConfigError("dataset spec: frames and feature_dim must be positive");
  if (template_len == 0 || template_len > frames)
    throw ConfigError("dataset spec: template length " + std::to_string(template_len) +
                      " does not fit in " + std::to_string(frames) + " frames");
  if (events_min == 0 || events_max < events_min)
    throw ConfigError("dataset spec: events_min/events_max must satisfy 1 <= min <= max");
  if (!(overlap_prob >= 0.0 && overlap_prob <= 1.0))
    throw ConfigError("dataset spec: overlap_prob must lie in [0, 1]");
  if (!(feature_noise >= 0.0)) throw ConfigError("dataset spec: feature_noise must be >= 0");
  if (priors.size() != 1 && priors.size() != classes)
    throw ConfigError("dataset spec: " + std::to_string(priors.size()) + " priors for " +
                      std::to_string(classes) + " classes");
  for (double p : priors)
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("dataset spec: priors must lie in [0, 1]");
  if (!multi_label) {
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += prior_for(c);
    if (std::fabs(sum - 1.0) > 1e-9)
      throw ConfigError("dataset spec: single-event priors must sum to 1, got " + std::to_string(sum));
  }
  NoiseSpec ns{delta, seed};
  ns.validate(classes);
}

Tensor class_template(const DatasetSpec& spec, std::size_t c) {
  Rng rng(mix_seed(spec.seed, kTemplateTag, c));
  Tensor t({spec.template_len, spec.feature_dim});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * spec.template_gain;
  return t;
}

std::uint64_t split_noise_seed(const DatasetSpec& spec, std::size_t split_index) {
  return mix_seed(spec.seed, kNoiseTagBase, split_index);
}

namespace {

struct SplitPlan {
  std::size_t index;  // 0 train, 1 val, 2 test
  std::size_t bags;
  const char* name;
};

Tensor sample_truth(const DatasetSpec& spec, std::size_t split, std::size_t attempt,
                    std::size_t n_bags) {
  Tensor truth = Tensor::zeros({n_bags, spec.classes});
  for (std::size_t b = 0; b < n_bags; ++b) {
    Rng rng(mix_seed(spec.seed, (split << 32) | attempt, b));
    if (spec.multi_label) {
      for (std::size_t c = 0; c < spec.classes; ++c)
        truth[b * spec.classes + c] = rng.bernoulli(spec.prior_for(c)) ? 1.0 : 0.0;
    } else {
      double u = rng.uniform();
      std::size_t chosen = spec.classes - 1;
      double acc = 0.0;
      for (std::size_t c = 0; c < spec.classes; ++c) {
        acc += spec.prior_for(c);
        if (u < acc) { chosen = c; break; }
      }
      truth[b * spec.classes + chosen] = 1.0;
    }
  }
  return truth;
}

Tensor synthesize_features(const DatasetSpec& spec, std::size_t split, std::size_t attempt,
                           std::size_t bag_index, const Tensor& truth_row,
                           const std::vector<Tensor>& templates,
                           std::vector<EventSpan>& events_out) {
  Rng rng(mix_seed(spec.seed, (split << 32) | attempt, bag_index));
  // Burn the label draws so features continue the same per-bag stream that
  // produced the labels.
  if (spec.multi_label) {
    for (std::size_t c = 0; c < spec.classes; ++c) rng.bernoulli(spec.prior_for(c));
  } else {
    rng.uniform();
  }

  const std::size_t F = spec.frames, D = spec.feature_dim, T = spec.template_len;
  Tensor feats({F, D});
  for (std::size_t i = 0; i < feats.numel(); ++i) feats[i] = rng.normal() * spec.feature_noise;

  std::vector<std::pair<std::size_t, std::size_t>> spans;  // [start, end)
  const std::size_t max_offset = F - T;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    if (truth_row[c] == 0.0) continue;
    const std::size_t n_events =
        spec.events_min + rng.below(spec.events_max - spec.events_min + 1);
    for (std::size_t e = 0; e < n_events; ++e) {
      std::size_t offset = rng.below(max_offset + 1);
      if (!rng.bernoulli(spec.overlap_prob)) {
        for (int attempt_place = 0; attempt_place < 20; ++attempt_place) {
          bool clear = true;
          for (const auto& span : spans)
            if (offset < span.second && span.first < offset + T) { clear = false; break; }
          if (clear) break;
          offset = rng.below(max_offset + 1);
        }
      }
      spans.emplace_back(offset, offset + T);
      events_out.push_back({c, offset, T});
      const Tensor& tpl = templates[c];
      for (std::size_t f = 0; f < T; ++f)
        for (std::size_t d = 0; d < D; ++d)
          feats[(offset + f) * D + d] += tpl[f * D + d];
    }
  }
  for (std::size_t i = 0; i < feats.numel(); ++i) feats[i] = quantize_f32(feats[i]);
  return feats;
}

Split generate_split(const DatasetSpec& spec, const SplitPlan& plan,
                     const std::vector<Tensor>& templates) {
  Tensor truth({1, 1});
  std::size_t attempt = 0;
  for (;; ++attempt) {
    if (attempt >= 1000)
      throw ConfigError("could not draw a " + std::string(plan.name) +
                        " split with a positive bag for every class; raise priors or bag count");
    truth = sample_truth(spec, plan.index, attempt, plan.bags);
    if (plan.index != 2) break;  // only the test split demands full coverage
    bool covered = true;
    for (std::size_t c = 0; c < spec.classes && covered; ++c) {
      bool any = false;
      for (std::size_t b = 0; b < plan.bags; ++b) any = any || truth[b * spec.classes + c] != 0.0;
      covered = any;
    }
    if (covered) break;
  }

  NoiseSpec noise{spec.delta, split_noise_seed(spec, plan.index)};
  Tensor observed = inject_noise(truth, noise);

  Split split;
  split.has_truth = true;
  split.bags.reserve(plan.bags);
  for (std::size_t b = 0; b < plan.bags; ++b) {
    Bag bag;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "%s-%06zu", plan.name, b);
    bag.id = idbuf;
    Tensor row({spec.classes});
    for (std::size_t c = 0; c < spec.classes; ++c) row[c] = truth[b * spec.classes + c];
    bag.features = synthesize_features(spec, plan.index, attempt, b, row, templates, bag.events);
    bag.true_labels = row;
    bag.observed = Tensor({spec.classes});
    for (std::size_t c = 0; c < spec.classes; ++c)
      bag.observed[c] = observed[b * spec.classes + c];
    split.bags.push_back(std::move(bag));
  }
  return split;
}

}  // namespace

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  std::vector<Tensor> templates;
  templates.reserve(spec.classes);
  for (std::size_t c = 0; c < spec.classes; ++c) templates.push_back(class_template(spec, c));

  Dataset ds;
  ds.spec = spec;
  ds.train = generate_split(spec, {0, spec.train_bags, "train"}, templates);
  ds.val = generate_split(spec, {1, spec.val_bags, "val"}, templates);
  ds.test = generate_split(spec, {2, spec.test_bags, "test"}, templates);
  return ds;
}

void write_feature_file(const std::string& path, const Tensor& features) {
  if (features.ndim() != 2)
    throw DimensionError("feature file expects [frames, dim], got " + shape_str(features.shape()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write("SSTN", 4);
  put_u16(out, kFeatureVersion);
  put_u32(out, static_cast<std::uint32_t>(features.extent(0)));
  put_u32(out, static_cast<std::uint32_t>(features.extent(1)));
  for (std::size_t i = 0; i < features.numel(); ++i)
    put_f32(out, static_cast<float>(features[i]));
  if (!out) throw FormatError(path + ": write failed");
}

Tensor read_feature_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  char magic[4];
  if (!get_bytes(in, magic, 4) || std::memcmp(magic, "SSTN", 4) != 0)
    throw FormatError(path + ": bad magic at offset 0 (expected SSTN)");
  const std::uint16_t version = get_u16(in, path, "version");
  if (version != kFeatureVersion)
    throw FormatError(path + ": unsupported feature version " + std::to_string(version));
  const std::uint32_t frames = get_u32(in, path, "frame count");
  const std::uint32_t dim = get_u32(in, path, "feature dim");
  if (frames == 0 || dim == 0)
    throw FormatError(path + ": declared zero frames or dim");
  Tensor t({frames, dim});
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<double>(get_f32(in, path, "feature payload"));
  char extra;
  if (in.read(&extra, 1))
    throw FormatError(path + ": trailing bytes after declared payload");
  return t;
}

namespace {

void write_labels_csv(const std::string& path, const Split& split, std::size_t C) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << "bag_id";
  for (std::size_t c = 0; c < C; ++c) out << ",obs_" << c;
  if (split.has_truth)
    for (std::size_t c = 0; c < C; ++c) out << ",true_" << c;
  out << '\n';
  for (const Bag& bag : split.bags) {
    out << bag.id;
    for (std::size_t c = 0; c < C; ++c)
      out << ',' << (bag.observed[c] != 0.0 ? 1 : 0);
    if (split.has_truth)
      for (std::size_t c = 0; c < C; ++c)
        out << ',' << (bag.true_labels[c] != 0.0 ? 1 : 0);
    out << '\n';
  }
  if (!out) throw FormatError(path + ": write failed");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_label_bit(const std::string& field, const std::string& path, std::size_t lineno) {
  if (field == "0") return 0.0;
  if (field == "1") return 1.0;
  throw FormatError(path + ":" + std::to_string(lineno) + ": label entry '" + field +
                    "' is not 0 or 1");
}

Split read_labels_csv(const std::string& path, std::size_t C) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": missing header");
  auto header = split_csv_line(line);
  const std::size_t with_truth = 1 + 2 * C, without_truth = 1 + C;
  bool has_truth;
  if (header.size() == with_truth)
    has_truth = true;
  else if (header.size() == without_truth)
    has_truth = false;
  else
    throw FormatError(path + ": label-column count " + std::to_string(header.size()) +
                      " matches neither " + std::to_string(without_truth) + " (observed only) nor " +
                      std::to_string(with_truth) + " (observed + true) for " + std::to_string(C) +
                      " classes");
  if (header[0] != "bag_id") throw FormatError(path + ": header must start with bag_id");

  Split split;
  split.has_truth = has_truth;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(header.size()) + " columns, got " +
                        std::to_string(fields.size()));
    Bag bag;
    bag.id = fields[0];
    bag.observed = Tensor({C});
    bag.true_labels = Tensor::zeros({C});
    for (std::size_t c = 0; c < C; ++c)
      bag.observed[c] = parse_label_bit(fields[1 + c], path, lineno);
    if (has_truth)
      for (std::size_t c = 0; c < C; ++c)
        bag.true_labels[c] = parse_label_bit(fields[1 + C + c], path, lineno);
    split.bags.push_back(std::move(bag));
  }
  return split;
}

void save_split(const Dataset& ds, const Split& split, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "features");
  write_labels_csv((fs::path(dir) / "labels.csv").string(), split, ds.spec.classes);
  for (const Bag& bag : split.bags)
    write_feature_file((fs::path(dir) / "features" / (bag.id + ".sstn")).string(), bag.features);
}

Split load_split(const std::string& dir, std::size_t C) {
  Split split = read_labels_csv((fs::path(dir) / "labels.csv").string(), C);
  for (Bag& bag : split.bags)
    bag.features = read_feature_file((fs::path(dir) / "features" / (bag.id + ".sstn")).string());
  return split;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream spec_out(fs::path(dir) / "spec.json");
  if (!spec_out) throw FormatError(dir + "/spec.json: cannot open for writing");
  spec_out << dataset_spec_json(ds.spec) << '\n';
  save_split(ds, ds.train, (fs::path(dir) / "train").string());
  save_split(ds, ds.val, (fs::path(dir) / "val").string());
  save_split(ds, ds.test, (fs::path(dir) / "test").string());
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream spec_in(fs::path(dir) / "spec.json");
  if (!spec_in) throw FormatError(dir + "/spec.json: cannot open");
  std::stringstream buf;
  buf << spec_in.rdbuf();
  Dataset ds;
  ds.spec = dataset_spec_from_json(buf.str());
  ds.train = load_split((fs::path(dir) / "train").string(), ds.spec.classes);
  ds.val = load_split((fs::path(dir) / "val").string(), ds.spec.classes);
  ds.test = load_split((fs::path(dir) / "test").string(), ds.spec.classes);
  return ds;
}

std::string dataset_spec_json(const DatasetSpec& spec) {
  nlohmann::json j;
  j["classes"] = spec.classes;
  j["train_bags"] = spec.train_bags;
  j["val_bags"] = spec.val_bags;
  j["test_bags"] = spec.test_bags;
  j["frames"] = spec.frames;
  j["feature_dim"] = spec.feature_dim;
  j["template_len"] = spec.template_len;
  j["template_gain"] = spec.template_gain;
  j["events_min"] = spec.events_min;
  j["events_max"] = spec.events_max;
  j["overlap_prob"] = spec.overlap_prob;
  j["feature_noise"] = spec.feature_noise;
  j["multi_label"] = spec.multi_label;
  j["priors"] = spec.priors;
  j["delta"] = spec.delta;
  j["seed"] = spec.seed;
  return j.dump(2);
}

DatasetSpec dataset_spec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("dataset spec: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("dataset spec: top level must be an object");
  DatasetSpec spec;
  spec.priors.clear();
  spec.delta.clear();
  const char* known[] = {"classes", "train_bags", "val_bags", "test_bags", "frames",
                         "feature_dim", "template_len", "template_gain", "events_min",
                         "events_max", "overlap_prob", "feature_noise", "multi_label",
                         "priors", "delta", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("dataset spec: unknown key '" + it.key() + "'");
  }
  try {
    spec.classes = j.at("classes").get<std::size_t>();
    spec.train_bags = j.at("train_bags").get<std::size_t>();
    spec.val_bags = j.at("val_bags").get<std::size_t>();
    spec.test_bags = j.at("test_bags").get<std::size_t>();
    spec.frames = j.at("frames").get<std::size_t>();
    spec.feature_dim = j.at("feature_dim").get<std::size_t>();
    spec.template_len = j.at("template_len").get<std::size_t>();
    spec.template_gain = j.at("template_gain").get<double>();
    spec.events_min = j.at("events_min").get<std::size_t>();
    spec.events_max = j.at("events_max").get<std::size_t>();
    spec.overlap_prob = j.at("overlap_prob").get<double>();
    spec.feature_noise = j.at("feature_noise").get<double>();
    spec.multi_label = j.at("multi_label").get<bool>();
    spec.priors = j.at("priors").get<std::vector<double>>();
    spec.delta = j.at("delta").get<std::vector<double>>();
    spec.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

DatasetSpec standard_benchmark_spec() {
  DatasetSpec spec;  // defaults are the benchmark
  return spec;
}

DatasetSpec audioset_like_spec() {
  DatasetSpec spec;
  spec.priors.clear();
  // Power-law positive rates, most classes rare.
  for (std::size_t c = 0; c < spec.classes; ++c)
    spec.priors.push_back(0.5 / std::pow(static_cast<double>(c + 1), 1.2));
  return spec;
}

void save_model(const WeanetModel& model, const std::string& path) {
  const std::string header = model_config_json(model.config());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write("SSTM", 4);
  put_u16(out, kModelVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put_u32(out, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& e : model.params().entries()) {
    put_u32(out, static_cast<std::uint32_t>(e.node->val.numel()));
    for (std::size_t i = 0; i < e.node->val.numel(); ++i) put_f64(out, e.node->val[i]);
  }
  if (!out) throw FormatError(path + ": write failed");
}

WeanetModel load_model(const std::string& path, std::optional<std::size_t> expect_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  char magic[4];
  if (!get_bytes(in, magic, 4) || std::memcmp(magic, "SSTM", 4) != 0)
    throw FormatError(path + ": bad magic at offset 0 (expected SSTM)");
  const std::uint16_t version = get_u16(in, path, "version");
  if (version != kModelVersion)
    throw FormatError(path + ": unsupported model version " + std::to_string(version));
  const std::uint32_t header_len = get_u32(in, path, "header length");
  std::string header(header_len, '\0');
  if (!get_bytes(in, header.data(), header_len))
    throw FormatError(path + ": truncated while reading architecture header");

  ModelConfig cfg;
  try {
    cfg = model_config_from_json(header);
  } catch (const Error& e) {
    throw FormatError(path + ": architecture header: " + e.what());
  }
  if (expect_classes && cfg.classes != *expect_classes)
    throw FormatError(path + ": snapshot trained with " + std::to_string(cfg.classes) +
                      " classes, expected " + std::to_string(*expect_classes));

  WeanetModel model(cfg, 0);
  const std::uint32_t n_params = get_u32(in, path, "parameter count");
  if (n_params != model.params().size())
    throw FormatError(path + ": snapshot has " + std::to_string(n_params) +
                      " parameter tensors, architecture implies " +
                      std::to_string(model.params().size()));
  for (auto& e : model.params().entries()) {
    const std::uint32_t numel = get_u32(in, path, "tensor size");
    if (numel != e.node->val.numel())
      throw FormatError(path + ": tensor '" + e.name + "' has " + std::to_string(numel) +
                        " values, architecture implies " + std::to_string(e.node->val.numel()));
    for (std::size_t i = 0; i < e.node->val.numel(); ++i)
      e.node->val[i] = get_f64(in, path, "parameter payload");
  }
  char extra;
  if (in.read(&extra, 1))
    throw FormatError(path + ": trailing bytes after declared payload");
  return model;
}

std::vector<double> positive_rates(const Split& split, std::size_t classes) {
  std::vector<double> rates(classes, 0.0);
  if (split.bags.empty()) return rates;
  for (const Bag& bag : split.bags)
    for (std::size_t c = 0; c < classes; ++c) rates[c] += bag.observed[c] != 0.0 ? 1.0 : 0.0;
  for (double& r : rates) r /= static_cast<double>(split.bags.size());
  return rates;
}

}  // namespace sustain
