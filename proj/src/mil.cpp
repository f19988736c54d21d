#include "sustain/mil.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "sustain/errors.hpp"
#include "sustain/rng.hpp"

namespace sustain {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ConfigError(std::string("model config: ") + what + " must be positive");
  };
  positive(feature_dim, "feature_dim");
  positive(classes, "classes");
  positive(conv1_channels, "conv1_channels");
  positive(conv1_kernel, "conv1_kernel");
  positive(conv1_stride, "conv1_stride");
  positive(conv2_channels, "conv2_channels");
  positive(conv2_kernel, "conv2_kernel");
  positive(conv2_stride, "conv2_stride");
  positive(embed_dim, "embed_dim");
  positive(embed_kernel, "embed_kernel");
  positive(embed_stride, "embed_stride");
}

std::size_t ModelConfig::receptive_field() const {
  std::size_t rf = embed_kernel;
  rf = (rf - 1) * conv2_stride + conv2_kernel;
  rf = (rf - 1) * conv1_stride + conv1_kernel;
  return rf;
}

std::size_t ModelConfig::hop() const {
  return conv1_stride * conv2_stride * embed_stride;
}

std::size_t ModelConfig::segment_count(std::size_t frames) const {
  auto layer = [](std::size_t len, std::size_t kernel, std::size_t stride) {
    if (len < kernel)
      throw GeometryError("bag of " + std::to_string(len) + " frames is shorter than a " +
                          std::to_string(kernel) + "-frame layer kernel");
    return (len - kernel) / stride + 1;
  };
  std::size_t len = layer(frames, conv1_kernel, conv1_stride);
  len = layer(len, conv2_kernel, conv2_stride);
  len = layer(len, embed_kernel, embed_stride);
  return len;
}

const char* pooling_name(Pooling p) {
  switch (p) {
    case Pooling::Attention: return "attention";
    case Pooling::Mean: return "mean";
    case Pooling::Max: return "max";
  }
  return "attention";
}

Pooling pooling_from_name(const std::string& name) {
  if (name == "attention") return Pooling::Attention;
  if (name == "mean") return Pooling::Mean;
  if (name == "max") return Pooling::Max;
  throw ConfigError("unknown pooling '" + name + "' (expected attention, mean, or max)");
}

std::string model_config_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["feature_dim"] = cfg.feature_dim;
  j["classes"] = cfg.classes;
  j["conv1_channels"] = cfg.conv1_channels;
  j["conv1_kernel"] = cfg.conv1_kernel;
  j["conv1_stride"] = cfg.conv1_stride;
  j["conv2_channels"] = cfg.conv2_channels;
  j["conv2_kernel"] = cfg.conv2_kernel;
  j["conv2_stride"] = cfg.conv2_stride;
  j["embed_dim"] = cfg.embed_dim;
  j["embed_kernel"] = cfg.embed_kernel;
  j["embed_stride"] = cfg.embed_stride;
  j["pooling"] = pooling_name(cfg.pooling);
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("model config: invalid JSON: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg.feature_dim = j.at("feature_dim").get<std::size_t>();
    cfg.classes = j.at("classes").get<std::size_t>();
    cfg.conv1_channels = j.at("conv1_channels").get<std::size_t>();
    cfg.conv1_kernel = j.at("conv1_kernel").get<std::size_t>();
    cfg.conv1_stride = j.at("conv1_stride").get<std::size_t>();
    cfg.conv2_channels = j.at("conv2_channels").get<std::size_t>();
    cfg.conv2_kernel = j.at("conv2_kernel").get<std::size_t>();
    cfg.conv2_stride = j.at("conv2_stride").get<std::size_t>();
    cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
    cfg.embed_kernel = j.at("embed_kernel").get<std::size_t>();
    cfg.embed_stride = j.at("embed_stride").get<std::size_t>();
    cfg.pooling = pooling_from_name(j.at("pooling").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

WeanetModel::WeanetModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(seed, 0x6d6f64656cull));
  auto conv_init = [&](std::size_t out_ch, std::size_t in_ch, std::size_t kernel) {
    // Uniform with variance 2 / fan_in, which keeps ReLU activations from
    // shrinking layer over layer.
    const double limit = std::sqrt(6.0 / static_cast<double>(in_ch * kernel));
    return Tensor::uniform({out_ch, in_ch, kernel}, limit, rng);
  };
  params_.add("conv1.w", conv_init(cfg_.conv1_channels, cfg_.feature_dim, cfg_.conv1_kernel));
  params_.add("conv1.b", Tensor::zeros({cfg_.conv1_channels}));
  params_.add("conv2.w", conv_init(cfg_.conv2_channels, cfg_.conv1_channels, cfg_.conv2_kernel));
  params_.add("conv2.b", Tensor::zeros({cfg_.conv2_channels}));
  params_.add("embed.w", conv_init(cfg_.embed_dim, cfg_.conv2_channels, cfg_.embed_kernel));
  params_.add("embed.b", Tensor::zeros({cfg_.embed_dim}));
  params_.add("head.w", Tensor::zeros({cfg_.classes, cfg_.embed_dim, 1}));
  params_.add("head.b", Tensor::zeros({cfg_.classes}));
  params_.add("attn.w", Tensor::zeros({cfg_.classes, cfg_.classes}));
}

void WeanetModel::freeze_attention(bool frozen) {
  params_.set_trainable("attn.w", !frozen);
}

bool WeanetModel::attention_frozen() const {
  return !params_.is_trainable("attn.w");
}

WeanetModel::Forward WeanetModel::forward(const Tensor& features) {
  if (features.ndim() != 2 || features.extent(1) != cfg_.feature_dim)
    throw DimensionError("forward: features must be [frames, " +
                         std::to_string(cfg_.feature_dim) + "], got " +
                         shape_str(features.shape()));
  const std::size_t frames = features.extent(0);
  cfg_.segment_count(frames);  // geometry check up front

  // Conv layers take [1, channels, length]; bag features arrive frame-major.
  Tensor chans({1, cfg_.feature_dim, frames});
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t d = 0; d < cfg_.feature_dim; ++d)
      chans[d * frames + f] = features[f * cfg_.feature_dim + d];

  auto x = make_constant(std::move(chans));
  auto h1 = conv1d(x, params_.at("conv1.w"), params_.at("conv1.b"),
                   cfg_.conv1_stride, 0, Activation::ReLU);
  auto h2 = conv1d(h1, params_.at("conv2.w"), params_.at("conv2.b"),
                   cfg_.conv2_stride, 0, Activation::ReLU);
  auto emb = conv1d(h2, params_.at("embed.w"), params_.at("embed.b"),
                    cfg_.embed_stride, 0, Activation::ReLU);
  auto head = conv1d(emb, params_.at("head.w"), params_.at("head.b"),
                     1, 0, Activation::Sigmoid);
  Forward out;
  out.scores = squeeze_leading(head);
  const std::size_t C = cfg_.classes;
  const std::size_t K = out.scores->val.extent(1);

  out.embeddings = Tensor({cfg_.embed_dim, K}, emb->val.vec());

  switch (cfg_.pooling) {
    case Pooling::Attention: {
      auto att = attention_pool(out.scores, params_.at("attn.w"));
      out.pooled = att.pooled;
      out.attention = att.weights;
      break;
    }
    case Pooling::Mean: {
      out.pooled = mean_pool(out.scores);
      out.attention = Tensor::full({C, K}, 1.0 / static_cast<double>(K));
      break;
    }
    case Pooling::Max: {
      out.pooled = max_pool(out.scores);
      out.attention = Tensor::zeros({C, K});
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t arg = 0;
        for (std::size_t t = 1; t < K; ++t)
          if (out.scores->val[c * K + t] > out.scores->val[c * K + arg]) arg = t;
        out.attention[c * K + arg] = 1.0;
      }
      break;
    }
  }
  return out;
}

Tensor WeanetModel::extract_embedding(const Tensor& features) {
  Forward f = forward(features);
  const std::size_t E = cfg_.embed_dim, K = f.embeddings.extent(1);
  Tensor out({E});
  for (std::size_t e = 0; e < E; ++e) {
    double best = f.embeddings[e * K];
    for (std::size_t t = 1; t < K; ++t) best = std::max(best, f.embeddings[e * K + t]);
    out[e] = best;
  }
  return out;
}

double mil_loss(WeanetModel& model, const std::vector<const Bag*>& bags,
                const Tensor& targets, const ClassWeights& cw,
                bool accumulate_grads) {
  const std::size_t C = model.config().classes;
  if (bags.empty()) throw UsageError("mil_loss: empty batch");
  if (targets.ndim() != 2 || targets.extent(0) != bags.size() || targets.extent(1) != C)
    throw DimensionError("mil_loss: targets must be [" + std::to_string(bags.size()) + ", " +
                         std::to_string(C) + "], got " + shape_str(targets.shape()));
  for (std::size_t i = 0; i < targets.numel(); ++i)
    if (!(targets[i] >= 0.0 && targets[i] <= 1.0))
      throw ConfigError("mil_loss: targets must lie in [0, 1]");

  const double inv_b = 1.0 / static_cast<double>(bags.size());
  double total = 0.0;
  for (std::size_t b = 0; b < bags.size(); ++b) {
    auto fwd = model.forward(bags[b]->features);
    Tensor row({C});
    for (std::size_t c = 0; c < C; ++c) row[c] = targets[b * C + c];
    auto loss = bce_loss(fwd.pooled, row, cw);
    total += loss->val[0] * inv_b;
    if (accumulate_grads) backward(loss, inv_b);
  }
  return total;
}

double mil_loss(WeanetModel& model, const std::vector<Bag>& bags,
                const Tensor& targets, const ClassWeights& cw,
                bool accumulate_grads) {
  std::vector<const Bag*> ptrs;
  ptrs.reserve(bags.size());
  for (const Bag& bag : bags) ptrs.push_back(&bag);
  return mil_loss(model, ptrs, targets, cw, accumulate_grads);
}

Tensor predict_pooled(WeanetModel& model, const std::vector<Bag>& bags) {
  if (bags.empty()) throw UsageError("predict_pooled: empty bag list");
  const std::size_t C = model.config().classes;
  Tensor out({bags.size(), C});
  for (std::size_t b = 0; b < bags.size(); ++b) {
    auto fwd = model.forward(bags[b].features);
    for (std::size_t c = 0; c < C; ++c) {
      // An attention-weighted mean of probabilities can land a few ulps
      // outside [0, 1] when the weights round to slightly more than one.
      out[b * C + c] = std::clamp(fwd.pooled->val[c], 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace sustain
