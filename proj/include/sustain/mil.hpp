#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sustain/graph.hpp"
#include "sustain/ops.hpp"
#include "sustain/params.hpp"

namespace sustain {

/// Frame span where the generator planted one event. Kept in memory only; the
/// on-disk format stores features and labels, not placements.
struct EventSpan {
  std::size_t class_index = 0;
  std::size_t offset = 0;
  std::size_t length = 0;
};

/// One weakly labeled recording: frame features plus bag-level label vectors.
/// observed may differ from truth once noise is injected.
struct Bag {
  std::string id;
  Tensor features;     // [frames, feature_dim]
  Tensor true_labels;  // [C]
  Tensor observed;     // [C]
  std::vector<EventSpan> events;  // empty for loaded datasets
};

enum class Pooling { Attention, Mean, Max };

/// Scaled-down segment-scoring topology: three strided conv blocks ending in
/// an embedding layer, a 1x1 sigmoid head per class, then pooling across
/// segments. Defaults give a 52-frame receptive field with hop 8.
struct ModelConfig {
  std::size_t feature_dim = 16;
  std::size_t classes = 8;
  std::size_t conv1_channels = 16, conv1_kernel = 8, conv1_stride = 2;
  std::size_t conv2_channels = 32, conv2_kernel = 5, conv2_stride = 2;
  std::size_t embed_dim = 64, embed_kernel = 10, embed_stride = 2;
  Pooling pooling = Pooling::Attention;

  void validate() const;
  std::size_t receptive_field() const;
  std::size_t hop() const;
  /// Segments produced for a bag of this many frames, following the conv
  /// stack layer by layer. Throws GeometryError for too-short bags.
  std::size_t segment_count(std::size_t frames) const;
};

const char* pooling_name(Pooling p);
Pooling pooling_from_name(const std::string& name);

/// Geometry as a JSON object (single line) and back. Parsing requires every
/// field and validates the result.
std::string model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

class WeanetModel {
 public:
  /// Fresh parameters: conv stacks get fan-in-scaled uniform init, the class
  /// head and the attention transform start at exactly zero (so an untrained
  /// model scores 0.5 everywhere and attention starts uniform).
  WeanetModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  struct Forward {
    Value scores;      // [C, K]
    Value pooled;      // [C]
    Tensor attention;  // [C, K], rows sum to 1
    Tensor embeddings; // [embed_dim, K], detached
  };
  Forward forward(const Tensor& features);

  /// Elementwise max over segment embeddings; length embed_dim regardless of
  /// bag duration.
  Tensor extract_embedding(const Tensor& features);

  void freeze_attention(bool frozen);
  bool attention_frozen() const;

 private:
  ModelConfig cfg_;
  ParamSet params_;
};

/// Mean over bags of the weighted cross-entropy between pooled predictions
/// and the matching target row. targets is [bags, C] with entries in [0,1].
/// With accumulate_grads set, parameter gradients for the batch mean are
/// added into the model's ParamSet (zero it beforehand).
double mil_loss(WeanetModel& model, const std::vector<Bag>& bags,
                const Tensor& targets, const ClassWeights& cw = {},
                bool accumulate_grads = false);
double mil_loss(WeanetModel& model, const std::vector<const Bag*>& bags,
                const Tensor& targets, const ClassWeights& cw = {},
                bool accumulate_grads = false);

/// Pooled probabilities for every bag, stacked [N, C]. No graph retained.
Tensor predict_pooled(WeanetModel& model, const std::vector<Bag>& bags);

}  // namespace sustain
