#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoformer/layers.hpp"
#include "emoformer/tensor.hpp"

namespace emoformer {

enum class InputKind { mfcc, xvector };
enum class SequenceMode { pooled1, tokens58 };

std::string to_string(InputKind kind);
std::string to_string(SequenceMode mode);
InputKind input_kind_from_string(const std::string& s);
SequenceMode sequence_mode_from_string(const std::string& s);

// Hyperparameters of the network. The convolutional trunk always ends in a
// 64-channel map; `sequence_mode` chooses whether the encoder sees one
// pooled token (pooled1) or one token per final map column (tokens58 for the
// 13x469 input).
struct EmoFormerConfig {
  int num_classes = 7;
  InputKind input_kind = InputKind::mfcc;
  int heads = 8;
  int ff_dim = 128;          // encoder feed-forward hidden width
  double dropout = 0.2;
  double ln_eps = 1e-6;
  SequenceMode sequence_mode = SequenceMode::pooled1;
  bool fuse_xvector = false;  // concat a 512-dim x-vector before the head
  uint64_t init_seed = 42;

  void validate() const;
  nlohmann::json to_json() const;
  static EmoFormerConfig from_json(const nlohmann::json& j);

  // Flat [name, expected-vs-actual] list of differing fields, empty when
  // equal. Used to reject weight files built for another configuration.
  std::vector<std::string> diff(const EmoFormerConfig& other) const;

  // Per-sample input shape [H, W, C]: (13,469,1) for MFCC, (512,1,1) for
  // x-vector input.
  nn::Shape input_shape() const;
};

// Multiply-accumulate cost per layer. reference_total carries the cost the
// architecture was originally reported at; the ratio is informative only,
// since counting rules differ between implementations.
struct MacReport {
  std::vector<std::pair<std::string, int64_t>> per_layer;
  int64_t total = 0;
  int64_t reference_total = 35041444;

  nlohmann::json to_json() const;
};

// One pre-LN transformer encoder block: LN, self-attention, dropout,
// residual, LN, feed-forward (ReLU), dropout, projection back to the model
// dimension.
struct EncoderBlock {
  nn::LayerNormLayer ln1, ln2;
  nn::MhaLayer attention;
  nn::DenseLayer ff1, ff2;
};

class EmoFormer {
 public:
  explicit EmoFormer(EmoFormerConfig config);

  // Probabilities [N, num_classes]. Train mode uses batch statistics and
  // active dropout; infer mode is deterministic. The fusion overload is
  // required (and only valid) when the config enables fuse_xvector.
  nn::Tensor forward(const nn::Tensor& batch, nn::Mode mode);
  nn::Tensor forward(const nn::Tensor& batch, const nn::Tensor& xvectors,
                     nn::Mode mode);

  // All trainable parameters with stable names; order defines file layout.
  nn::ParamList named_parameters() const;
  std::vector<nn::Tensor> parameters() const;
  int64_t parameter_count() const;

  // Per-sample activation shape chain (layer name, shape without batch dim).
  std::vector<std::pair<std::string, nn::Shape>> activation_shapes() const;

  // Multiply-accumulate counts per layer for one sample.
  MacReport count_macs() const;

  void save_weights(const std::string& path) const;
  static EmoFormer load_weights(const std::string& path);
  static EmoFormer load_weights(const std::string& path,
                                const EmoFormerConfig& expected);

  // Byte-for-byte snapshot/restore of parameters and running statistics,
  // used by early stopping to keep the best epoch.
  std::vector<std::vector<float>> state_snapshot() const;
  void state_restore(const std::vector<std::vector<float>>& snapshot);

  const EmoFormerConfig& config() const { return config_; }

  // Dropout masks derive from (seed, layer id, step); the trainer advances
  // the step once per optimizer update so masks never repeat in a schedule-
  // dependent way.
  void set_dropout_step(int64_t step) { dropout_step_ = step; }

 private:
  nn::Tensor trunk(const nn::Tensor& batch, nn::Mode mode);
  nn::Tensor encode(const nn::Tensor& batch, nn::Mode mode);
  uint64_t dropout_salt(int layer_id) const;

  EmoFormerConfig config_;
  std::vector<nn::Conv2dLayer> convs_;
  std::vector<nn::BatchNormLayer> bns_;
  nn::DenseLayer embed_;
  EncoderBlock encoder_;
  nn::DenseLayer head_;
  int64_t dropout_step_ = 0;
};

}  // namespace emoformer
