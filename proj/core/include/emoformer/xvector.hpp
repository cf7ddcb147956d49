#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emoformer/mfcc.hpp"

namespace emoformer {

// One affine layer; weight is [in, out] row-major, applied as y = x W + b
// followed by ReLU.
struct XVectorLayer {
  int64_t in = 0;
  int64_t out = 0;
  std::vector<float> weight;
  std::vector<float> bias;
};

// Frame-level layers map each feature frame independently; statistics
// pooling concatenates per-dimension mean and population standard deviation;
// segment-level layers map the pooled vector to the embedding.
struct XVectorModel {
  std::vector<XVectorLayer> frame_layers;
  std::vector<XVectorLayer> segment_layers;

  int64_t input_dim() const;
  int64_t embedding_dim() const;

  // Checks the dimension chain, including the x2 jump at the pooling stage.
  void validate() const;

  // Deterministic Glorot-uniform weights for the stock topology
  // (input_dim -> 512 -> 512, pool to 1024, segment 1024 -> 512).
  static XVectorModel seeded(int64_t input_dim, uint64_t seed);

  void save(const std::string& path) const;
  static XVectorModel load(const std::string& path);
};

// Fixed-length utterance embedding.
struct XVector {
  std::vector<float> values;
  std::string source_id;
};

// Applies every frame layer to each of the t rows of features (row-major
// [t, d]). Requires t >= 2 so the downstream deviation is meaningful.
std::vector<float> frame_embed(const std::vector<float>& features, int64_t t,
                               int64_t d, const XVectorModel& model);

// [t, d] -> [2d]: per-dimension mean then population standard deviation.
std::vector<float> stats_pool(const std::vector<float>& embeddings, int64_t t,
                              int64_t d);

// Full chain: frame layers, statistics pooling, segment layers.
XVector extract_xvector(const MfccMatrix& features, const XVectorModel& model);

}  // namespace emoformer
