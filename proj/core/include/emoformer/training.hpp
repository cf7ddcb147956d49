#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoformer/augment.hpp"
#include "emoformer/dataset.hpp"
#include "emoformer/metrics.hpp"
#include "emoformer/mfcc.hpp"
#include "emoformer/model.hpp"
#include "emoformer/xvector.hpp"

namespace emoformer {

// Per-row standardization statistics fitted on training features only.
// Rows are MFCC coefficients (or x-vector dimensions); the deviation floor
// maps constant rows to zero instead of dividing by zero.
struct Scaler {
  std::vector<double> mean;
  std::vector<double> std_dev;  // floored at 1e-8

  static Scaler fit(const std::vector<FeatureSegment>& train);
  void apply(FeatureSegment& segment) const;
  void apply(std::vector<FeatureSegment>& segments) const;

  nlohmann::json to_json() const;
  static Scaler from_json(const nlohmann::json& j);
};

struct TrainConfig {
  int batch_size = 64;
  int max_epochs = 50;
  int patience = 10;
  double split_ratio = 0.7;
  uint64_t seed = 42;
  double learning_rate = 1e-3;
  // 0 keeps early stopping on the test partition (the two-way split the
  // training recipe describes); > 0 carves a clean validation share out of
  // the training clips instead.
  double val_fraction = 0.0;
  // > 0 ends training once the epoch's training accuracy reaches the target
  // (best-validation weights are still restored).
  double stop_at_train_accuracy = 0.0;

  // MFCC models run 50 epochs with patience 10; x-vector models 20 with 5.
  static TrainConfig defaults_for(InputKind kind);

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochStats {
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

struct History {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;  // 1-based epoch whose weights were kept

  nlohmann::json to_json() const;
};

// Model-ready feature segments with their provenance. clip_ids name the
// (possibly augmented) source clip, clip_paths the original manifest entry.
// xvectors is empty unless the dataset was built for a fusion model, in
// which case it holds one flattened 512-value row per segment.
struct SegmentDataset {
  std::vector<FeatureSegment> features;
  std::vector<int> labels;
  std::vector<std::string> clip_ids;
  std::vector<std::string> clip_paths;
  std::vector<float> xvectors;

  size_t size() const { return features.size(); }
};

// Loads every manifest clip, optionally augments it (training partitions
// only), resamples to `sample_rate` when > 0, extracts MFCC segments and,
// for the x-vector kind, turns each segment into a 512x1 feature. `plan`
// null means fix-length only. Per-clip work fans out over `jobs` threads
// with deterministic output order.
SegmentDataset build_segments(const Manifest& manifest, const EmotionSet& set,
                              InputKind kind, const MfccConfig& mfcc_config,
                              const AugmentPlan* plan, double target_seconds,
                              int sample_rate, const XVectorModel* xvector,
                              int jobs);

// Called after each epoch with the 1-based epoch number and its statistics.
using EpochCallback = std::function<void(int, const EpochStats&)>;

// Seeded epoch loop: shuffled batches, Adam on cross-entropy, per-epoch
// validation accuracy, early stopping with best-weight restore. Throws a
// numeric fault naming epoch and batch if the loss leaves the finite range.
History train(EmoFormer& model, const SegmentDataset& train_data,
              const SegmentDataset& val_data, const TrainConfig& config,
              const EpochCallback& on_epoch = {});

struct EvalResult {
  Metrics segment_metrics;
  Metrics clip_metrics;
};

// Segment-level scores plus clip-level scores after averaging segment
// probabilities per source clip.
EvalResult evaluate_model(EmoFormer& model, const SegmentDataset& test_data,
                          int batch_size);

// Batched infer-mode class probabilities, row-major [n, num_classes].
std::vector<float> predict_probabilities(EmoFormer& model,
                                         const SegmentDataset& data,
                                         int batch_size);

struct ExperimentConfig {
  std::string manifest_path;
  InputKind feature_kind = InputKind::mfcc;
  int emotion_preset = 5;
  std::vector<std::string> custom_labels;  // overrides the preset when set
  TrainConfig train = TrainConfig::defaults_for(InputKind::mfcc);
  EmoFormerConfig model;
  MfccConfig mfcc;
  AugmentPlan augment;
  bool augment_train = true;
  int sample_rate = 16000;  // clips resampled before features; 0 keeps native
  std::string xvector_weights;  // empty: deterministic seeded extractor
  uint64_t xvector_seed = 7;
  int jobs = 1;
  std::string out_dir;

  EmotionSet emotion_set() const;
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

struct ExperimentReport {
  nlohmann::json report;    // deterministic: config, history, metrics, MACs
  nlohmann::json run_info;  // wall-clock times and host details
};

// Full pipeline: split, augment (train only), features, standardize, train,
// evaluate; writes report.json, run_info.json, scaler.json, weights and
// confusion matrices into out_dir. EMOFORMER_SEED overrides the config seed.
ExperimentReport run_experiment(const ExperimentConfig& config,
                                const EpochCallback& on_epoch = {});

}  // namespace emoformer
