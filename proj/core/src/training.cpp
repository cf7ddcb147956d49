#include "emoformer/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "emoformer/audio.hpp"
#include "emoformer/errors.hpp"
#include "emoformer/ops.hpp"
#include "emoformer/rng.hpp"

namespace emoformer {

namespace {

constexpr double kStdFloor = 1e-8;
constexpr int kXVectorDim = 512;

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// Runs fn(i) for i in [0, n) over `jobs` threads. Any worker exception is
// rethrown on the caller; output ordering is the callee's responsibility.
template <class Fn>
void parallel_for(size_t n, int jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  const int count = std::min<int>(jobs, static_cast<int>(n));
  threads.reserve(static_cast<size_t>(count));
  for (int t = 0; t < count; ++t) threads.emplace_back(worker);
  for (std::thread& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

// Batch index ranges of size batch_size; a trailing single sample is folded
// into the previous batch because batch statistics need at least 2 rows.
std::vector<std::pair<size_t, size_t>> batch_ranges(size_t n,
                                                    size_t batch_size) {
  std::vector<std::pair<size_t, size_t>> ranges;
  for (size_t start = 0; start < n; start += batch_size)
    ranges.emplace_back(start, std::min(n, start + batch_size));
  if (ranges.size() > 1 &&
      ranges.back().second - ranges.back().first == 1) {
    ranges[ranges.size() - 2].second = n;
    ranges.pop_back();
  }
  return ranges;
}

nn::Tensor batch_features(const SegmentDataset& data,
                          const std::vector<size_t>& order, size_t begin,
                          size_t end, const nn::Shape& sample_shape) {
  const int64_t per_sample =
      sample_shape[0] * sample_shape[1] * sample_shape[2];
  const auto n = static_cast<int64_t>(end - begin);
  std::vector<float> buffer(static_cast<size_t>(n * per_sample));
  for (size_t i = begin; i < end; ++i) {
    const FeatureSegment& seg = data.features[order[i]];
    if (static_cast<int64_t>(seg.data.size()) != per_sample)
      throw ShapeError("segment " + std::to_string(order[i]) + " has " +
                       std::to_string(seg.data.size()) +
                       " values, the model expects " +
                       std::to_string(per_sample));
    float* dst = buffer.data() + (i - begin) * per_sample;
    for (int64_t v = 0; v < per_sample; ++v)
      dst[v] = static_cast<float>(seg.data[static_cast<size_t>(v)]);
  }
  return nn::Tensor::from_data(
      {n, sample_shape[0], sample_shape[1], sample_shape[2]},
      std::move(buffer));
}

nn::Tensor batch_xvectors(const SegmentDataset& data,
                          const std::vector<size_t>& order, size_t begin,
                          size_t end) {
  if (data.xvectors.size() != data.size() * kXVectorDim)
    throw ValidationError(
        "this model fuses x-vectors but the dataset carries none");
  const auto n = static_cast<int64_t>(end - begin);
  std::vector<float> buffer(static_cast<size_t>(n) * kXVectorDim);
  for (size_t i = begin; i < end; ++i)
    std::copy_n(data.xvectors.data() + order[i] * kXVectorDim, kXVectorDim,
                buffer.data() + (i - begin) * kXVectorDim);
  return nn::Tensor::from_data({n, kXVectorDim}, std::move(buffer));
}

nn::Tensor batch_one_hot(const SegmentDataset& data,
                         const std::vector<size_t>& order, size_t begin,
                         size_t end, int num_classes) {
  const auto n = static_cast<int64_t>(end - begin);
  std::vector<float> buffer(static_cast<size_t>(n * num_classes), 0.0f);
  for (size_t i = begin; i < end; ++i)
    buffer[(i - begin) * num_classes + data.labels[order[i]]] = 1.0f;
  return nn::Tensor::from_data({n, num_classes}, std::move(buffer));
}

int argmax_row(const std::vector<float>& data, size_t row, int width) {
  int best = 0;
  for (int j = 1; j < width; ++j)
    if (data[row * width + j] > data[row * width + best]) best = j;
  return best;
}

}  // namespace

// ---------------------------------------------------------------------------
// Scaler
// ---------------------------------------------------------------------------

Scaler Scaler::fit(const std::vector<FeatureSegment>& train) {
  if (train.empty())
    throw ValidationError("Scaler: no training segments to fit");
  const int rows = train.front().rows;
  for (const FeatureSegment& seg : train)
    if (seg.rows != rows)
      throw ShapeError("Scaler: segments disagree on row count (" +
                       std::to_string(seg.rows) + " vs " +
                       std::to_string(rows) + ")");
  Scaler scaler;
  scaler.mean.assign(rows, 0.0);
  scaler.std_dev.assign(rows, 0.0);
  std::vector<int64_t> counts(rows, 0);
  for (const FeatureSegment& seg : train)
    for (int r = 0; r < rows; ++r) {
      const double* row = seg.data.data() + static_cast<size_t>(r) * seg.cols;
      for (int c = 0; c < seg.cols; ++c) scaler.mean[r] += row[c];
      counts[r] += seg.cols;
    }
  for (int r = 0; r < rows; ++r) scaler.mean[r] /= counts[r];
  for (const FeatureSegment& seg : train)
    for (int r = 0; r < rows; ++r) {
      const double* row = seg.data.data() + static_cast<size_t>(r) * seg.cols;
      for (int c = 0; c < seg.cols; ++c) {
        const double d = row[c] - scaler.mean[r];
        scaler.std_dev[r] += d * d;
      }
    }
  for (int r = 0; r < rows; ++r) {
    scaler.std_dev[r] = std::sqrt(scaler.std_dev[r] / counts[r]);
    if (scaler.std_dev[r] < kStdFloor) scaler.std_dev[r] = kStdFloor;
  }
  return scaler;
}

void Scaler::apply(FeatureSegment& segment) const {
  if (segment.rows != static_cast<int>(mean.size()))
    throw ShapeError("Scaler: fitted for " + std::to_string(mean.size()) +
                     " rows, segment has " + std::to_string(segment.rows));
  for (int r = 0; r < segment.rows; ++r) {
    double* row = segment.data.data() + static_cast<size_t>(r) * segment.cols;
    for (int c = 0; c < segment.cols; ++c)
      row[c] = (row[c] - mean[r]) / std_dev[r];
  }
}

void Scaler::apply(std::vector<FeatureSegment>& segments) const {
  for (FeatureSegment& seg : segments) apply(seg);
}

nlohmann::json Scaler::to_json() const {
  return nlohmann::json{{"mean", mean}, {"std_dev", std_dev}};
}

Scaler Scaler::from_json(const nlohmann::json& j) {
  Scaler scaler;
  scaler.mean = j.at("mean").get<std::vector<double>>();
  scaler.std_dev = j.at("std_dev").get<std::vector<double>>();
  if (scaler.mean.size() != scaler.std_dev.size())
    throw FormatError("scaler: mean and std_dev lengths differ");
  return scaler;
}

// ---------------------------------------------------------------------------
// TrainConfig / History
// ---------------------------------------------------------------------------

TrainConfig TrainConfig::defaults_for(InputKind kind) {
  TrainConfig config;
  if (kind == InputKind::xvector) {
    config.max_epochs = 20;
    config.patience = 5;
  }
  return config;
}

void TrainConfig::validate() const {
  if (batch_size < 2)
    throw ValidationError(
        "train config: batch_size must be >= 2 (batch statistics)");
  if (max_epochs < 1)
    throw ValidationError("train config: max_epochs must be >= 1");
  if (patience < 1)
    throw ValidationError("train config: patience must be >= 1");
  if (split_ratio <= 0.0 || split_ratio >= 1.0)
    throw ValidationError("train config: split_ratio must lie in (0, 1)");
  if (learning_rate <= 0.0)
    throw ValidationError("train config: learning_rate must be positive");
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    throw ValidationError("train config: val_fraction must lie in [0, 1)");
  if (stop_at_train_accuracy < 0.0 || stop_at_train_accuracy > 1.0)
    throw ValidationError(
        "train config: stop_at_train_accuracy must lie in [0, 1]");
}

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{{"batch_size", batch_size},
                        {"max_epochs", max_epochs},
                        {"patience", patience},
                        {"split_ratio", split_ratio},
                        {"seed", seed},
                        {"learning_rate", learning_rate},
                        {"val_fraction", val_fraction},
                        {"stop_at_train_accuracy", stop_at_train_accuracy}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.split_ratio = j.value("split_ratio", c.split_ratio);
  c.seed = j.value("seed", c.seed);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.stop_at_train_accuracy =
      j.value("stop_at_train_accuracy", c.stop_at_train_accuracy);
  c.validate();
  return c;
}

nlohmann::json History::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const EpochStats& e : epochs)
    rows.push_back({{"train_loss", e.train_loss},
                    {"train_accuracy", e.train_accuracy},
                    {"val_accuracy", e.val_accuracy}});
  return nlohmann::json{{"best_epoch", best_epoch}, {"epochs", rows}};
}

// ---------------------------------------------------------------------------
// Feature materialization
// ---------------------------------------------------------------------------

SegmentDataset build_segments(const Manifest& manifest, const EmotionSet& set,
                              InputKind kind, const MfccConfig& mfcc_config,
                              const AugmentPlan* plan, double target_seconds,
                              int sample_rate, const XVectorModel* xvector,
                              int jobs) {
  manifest.validate(set);
  mfcc_config.validate();
  if (kind == InputKind::xvector && xvector == nullptr)
    throw ValidationError(
        "build_segments: x-vector features need an extractor model");
  if (target_seconds <= 0.0)
    throw ValidationError("build_segments: target_seconds must be positive");
  const bool fuse = kind == InputKind::mfcc && xvector != nullptr;

  std::vector<SegmentDataset> per_clip(manifest.entries.size());
  parallel_for(manifest.entries.size(), jobs, [&](size_t i) {
    const ManifestEntry& entry = manifest.entries[i];
    try {
      AudioClip clip = load_wav(entry.path);
      if (sample_rate > 0 && clip.sample_rate != sample_rate)
        clip = resample(clip, sample_rate);
      std::vector<AudioClip> variants;
      if (plan != nullptr)
        variants = augment_set(clip, *plan);
      else
        variants.push_back(fix_length(clip, target_seconds));
      SegmentDataset& out = per_clip[i];
      const int label = set.index_of(entry.label);
      for (const AudioClip& variant : variants) {
        MfccMatrix features = extract_mfcc(variant, mfcc_config);
        std::vector<FeatureSegment> segments =
            segment(features, mfcc_config.segment_frames,
                    mfcc_config.overlap_frames);
        for (FeatureSegment& seg : segments) {
          if (kind == InputKind::xvector || fuse) {
            MfccMatrix window;
            window.coeffs = seg.data;
            window.n_coeffs = seg.rows;
            window.num_frames = seg.cols;
            window.source_id = seg.parent_id;
            window.config = mfcc_config;
            const XVector xv = extract_xvector(window, *xvector);
            if (kind == InputKind::xvector) {
              FeatureSegment embedded;
              embedded.rows = static_cast<int>(xv.values.size());
              embedded.cols = 1;
              embedded.parent_id = seg.parent_id;
              embedded.index = seg.index;
              embedded.data.assign(xv.values.begin(), xv.values.end());
              seg = std::move(embedded);
            } else {
              out.xvectors.insert(out.xvectors.end(), xv.values.begin(),
                                  xv.values.end());
            }
          }
          out.features.push_back(std::move(seg));
          out.labels.push_back(label);
          out.clip_ids.push_back(variant.source_id);
          out.clip_paths.push_back(entry.path);
        }
      }
    } catch (const Error& e) {
      throw Error(e.kind(),
                  "while processing " + entry.path + ": " + e.what());
    }
  });

  SegmentDataset all;
  for (SegmentDataset& part : per_clip) {
    all.features.insert(all.features.end(),
                        std::make_move_iterator(part.features.begin()),
                        std::make_move_iterator(part.features.end()));
    all.labels.insert(all.labels.end(), part.labels.begin(),
                      part.labels.end());
    all.clip_ids.insert(all.clip_ids.end(),
                        std::make_move_iterator(part.clip_ids.begin()),
                        std::make_move_iterator(part.clip_ids.end()));
    all.clip_paths.insert(all.clip_paths.end(),
                          std::make_move_iterator(part.clip_paths.begin()),
                          std::make_move_iterator(part.clip_paths.end()));
    all.xvectors.insert(all.xvectors.end(), part.xvectors.begin(),
                        part.xvectors.end());
  }
  return all;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

std::vector<float> predict_probabilities(EmoFormer& model,
                                         const SegmentDataset& data,
                                         int batch_size) {
  if (batch_size < 1)
    throw ValidationError("predict: batch_size must be >= 1");
  const int k = model.config().num_classes;
  const nn::Shape sample_shape = model.config().input_shape();
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<float> probs(data.size() * static_cast<size_t>(k));
  nn::NoGradGuard no_grad;
  for (size_t start = 0; start < data.size();
       start += static_cast<size_t>(batch_size)) {
    const size_t end =
        std::min(data.size(), start + static_cast<size_t>(batch_size));
    nn::Tensor x = batch_features(data, order, start, end, sample_shape);
    nn::Tensor y =
        model.config().fuse_xvector
            ? model.forward(x, batch_xvectors(data, order, start, end),
                            nn::Mode::infer)
            : model.forward(x, nn::Mode::infer);
    std::copy(y.data().begin(), y.data().end(),
              probs.begin() + static_cast<int64_t>(start) * k);
  }
  return probs;
}

History train(EmoFormer& model, const SegmentDataset& train_data,
              const SegmentDataset& val_data, const TrainConfig& config,
              const EpochCallback& on_epoch) {
  config.validate();
  if (train_data.size() < 2)
    throw ValidationError("train: need at least 2 training segments");
  if (val_data.size() == 0)
    throw ValidationError("train: validation set is empty");
  const int k = model.config().num_classes;
  for (int label : train_data.labels)
    if (label < 0 || label >= k)
      throw ValidationError("train: label " + std::to_string(label) +
                            " outside the model's " + std::to_string(k) +
                            " classes");
  const nn::Shape sample_shape = model.config().input_shape();

  nn::Adam optimizer(model.parameters(), config.learning_rate);
  Rng rng(config.seed);
  std::vector<size_t> order(train_data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  History history;
  double best_val = -1.0;
  std::vector<std::vector<float>> best_state = model.state_snapshot();
  int64_t global_step = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    seeded_shuffle(order, rng);
    double loss_sum = 0.0;
    int64_t correct = 0;
    const auto ranges = batch_ranges(train_data.size(),
                                     static_cast<size_t>(config.batch_size));
    for (size_t b = 0; b < ranges.size(); ++b) {
      const auto [begin, end] = ranges[b];
      model.set_dropout_step(global_step);
      try {
        nn::Tensor x =
            batch_features(train_data, order, begin, end, sample_shape);
        nn::Tensor y = batch_one_hot(train_data, order, begin, end, k);
        nn::Tensor probs =
            model.config().fuse_xvector
                ? model.forward(x, batch_xvectors(train_data, order, begin,
                                                  end),
                                nn::Mode::train)
                : model.forward(x, nn::Mode::train);
        nn::Tensor loss = nn::cross_entropy(probs, y);
        optimizer.zero_grad();
        nn::backward(loss);
        optimizer.step();
        ++global_step;
        loss_sum += static_cast<double>(loss.scalar()) *
                    static_cast<double>(end - begin);
        for (size_t i = begin; i < end; ++i)
          if (argmax_row(probs.data(), i - begin, k) ==
              train_data.labels[order[i]])
            ++correct;
      } catch (const NumericFault& e) {
        throw NumericFault("epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b + 1) + ": " + e.what());
      }
    }

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(train_data.size());
    stats.train_accuracy = static_cast<double>(correct) /
                           static_cast<double>(train_data.size());
    const std::vector<float> val_probs =
        predict_probabilities(model, val_data, config.batch_size);
    int64_t val_correct = 0;
    for (size_t i = 0; i < val_data.size(); ++i)
      if (argmax_row(val_probs, i, k) == val_data.labels[i]) ++val_correct;
    stats.val_accuracy =
        static_cast<double>(val_correct) / static_cast<double>(val_data.size());
    history.epochs.push_back(stats);
    if (on_epoch) on_epoch(epoch, stats);

    if (stats.val_accuracy > best_val) {
      best_val = stats.val_accuracy;
      history.best_epoch = epoch;
      best_state = model.state_snapshot();
    }
    if (config.stop_at_train_accuracy > 0.0 &&
        stats.train_accuracy >= config.stop_at_train_accuracy)
      break;
    if (epoch - history.best_epoch >= config.patience) break;
  }

  model.state_restore(best_state);
  return history;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalResult evaluate_model(EmoFormer& model, const SegmentDataset& test_data,
                          int batch_size) {
  if (test_data.size() == 0)
    throw ValidationError("evaluate: test set is empty");
  const int k = model.config().num_classes;
  const std::vector<float> probs =
      predict_probabilities(model, test_data, batch_size);

  std::vector<int> segment_pred(test_data.size());
  for (size_t i = 0; i < test_data.size(); ++i)
    segment_pred[i] = argmax_row(probs, i, k);
  EvalResult result;
  result.segment_metrics =
      compute_metrics(test_data.labels, segment_pred, k);

  // Clip-level: average segment probabilities per source clip, in first-
  // appearance order.
  std::vector<std::string> clip_order;
  std::vector<std::vector<double>> clip_probs;
  std::vector<int> clip_truth;
  std::vector<int64_t> clip_counts;
  std::map<std::string, size_t> clip_index;
  for (size_t i = 0; i < test_data.size(); ++i) {
    const std::string& id = test_data.clip_ids[i];
    auto [it, inserted] = clip_index.try_emplace(id, clip_order.size());
    if (inserted) {
      clip_order.push_back(id);
      clip_probs.emplace_back(k, 0.0);
      clip_truth.push_back(test_data.labels[i]);
      clip_counts.push_back(0);
    }
    const size_t c = it->second;
    for (int j = 0; j < k; ++j)
      clip_probs[c][j] += static_cast<double>(probs[i * k + j]);
    clip_counts[c]++;
  }
  std::vector<int> clip_pred(clip_order.size());
  for (size_t c = 0; c < clip_order.size(); ++c) {
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (clip_probs[c][j] > clip_probs[c][best]) best = j;
    clip_pred[c] = best;
  }
  result.clip_metrics = compute_metrics(clip_truth, clip_pred, k);
  return result;
}

// ---------------------------------------------------------------------------
// Experiment orchestration
// ---------------------------------------------------------------------------

EmotionSet ExperimentConfig::emotion_set() const {
  return custom_labels.empty() ? EmotionSet::preset(emotion_preset)
                               : EmotionSet::custom(custom_labels);
}

void ExperimentConfig::validate() const {
  if (manifest_path.empty())
    throw ValidationError("experiment: manifest_path is required");
  emotion_set();
  train.validate();
  mfcc.validate();
  augment.validate();
  if (sample_rate < 0)
    throw ValidationError("experiment: sample_rate must be >= 0");
  if (jobs < 1) throw ValidationError("experiment: jobs must be >= 1");
  if (model.fuse_xvector && feature_kind != InputKind::mfcc)
    throw ValidationError(
        "experiment: fuse_xvector requires MFCC features");
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j{{"manifest", manifest_path},
                   {"feature_kind", to_string(feature_kind)},
                   {"emotion_preset", emotion_preset},
                   {"train", train.to_json()},
                   {"model", model.to_json()},
                   {"mfcc", nlohmann::json::parse(mfcc.to_json())},
                   {"augment", nlohmann::json::parse(augment.to_json())},
                   {"augment_train", augment_train},
                   {"sample_rate", sample_rate},
                   {"xvector_weights", xvector_weights},
                   {"xvector_seed", xvector_seed},
                   {"jobs", jobs},
                   {"out_dir", out_dir}};
  if (!custom_labels.empty()) j["custom_labels"] = custom_labels;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.manifest_path = j.value("manifest", "");
  if (j.contains("feature_kind"))
    c.feature_kind =
        input_kind_from_string(j.at("feature_kind").get<std::string>());
  c.emotion_preset = j.value("emotion_preset", c.emotion_preset);
  if (j.contains("custom_labels"))
    c.custom_labels = j.at("custom_labels").get<std::vector<std::string>>();
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  if (j.contains("model"))
    c.model = EmoFormerConfig::from_json(j.at("model"));
  if (j.contains("mfcc")) c.mfcc = MfccConfig::from_json(j.at("mfcc").dump());
  if (j.contains("augment"))
    c.augment = AugmentPlan::from_json(j.at("augment").dump());
  c.augment_train = j.value("augment_train", c.augment_train);
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.xvector_weights = j.value("xvector_weights", c.xvector_weights);
  c.xvector_seed = j.value("xvector_seed", c.xvector_seed);
  c.jobs = j.value("jobs", c.jobs);
  c.out_dir = j.value("out_dir", c.out_dir);
  return c;
}

namespace {

// Standardizes fused x-vectors with statistics from the training rows only.
void standardize_xvectors(std::vector<float>& train, std::vector<float>& val,
                          std::vector<float>& test) {
  if (train.empty()) return;
  const size_t n = train.size() / kXVectorDim;
  std::vector<double> mean(kXVectorDim, 0.0), std_dev(kXVectorDim, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < kXVectorDim; ++j)
      mean[j] += static_cast<double>(train[i * kXVectorDim + j]);
  for (size_t j = 0; j < kXVectorDim; ++j) mean[j] /= static_cast<double>(n);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < kXVectorDim; ++j) {
      const double d =
          static_cast<double>(train[i * kXVectorDim + j]) - mean[j];
      std_dev[j] += d * d;
    }
  for (size_t j = 0; j < kXVectorDim; ++j) {
    std_dev[j] = std::sqrt(std_dev[j] / static_cast<double>(n));
    if (std_dev[j] < kStdFloor) std_dev[j] = kStdFloor;
  }
  auto apply = [&mean, &std_dev](std::vector<float>& rows) {
    for (size_t i = 0; i < rows.size() / kXVectorDim; ++i)
      for (size_t j = 0; j < kXVectorDim; ++j) {
        float& v = rows[i * kXVectorDim + j];
        v = static_cast<float>((static_cast<double>(v) - mean[j]) /
                               std_dev[j]);
      }
  };
  apply(train);
  apply(val);
  apply(test);
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  if (!out) throw IoError("failed while writing " + path);
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config_in,
                                const EpochCallback& on_epoch) {
  ExperimentConfig config = config_in;
  config.validate();
  if (const char* env = std::getenv("EMOFORMER_SEED")) {
    try {
      config.train.seed = static_cast<uint64_t>(std::stoull(env));
    } catch (const std::exception&) {
      throw ValidationError("EMOFORMER_SEED is not an integer: " +
                            std::string(env));
    }
  }
  const uint64_t seed = config.train.seed;
  config.model.init_seed = seed;

  const EmotionSet set = config.emotion_set();
  config.model.num_classes = set.size();
  config.model.input_kind = config.feature_kind;
  config.model.validate();

  Manifest manifest = Manifest::load_csv(config.manifest_path);
  manifest.validate(set);

  const double t0 = now_seconds();
  auto [train_manifest, test_manifest] =
      split(manifest, config.train.split_ratio, seed);
  Manifest val_manifest;
  if (config.train.val_fraction > 0.0) {
    auto [core, held_out] = split(train_manifest,
                                  1.0 - config.train.val_fraction,
                                  Rng::mix(seed, 1, 0));
    train_manifest = std::move(core);
    val_manifest = std::move(held_out);
  }

  XVectorModel xvector_model;
  const XVectorModel* xvector_ptr = nullptr;
  if (config.feature_kind == InputKind::xvector || config.model.fuse_xvector) {
    xvector_model = config.xvector_weights.empty()
                        ? XVectorModel::seeded(config.mfcc.n_coeffs,
                                               config.xvector_seed)
                        : XVectorModel::load(config.xvector_weights);
    xvector_ptr = &xvector_model;
  }

  const AugmentPlan* plan = config.augment_train ? &config.augment : nullptr;
  SegmentDataset train_data = build_segments(
      train_manifest, set, config.feature_kind, config.mfcc, plan,
      config.augment.target_seconds, config.sample_rate, xvector_ptr,
      config.jobs);
  SegmentDataset test_data = build_segments(
      test_manifest, set, config.feature_kind, config.mfcc, nullptr,
      config.augment.target_seconds, config.sample_rate, xvector_ptr,
      config.jobs);
  SegmentDataset val_data;
  const bool separate_val = config.train.val_fraction > 0.0;
  if (separate_val)
    val_data = build_segments(val_manifest, set, config.feature_kind,
                              config.mfcc, nullptr,
                              config.augment.target_seconds,
                              config.sample_rate, xvector_ptr, config.jobs);

  Scaler scaler = Scaler::fit(train_data.features);
  scaler.apply(train_data.features);
  scaler.apply(test_data.features);
  if (separate_val) scaler.apply(val_data.features);
  if (config.model.fuse_xvector) {
    std::vector<float> empty;
    standardize_xvectors(train_data.xvectors,
                         separate_val ? val_data.xvectors : empty,
                         test_data.xvectors);
  }
  const SegmentDataset& val_ref = separate_val ? val_data : test_data;
  const double t_features = now_seconds() - t0;

  EmoFormer model(config.model);
  const double t1 = now_seconds();
  History history = train(model, train_data, val_ref, config.train, on_epoch);
  const double t_train = now_seconds() - t1;

  const double t2 = now_seconds();
  EvalResult eval =
      evaluate_model(model, test_data, config.train.batch_size);
  const double t_eval = now_seconds() - t2;

  nlohmann::json report{
      {"config", config.to_json()},
      {"seed", seed},
      {"emotion_set", set.labels()},
      {"dataset",
       {{"total_clips", manifest.entries.size()},
        {"train_clips", train_manifest.entries.size()},
        {"val_clips", val_manifest.entries.size()},
        {"test_clips", test_manifest.entries.size()},
        {"train_segments", train_data.size()},
        {"val_segments", val_ref.size()},
        {"test_segments", test_data.size()}}},
      {"history", history.to_json()},
      {"segment_metrics", eval.segment_metrics.to_json(set.labels())},
      {"clip_metrics", eval.clip_metrics.to_json(set.labels())},
      {"mac_report", model.count_macs().to_json()},
      {"parameter_count", model.parameter_count()}};
  nlohmann::json run_info{
      {"timings_seconds",
       {{"features", t_features}, {"train", t_train}, {"evaluate", t_eval}}}};

  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    const std::filesystem::path dir(config.out_dir);
    write_text_file((dir / "report.json").string(), report.dump(2) + "\n");
    write_text_file((dir / "run_info.json").string(),
                    run_info.dump(2) + "\n");
    write_text_file((dir / "scaler.json").string(),
                    scaler.to_json().dump(2) + "\n");
    model.save_weights((dir / "weights.emof").string());
    write_confusion_csv(eval.clip_metrics, set,
                        (dir / "confusion_clips.csv").string());
    write_confusion_pgm(eval.clip_metrics,
                        (dir / "confusion_clips.pgm").string());
    write_confusion_csv(eval.segment_metrics, set,
                        (dir / "confusion_segments.csv").string());
  }
  return ExperimentReport{std::move(report), std::move(run_info)};
}

}  // namespace emoformer
