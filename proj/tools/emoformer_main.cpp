// emoformer: batch front end for the speech emotion recognition toolkit.
// Subcommands cover resampling, augmentation, feature extraction, training,
// evaluation, single-clip inference, MAC accounting and gradient checking.
// Exit codes: 0 success, 1 invalid input or flags, 2 runtime fault.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "emoformer/audio.hpp"
#include "emoformer/augment.hpp"
#include "emoformer/dataset.hpp"
#include "emoformer/emof.hpp"
#include "emoformer/errors.hpp"
#include "emoformer/gradcheck.hpp"
#include "emoformer/metrics.hpp"
#include "emoformer/mfcc.hpp"
#include "emoformer/model.hpp"
#include "emoformer/training.hpp"
#include "emoformer/xvector.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "emoformer 0.1.0";

void refuse_existing(const fs::path& path, bool force) {
  if (!force && fs::exists(path))
    throw emoformer::ValidationError("output " + path.string() +
                                     " already exists; pass --force to "
                                     "overwrite");
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw emoformer::IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw emoformer::IoError("failed while writing " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw emoformer::IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw emoformer::FormatError(path.string() + ": " + e.what());
  }
}

// Filename-safe variant tag: the part of the source id after the last '#',
// with anything outside [A-Za-z0-9.+-] mapped to '_'.
std::string variant_tag(const std::string& source_id) {
  const size_t hash = source_id.find_last_of('#');
  std::string tag =
      hash == std::string::npos ? source_id : source_id.substr(hash + 1);
  for (char& c : tag)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' &&
        c != '+' && c != '-')
      c = '_';
  return tag;
}

template <class Fn>
void parallel_clips(size_t n, int jobs, Fn&& fn) {
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

emoformer::emof::Array to_array(const emoformer::FeatureSegment& seg) {
  emoformer::emof::Array array;
  array.dims = {static_cast<uint32_t>(seg.rows),
                static_cast<uint32_t>(seg.cols)};
  array.data.reserve(seg.data.size());
  for (double v : seg.data) array.data.push_back(static_cast<float>(v));
  return array;
}

// --------------------------------------------------------------------------
// audio resample
// --------------------------------------------------------------------------

struct ResampleArgs {
  int rate = 16000;
  std::string input;
  std::string output;
  bool force = false;
};

int run_resample(const ResampleArgs& args) {
  refuse_existing(args.output, args.force);
  emoformer::AudioClip clip = emoformer::load_wav(args.input);
  const int from = clip.sample_rate;
  clip = emoformer::resample(clip, args.rate);
  emoformer::save_wav(clip, args.output);
  std::cerr << "resampled " << args.input << " (" << from << " Hz) -> "
            << args.output << " (" << args.rate << " Hz, "
            << clip.samples.size() << " samples)\n";
  return 0;
}

// --------------------------------------------------------------------------
// augment
// --------------------------------------------------------------------------

struct AugmentArgs {
  std::string manifest;
  std::string out_dir;
  std::string plan_path;
  int sample_rate = 0;  // 0 keeps the native rate
  int jobs = 1;
  bool force = false;
};

int run_augment(const AugmentArgs& args) {
  const emoformer::Manifest manifest =
      emoformer::Manifest::load_csv(args.manifest);
  if (manifest.entries.empty())
    throw emoformer::ValidationError(args.manifest + " lists no clips");
  emoformer::AugmentPlan plan;
  if (!args.plan_path.empty())
    plan = emoformer::AugmentPlan::load(args.plan_path);
  plan.validate();

  const fs::path dir(args.out_dir);
  refuse_existing(dir / "manifest.csv", args.force);
  fs::create_directories(dir);

  std::vector<std::vector<emoformer::ManifestEntry>> rows(
      manifest.entries.size());
  parallel_clips(manifest.entries.size(), args.jobs, [&](size_t i) {
    const emoformer::ManifestEntry& entry = manifest.entries[i];
    try {
      emoformer::AudioClip clip = emoformer::load_wav(entry.path);
      if (args.sample_rate > 0 && clip.sample_rate != args.sample_rate)
        clip = emoformer::resample(clip, args.sample_rate);
      const std::string stem = fs::path(entry.path).stem().string();
      for (const emoformer::AudioClip& variant :
           emoformer::augment_set(clip, plan)) {
        const fs::path out =
            dir / (stem + "_" + variant_tag(variant.source_id) + ".wav");
        refuse_existing(out, args.force);
        emoformer::save_wav(variant, out.string());
        emoformer::ManifestEntry row;
        row.path = out.string();
        row.label = entry.label;
        row.speaker = entry.speaker;
        row.duration = static_cast<double>(variant.samples.size()) /
                       variant.sample_rate;
        rows[i].push_back(std::move(row));
      }
    } catch (const emoformer::Error& e) {
      throw emoformer::Error(
          e.kind(), "while augmenting " + entry.path + ": " + e.what());
    }
  });

  emoformer::Manifest augmented;
  for (std::vector<emoformer::ManifestEntry>& part : rows)
    augmented.entries.insert(augmented.entries.end(),
                             std::make_move_iterator(part.begin()),
                             std::make_move_iterator(part.end()));
  augmented.save_csv((dir / "manifest.csv").string());
  std::cerr << "wrote " << augmented.entries.size() << " clips and "
            << (dir / "manifest.csv").string() << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// features mfcc | xvector
// --------------------------------------------------------------------------

struct FeaturesArgs {
  std::string manifest;
  std::string out_dir;
  std::string config_path;
  std::string weights;  // xvector only; empty: seeded extractor
  uint64_t xvector_seed = 7;
  int sample_rate = 16000;
  double target_seconds = 15.0;  // 0 keeps the clip length
  int jobs = 1;
  bool force = false;
};

int run_features(const FeaturesArgs& args, emoformer::InputKind kind) {
  const emoformer::Manifest manifest =
      emoformer::Manifest::load_csv(args.manifest);
  if (manifest.entries.empty())
    throw emoformer::ValidationError(args.manifest + " lists no clips");
  emoformer::MfccConfig config;
  if (!args.config_path.empty())
    config = emoformer::MfccConfig::load(args.config_path);
  config.validate();

  emoformer::XVectorModel xvector;
  if (kind == emoformer::InputKind::xvector)
    xvector = args.weights.empty()
                  ? emoformer::XVectorModel::seeded(config.n_coeffs,
                                                    args.xvector_seed)
                  : emoformer::XVectorModel::load(args.weights);

  const fs::path dir(args.out_dir);
  refuse_existing(dir / "index.json", args.force);
  fs::create_directories(dir);

  std::vector<json> index_rows(manifest.entries.size());
  parallel_clips(manifest.entries.size(), args.jobs, [&](size_t i) {
    const emoformer::ManifestEntry& entry = manifest.entries[i];
    try {
      emoformer::AudioClip clip = emoformer::load_wav(entry.path);
      if (args.sample_rate > 0 && clip.sample_rate != args.sample_rate)
        clip = emoformer::resample(clip, args.sample_rate);
      if (args.target_seconds > 0)
        clip = emoformer::fix_length(clip, args.target_seconds);
      const emoformer::MfccMatrix features =
          emoformer::extract_mfcc(clip, config);
      const std::vector<emoformer::FeatureSegment> segments =
          emoformer::segment(features, config.segment_frames,
                             config.overlap_frames);
      const std::string stem = fs::path(entry.path).stem().string();
      json rows = json::array();
      for (const emoformer::FeatureSegment& seg : segments) {
        emoformer::emof::Array array;
        std::string name;
        if (kind == emoformer::InputKind::xvector) {
          emoformer::MfccMatrix window;
          window.coeffs = seg.data;
          window.n_coeffs = seg.rows;
          window.num_frames = seg.cols;
          window.source_id = seg.parent_id;
          window.config = config;
          const emoformer::XVector xv =
              emoformer::extract_xvector(window, xvector);
          array.dims = {static_cast<uint32_t>(xv.values.size())};
          array.data.assign(xv.values.begin(), xv.values.end());
          name = stem + "_seg" + std::to_string(seg.index) + ".xvec.emof";
        } else {
          array = to_array(seg);
          name = stem + "_seg" + std::to_string(seg.index) + ".emof";
        }
        const fs::path out = dir / name;
        refuse_existing(out, args.force);
        emoformer::emof::write_array(out.string(), array);
        rows.push_back({{"file", name},
                        {"parent_id", seg.parent_id},
                        {"label", entry.label},
                        {"segment_index", seg.index}});
      }
      index_rows[i] = std::move(rows);
    } catch (const emoformer::Error& e) {
      throw emoformer::Error(
          e.kind(), "while processing " + entry.path + ": " + e.what());
    }
  });

  json index = json::array();
  size_t count = 0;
  for (json& rows : index_rows)
    for (json& row : rows) {
      index.push_back(std::move(row));
      ++count;
    }
  write_json_file(dir / "index.json", index);
  std::cerr << "wrote " << count << " segments and "
            << (dir / "index.json").string() << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// train
// --------------------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string out_dir;
  std::string config_path;
  std::string features = "";
  int emotions = 0;
  std::vector<std::string> labels;
  std::string sequence_mode = "";
  uint64_t seed = 0;
  bool seed_set = false;
  int epochs = 0;
  int patience = 0;
  int batch_size = 0;
  double learning_rate = 0.0;
  double split_ratio = 0.0;
  double val_fraction = -1.0;
  double stop_at_train_accuracy = -1.0;
  bool no_augment = false;
  bool fuse_xvector = false;
  std::string xvector_weights;
  uint64_t xvector_seed = 0;
  bool xvector_seed_set = false;
  int sample_rate = -1;
  int jobs = 0;
  bool force = false;
  bool quiet = false;
};

int run_train(const TrainArgs& args) {
  emoformer::ExperimentConfig config;
  if (!args.config_path.empty())
    config = emoformer::ExperimentConfig::from_json(
        read_json_file(args.config_path));
  if (!args.manifest.empty()) config.manifest_path = args.manifest;
  if (!args.out_dir.empty()) config.out_dir = args.out_dir;
  if (!args.features.empty()) {
    config.feature_kind = emoformer::input_kind_from_string(args.features);
    config.train = emoformer::TrainConfig::defaults_for(config.feature_kind);
  }
  if (args.emotions > 0) config.emotion_preset = args.emotions;
  if (!args.labels.empty()) config.custom_labels = args.labels;
  if (!args.sequence_mode.empty())
    config.model.sequence_mode =
        emoformer::sequence_mode_from_string(args.sequence_mode);
  if (args.seed_set) config.train.seed = args.seed;
  if (args.epochs > 0) config.train.max_epochs = args.epochs;
  if (args.patience > 0) config.train.patience = args.patience;
  if (args.batch_size > 0) config.train.batch_size = args.batch_size;
  if (args.learning_rate > 0) config.train.learning_rate = args.learning_rate;
  if (args.split_ratio > 0) config.train.split_ratio = args.split_ratio;
  if (args.val_fraction >= 0) config.train.val_fraction = args.val_fraction;
  if (args.stop_at_train_accuracy >= 0)
    config.train.stop_at_train_accuracy = args.stop_at_train_accuracy;
  if (args.no_augment) config.augment_train = false;
  if (args.fuse_xvector) config.model.fuse_xvector = true;
  if (!args.xvector_weights.empty())
    config.xvector_weights = args.xvector_weights;
  if (args.xvector_seed_set) config.xvector_seed = args.xvector_seed;
  if (args.sample_rate >= 0) config.sample_rate = args.sample_rate;
  if (args.jobs > 0) config.jobs = args.jobs;
  config.validate();

  if (config.out_dir.empty())
    throw emoformer::ValidationError("train: --out-dir is required");
  refuse_existing(fs::path(config.out_dir) / "report.json", args.force);

  emoformer::EpochCallback on_epoch;
  if (!args.quiet)
    on_epoch = [](int epoch, const emoformer::EpochStats& stats) {
      std::cerr << "epoch " << epoch << ": loss " << stats.train_loss
                << ", train acc " << stats.train_accuracy << ", val acc "
                << stats.val_accuracy << "\n";
    };
  const emoformer::ExperimentReport result =
      emoformer::run_experiment(config, on_epoch);

  json summary{
      {"report", (fs::path(config.out_dir) / "report.json").string()},
      {"best_epoch", result.report.at("history").at("best_epoch")},
      {"segment_accuracy",
       result.report.at("segment_metrics").at("accuracy")},
      {"clip_accuracy", result.report.at("clip_metrics").at("accuracy")}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// run-dir artifacts shared by eval and infer
// --------------------------------------------------------------------------

struct RunArtifacts {
  emoformer::ExperimentConfig config;
  emoformer::EmotionSet set = emoformer::EmotionSet::preset(5);
  emoformer::Scaler scaler;
  fs::path weights;
};

RunArtifacts load_run_dir(const std::string& run_dir) {
  const fs::path dir(run_dir);
  const json report = read_json_file(dir / "report.json");
  RunArtifacts run;
  run.config = emoformer::ExperimentConfig::from_json(report.at("config"));
  run.set = emoformer::EmotionSet::custom(
      report.at("emotion_set").get<std::vector<std::string>>());
  run.scaler = emoformer::Scaler::from_json(read_json_file(dir / "scaler.json"));
  run.weights = dir / "weights.emof";
  if (!fs::exists(run.weights))
    throw emoformer::IoError("missing " + run.weights.string());
  return run;
}

const emoformer::XVectorModel* make_extractor(
    const emoformer::ExperimentConfig& config,
    emoformer::XVectorModel& storage) {
  if (config.feature_kind != emoformer::InputKind::xvector &&
      !config.model.fuse_xvector)
    return nullptr;
  storage = config.xvector_weights.empty()
                ? emoformer::XVectorModel::seeded(config.mfcc.n_coeffs,
                                                  config.xvector_seed)
                : emoformer::XVectorModel::load(config.xvector_weights);
  return &storage;
}

// --------------------------------------------------------------------------
// eval
// --------------------------------------------------------------------------

struct EvalArgs {
  std::string run_dir;
  std::string manifest;
  std::string out_path;
  int jobs = 1;
  bool force = false;
};

int run_eval(const EvalArgs& args) {
  RunArtifacts run = load_run_dir(args.run_dir);
  const emoformer::Manifest manifest =
      emoformer::Manifest::load_csv(args.manifest);
  manifest.validate(run.set);

  emoformer::XVectorModel extractor_storage;
  const emoformer::XVectorModel* extractor =
      make_extractor(run.config, extractor_storage);
  emoformer::SegmentDataset data = emoformer::build_segments(
      manifest, run.set, run.config.feature_kind, run.config.mfcc, nullptr,
      run.config.augment.target_seconds, run.config.sample_rate, extractor,
      args.jobs);
  run.scaler.apply(data.features);

  emoformer::EmoFormer model =
      emoformer::EmoFormer::load_weights(run.weights.string());
  if (model.config().num_classes != run.set.size())
    throw emoformer::ValidationError(
        "weights expect " + std::to_string(model.config().num_classes) +
        " classes, emotion set has " + std::to_string(run.set.size()));
  const emoformer::EvalResult result = emoformer::evaluate_model(
      model, data, run.config.train.batch_size);

  json out{{"segment_metrics",
            result.segment_metrics.to_json(run.set.labels())},
           {"clip_metrics", result.clip_metrics.to_json(run.set.labels())}};
  if (args.out_path.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    refuse_existing(args.out_path, args.force);
    write_json_file(args.out_path, out);
    std::cerr << "wrote " << args.out_path << "\n";
  }
  return 0;
}

// --------------------------------------------------------------------------
// infer
// --------------------------------------------------------------------------

struct InferArgs {
  std::string run_dir;
  std::string input;
};

int run_infer(const InferArgs& args) {
  RunArtifacts run = load_run_dir(args.run_dir);
  emoformer::XVectorModel extractor_storage;
  const emoformer::XVectorModel* extractor =
      make_extractor(run.config, extractor_storage);

  emoformer::Manifest single;
  emoformer::ManifestEntry entry;
  entry.path = args.input;
  entry.label = run.set.labels().front();  // placeholder, predictions only
  entry.speaker = "unknown";
  single.entries.push_back(entry);
  emoformer::SegmentDataset data = emoformer::build_segments(
      single, run.set, run.config.feature_kind, run.config.mfcc, nullptr,
      run.config.augment.target_seconds, run.config.sample_rate, extractor,
      1);
  run.scaler.apply(data.features);

  emoformer::EmoFormer model =
      emoformer::EmoFormer::load_weights(run.weights.string());
  const std::vector<float> probs = emoformer::predict_probabilities(
      model, data, run.config.train.batch_size);

  const int k = run.set.size();
  std::vector<double> mean(static_cast<size_t>(k), 0.0);
  const size_t segments = data.size();
  for (size_t i = 0; i < segments; ++i)
    for (int j = 0; j < k; ++j)
      mean[static_cast<size_t>(j)] +=
          static_cast<double>(probs[i * static_cast<size_t>(k) +
                                    static_cast<size_t>(j)]) /
          static_cast<double>(segments);
  int best = 0;
  for (int j = 1; j < k; ++j)
    if (mean[static_cast<size_t>(j)] > mean[static_cast<size_t>(best)])
      best = j;

  json out{{"input", args.input},
           {"labels", run.set.labels()},
           {"probabilities", mean},
           {"segments", segments},
           {"label", run.set.labels()[static_cast<size_t>(best)]}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// model macs
// --------------------------------------------------------------------------

struct MacsArgs {
  std::string config_path;
  std::string input_kind;
  std::string sequence_mode;
  int classes = 0;
  bool fuse_xvector = false;
};

int run_macs(const MacsArgs& args) {
  emoformer::EmoFormerConfig config;
  if (!args.config_path.empty())
    config =
        emoformer::EmoFormerConfig::from_json(read_json_file(args.config_path));
  if (!args.input_kind.empty())
    config.input_kind = emoformer::input_kind_from_string(args.input_kind);
  if (!args.sequence_mode.empty())
    config.sequence_mode =
        emoformer::sequence_mode_from_string(args.sequence_mode);
  if (args.classes > 0) config.num_classes = args.classes;
  if (args.fuse_xvector) config.fuse_xvector = true;
  config.validate();

  emoformer::EmoFormer model(config);
  json out = model.count_macs().to_json();
  out["config"] = config.to_json();
  out["parameter_count"] = model.parameter_count();
  std::cout << out.dump(2) << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// gradcheck
// --------------------------------------------------------------------------

struct GradcheckArgs {
  uint64_t seed = 7;
  std::string out_path;
  bool force = false;
};

int run_gradcheck_cmd(const GradcheckArgs& args) {
  const emoformer::GradCheckReport report = emoformer::run_gradcheck(args.seed);

  // Worst relative error per op, preserving first-appearance order.
  std::vector<std::pair<std::string, double>> per_op;
  bool all_passed = true;
  for (const emoformer::GradCheckCase& c : report.cases) {
    auto it = std::find_if(per_op.begin(), per_op.end(),
                           [&](const auto& p) { return p.first == c.op; });
    if (it == per_op.end())
      per_op.emplace_back(c.op, c.max_rel_error);
    else
      it->second = std::max(it->second, c.max_rel_error);
    all_passed = all_passed && c.passed;
  }
  for (const auto& [op, err] : per_op)
    std::cerr << op << ": worst relative error " << err << " "
              << (err <= report.tolerance ? "(ok)" : "(FAIL)") << "\n";

  if (args.out_path.empty()) {
    std::cout << report.to_json().dump(2) << "\n";
  } else {
    refuse_existing(args.out_path, args.force);
    write_json_file(args.out_path, report.to_json());
    std::cerr << "wrote " << args.out_path << "\n";
  }
  return all_passed ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speech emotion recognition toolkit"};
  app.set_version_flag("--version",
                       std::string(kVersion) + " (c++" +
                           std::to_string(__cplusplus / 100 % 100) + ")");
  app.require_subcommand(1);

  ResampleArgs resample_args;
  auto* audio = app.add_subcommand("audio", "Audio file utilities");
  audio->require_subcommand(1);
  auto* resample_cmd =
      audio->add_subcommand("resample", "Resample a WAV file");
  resample_cmd->add_option("--rate", resample_args.rate, "Target sample rate")
      ->required();
  resample_cmd->add_option("input", resample_args.input, "Input WAV")
      ->required();
  resample_cmd->add_option("output", resample_args.output, "Output WAV")
      ->required();
  resample_cmd->add_flag("--force", resample_args.force,
                         "Overwrite existing output");

  AugmentArgs augment_args;
  auto* augment_cmd = app.add_subcommand(
      "augment", "Write augmented variants of every manifest clip");
  augment_cmd
      ->add_option("--manifest", augment_args.manifest, "Input manifest CSV")
      ->required();
  augment_cmd->add_option("--out-dir", augment_args.out_dir,
                          "Output directory")
      ->required();
  augment_cmd->add_option("--plan", augment_args.plan_path,
                          "Augmentation plan JSON (default plan if omitted)");
  augment_cmd->add_option("--sample-rate", augment_args.sample_rate,
                          "Resample before augmenting (0 keeps native rate)");
  augment_cmd->add_option("--jobs", augment_args.jobs,
                          "Clips processed in parallel");
  augment_cmd->add_flag("--force", augment_args.force,
                        "Overwrite existing outputs");

  FeaturesArgs features_args;
  auto* features = app.add_subcommand("features", "Feature extraction");
  features->require_subcommand(1);
  auto add_features_common = [&](CLI::App* cmd) {
    cmd->add_option("--manifest", features_args.manifest,
                    "Input manifest CSV")
        ->required();
    cmd->add_option("--out-dir", features_args.out_dir, "Output directory")
        ->required();
    cmd->add_option("--config", features_args.config_path,
                    "Feature extraction config JSON");
    cmd->add_option("--sample-rate", features_args.sample_rate,
                    "Resample rate (0 keeps native)");
    cmd->add_option("--target-seconds", features_args.target_seconds,
                    "Pad or trim clips to this length (0 keeps length)");
    cmd->add_option("--jobs", features_args.jobs,
                    "Clips processed in parallel");
    cmd->add_flag("--force", features_args.force,
                  "Overwrite existing outputs");
  };
  auto* features_mfcc = features->add_subcommand(
      "mfcc", "Per-segment cepstral feature files plus an index");
  add_features_common(features_mfcc);
  auto* features_xvector = features->add_subcommand(
      "xvector", "Per-segment speaker embedding files plus an index");
  add_features_common(features_xvector);
  features_xvector->add_option("--weights", features_args.weights,
                               "Extractor weights (seeded if omitted)");
  features_xvector->add_option("--xvector-seed", features_args.xvector_seed,
                               "Seed for the deterministic extractor");

  TrainArgs train_args;
  auto* train_cmd =
      app.add_subcommand("train", "Run the full training pipeline");
  train_cmd->add_option("--manifest", train_args.manifest,
                        "Labelled clip manifest CSV");
  train_cmd->add_option("--out-dir", train_args.out_dir,
                        "Directory for reports and weights");
  train_cmd->add_option("--config", train_args.config_path,
                        "Experiment config JSON (flags override it)");
  train_cmd->add_option("--features", train_args.features,
                        "Feature kind: mfcc or xvector");
  train_cmd->add_option("--emotions", train_args.emotions,
                        "Emotion preset size: 5, 7, 10 or 23");
  train_cmd->add_option("--labels", train_args.labels,
                        "Explicit emotion labels (overrides --emotions)");
  train_cmd->add_option("--sequence-mode", train_args.sequence_mode,
                        "Encoder input: pooled1 or tokens58");
  train_cmd->add_option("--seed", train_args.seed, "Random seed")
      ->trigger_on_parse()
      ->each([&](const std::string&) { train_args.seed_set = true; });
  train_cmd->add_option("--epochs", train_args.epochs, "Maximum epochs");
  train_cmd->add_option("--patience", train_args.patience,
                        "Early stopping patience");
  train_cmd->add_option("--batch-size", train_args.batch_size, "Batch size");
  train_cmd->add_option("--learning-rate", train_args.learning_rate,
                        "Adam learning rate");
  train_cmd->add_option("--split-ratio", train_args.split_ratio,
                        "Training share of the stratified split");
  train_cmd->add_option("--val-fraction", train_args.val_fraction,
                        "Validation share carved from the training clips");
  train_cmd->add_option("--stop-at-train-accuracy",
                        train_args.stop_at_train_accuracy,
                        "Stop once training accuracy reaches this value");
  train_cmd->add_flag("--no-augment", train_args.no_augment,
                      "Skip training-set augmentation");
  train_cmd->add_flag("--fuse-xvector", train_args.fuse_xvector,
                      "Concatenate a speaker embedding before the head");
  train_cmd->add_option("--xvector-weights", train_args.xvector_weights,
                        "Extractor weights for x-vector features");
  train_cmd->add_option("--xvector-seed", train_args.xvector_seed,
                        "Seed for the deterministic extractor")
      ->trigger_on_parse()
      ->each([&](const std::string&) { train_args.xvector_seed_set = true; });
  train_cmd->add_option("--sample-rate", train_args.sample_rate,
                        "Resample rate (0 keeps native)");
  train_cmd->add_option("--jobs", train_args.jobs,
                        "Clips processed in parallel during extraction");
  train_cmd->add_flag("--force", train_args.force,
                      "Overwrite an existing report");
  train_cmd->add_flag("--quiet", train_args.quiet,
                      "Suppress per-epoch progress lines");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand(
      "eval", "Score a manifest with a trained run directory");
  eval_cmd->add_option("--run-dir", eval_args.run_dir,
                       "Directory produced by train")
      ->required();
  eval_cmd->add_option("--manifest", eval_args.manifest,
                       "Labelled clip manifest CSV")
      ->required();
  eval_cmd->add_option("--out", eval_args.out_path,
                       "Write metrics JSON here instead of standard output");
  eval_cmd->add_option("--jobs", eval_args.jobs,
                       "Clips processed in parallel");
  eval_cmd->add_flag("--force", eval_args.force,
                     "Overwrite an existing metrics file");

  InferArgs infer_args;
  auto* infer_cmd =
      app.add_subcommand("infer", "Classify a single WAV clip");
  infer_cmd->add_option("--run-dir", infer_args.run_dir,
                        "Directory produced by train")
      ->required();
  infer_cmd->add_option("input", infer_args.input, "WAV file")->required();

  MacsArgs macs_args;
  auto* model_cmd = app.add_subcommand("model", "Model inspection");
  model_cmd->require_subcommand(1);
  auto* macs_cmd = model_cmd->add_subcommand(
      "macs", "Per-layer multiply-accumulate counts");
  macs_cmd->add_option("--config", macs_args.config_path,
                       "Model config JSON");
  macs_cmd->add_option("--input-kind", macs_args.input_kind,
                       "mfcc or xvector");
  macs_cmd->add_option("--sequence-mode", macs_args.sequence_mode,
                       "pooled1 or tokens58");
  macs_cmd->add_option("--classes", macs_args.classes, "Output classes");
  macs_cmd->add_flag("--fuse-xvector", macs_args.fuse_xvector,
                     "Concatenate a speaker embedding before the head");

  GradcheckArgs gradcheck_args;
  auto* gradcheck_cmd = app.add_subcommand(
      "gradcheck", "Finite-difference check of every differentiable op");
  gradcheck_cmd->add_option("--seed", gradcheck_args.seed, "Random seed");
  gradcheck_cmd->add_option("--out", gradcheck_args.out_path,
                            "Write the JSON report here");
  gradcheck_cmd->add_flag("--force", gradcheck_args.force,
                          "Overwrite an existing report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << e.what() << "\nRun with --help for usage.\n";
    return 1;
  }

  try {
    if (resample_cmd->parsed()) return run_resample(resample_args);
    if (augment_cmd->parsed()) return run_augment(augment_args);
    if (features_mfcc->parsed())
      return run_features(features_args, emoformer::InputKind::mfcc);
    if (features_xvector->parsed())
      return run_features(features_args, emoformer::InputKind::xvector);
    if (train_cmd->parsed()) return run_train(train_args);
    if (eval_cmd->parsed()) return run_eval(eval_args);
    if (infer_cmd->parsed()) return run_infer(infer_args);
    if (macs_cmd->parsed()) return run_macs(macs_args);
    if (gradcheck_cmd->parsed()) return run_gradcheck_cmd(gradcheck_args);
  } catch (const emoformer::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == emoformer::Error::Kind::validation ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
