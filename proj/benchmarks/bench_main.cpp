// Throughput tracking for the hot paths: resampling, MFCC extraction,
// convolution, GEMM, full model forward and a complete training step.

#include <cmath>
#include <cstdint>
#include <vector>

#include <benchmark/benchmark.h>

#include "emoformer/audio.hpp"
#include "emoformer/mfcc.hpp"
#include "emoformer/model.hpp"
#include "emoformer/ops.hpp"
#include "emoformer/rng.hpp"
#include "emoformer/xvector.hpp"

using namespace emoformer;

namespace {

AudioClip bench_tone(double seconds, int sample_rate) {
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.source_id = "bench";
  const size_t n = static_cast<size_t>(seconds * sample_rate);
  clip.samples.resize(n);
  for (size_t i = 0; i < n; ++i)
    clip.samples[i] = 0.4f * static_cast<float>(
                                 std::sin(2.0 * 3.141592653589793 * 440.0 *
                                          static_cast<double>(i) /
                                          sample_rate));
  return clip;
}

nn::Tensor random_tensor(nn::Shape shape, uint64_t seed,
                         bool requires_grad = false) {
  Rng rng(seed);
  std::vector<float> data(static_cast<size_t>(nn::shape_numel(shape)));
  for (float& v : data) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  return nn::Tensor::from_data(std::move(shape), std::move(data),
                               requires_grad);
}

void BM_Resample16kTo8k(benchmark::State& state) {
  const AudioClip clip = bench_tone(3.0, 16000);
  for (auto _ : state) benchmark::DoNotOptimize(resample(clip, 8000));
}

void BM_ExtractMfcc(benchmark::State& state) {
  const AudioClip clip = bench_tone(static_cast<double>(state.range(0)),
                                    16000);
  const MfccConfig config;
  for (auto _ : state) benchmark::DoNotOptimize(extract_mfcc(clip, config));
}

void BM_Conv2dForward(benchmark::State& state) {
  const nn::Tensor x = random_tensor({1, 13, 469, 1}, 1);
  const nn::Tensor k = random_tensor({5, 5, 1, 16}, 2);
  nn::NoGradGuard guard;
  for (auto _ : state)
    benchmark::DoNotOptimize(nn::conv2d(x, k, 1, nn::Padding::same));
}

void BM_Matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  const nn::Tensor a = random_tensor({n, n}, 3);
  const nn::Tensor b = random_tensor({n, n}, 4);
  nn::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(nn::matmul(a, b));
}

void BM_ModelForwardInfer(benchmark::State& state) {
  EmoFormer model{EmoFormerConfig{}};
  const nn::Tensor batch =
      random_tensor({state.range(0), 13, 469, 1}, 5);
  for (auto _ : state)
    benchmark::DoNotOptimize(model.forward(batch, nn::Mode::infer));
}

void BM_ModelTrainStep(benchmark::State& state) {
  EmoFormerConfig config;
  config.num_classes = 5;
  EmoFormer model{config};
  const int64_t batch_rows = state.range(0);
  const nn::Tensor batch = random_tensor({batch_rows, 13, 469, 1}, 6);
  std::vector<float> target_rows(static_cast<size_t>(batch_rows * 5), 0.0f);
  for (int64_t r = 0; r < batch_rows; ++r)
    target_rows[static_cast<size_t>(r * 5 + r % 5)] = 1.0f;
  const nn::Tensor targets =
      nn::Tensor::from_data({batch_rows, 5}, target_rows);
  nn::AdamT<float> optimizer(model.parameters(), 1e-3);
  for (auto _ : state) {
    optimizer.zero_grad();
    nn::Tensor loss =
        nn::cross_entropy(model.forward(batch, nn::Mode::train), targets);
    nn::backward(loss);
    optimizer.step();
    benchmark::DoNotOptimize(loss.scalar());
  }
}

void BM_XVectorExtract(benchmark::State& state) {
  const AudioClip clip = bench_tone(5.0, 16000);
  const MfccMatrix features = extract_mfcc(clip, MfccConfig{});
  const XVectorModel model = XVectorModel::seeded(13, 7);
  for (auto _ : state)
    benchmark::DoNotOptimize(extract_xvector(features, model));
}

BENCHMARK(BM_Resample16kTo8k)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExtractMfcc)->Arg(1)->Arg(5)->Arg(15)->Unit(
    benchmark::kMillisecond);
BENCHMARK(BM_Conv2dForward)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ModelForwardInfer)->Arg(1)->Arg(8)->Unit(
    benchmark::kMillisecond);
BENCHMARK(BM_ModelTrainStep)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_XVectorExtract)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
