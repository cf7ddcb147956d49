#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "emoformer/audio.hpp"
#include "emoformer/dataset.hpp"
#include "emoformer/rng.hpp"

namespace emoformer::testing {

// Unique directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& prefix);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }

 private:
  std::filesystem::path path_;
};

// Sine tone with optional harmonics and white noise, peak-limited to |1|.
AudioClip make_tone(double freq_hz, double seconds, int sample_rate,
                    double noise_amplitude, uint64_t seed);

// Uniform white noise in [-amplitude, amplitude].
AudioClip make_noise(double seconds, int sample_rate, double amplitude,
                     uint64_t seed);

// Writes `clips_per_class` tone clips per label under dir and returns a
// manifest; per-class base frequencies are spread so classes stay separable.
Manifest make_tone_corpus(const std::filesystem::path& dir,
                          const std::vector<std::string>& labels,
                          int clips_per_class, double seconds,
                          int sample_rate, uint64_t seed);

// |DFT|^2 of one real frame at bin k, by direct summation.
double naive_power_at_bin(const std::vector<double>& frame, int nfft, int k);

// Dominant frequency of a clip by direct DFT over the whole signal.
double dominant_frequency(const AudioClip& clip, int nfft);

}  // namespace emoformer::testing
