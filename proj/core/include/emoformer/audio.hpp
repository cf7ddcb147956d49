#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace emoformer {

// Mono sample buffer in [-1, 1] plus its rate. The unit flowing through
// I/O, augmentation, and feature extraction.
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = 0;
  std::string source_id;

  double duration_seconds() const {
    return sample_rate > 0
               ? static_cast<double>(samples.size()) / sample_rate
               : 0.0;
  }

  // Throws ValidationError on a non-positive rate or non-finite samples.
  void validate() const;
};

// Reads a RIFF/WAVE file. PCM 16-bit and IEEE float 32-bit, mono or stereo;
// stereo is downmixed by channel averaging, integer samples are scaled by
// 1/32768. Unknown chunks are skipped.
AudioClip load_wav(const std::string& path);

// Writes PCM16 little-endian. Samples outside [-1, 1] are clamped.
void save_wav(const AudioClip& clip, const std::string& path);

// Band-limited rate conversion (Kaiser-windowed sinc, fixed quality).
// Output length is round(len * target_rate / source_rate); equal rates
// return the clip unchanged.
AudioClip resample(const AudioClip& clip, int target_rate);

}  // namespace emoformer
