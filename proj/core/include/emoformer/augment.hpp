#pragma once

#include <string>
#include <vector>

#include "emoformer/audio.hpp"

namespace emoformer {

// Training-set augmentation recipe. Defaults: stretch by 0.9 and 1.1,
// pitch by +/-2 semitones, everything fixed to 15 s, original kept.
struct AugmentPlan {
  std::vector<double> stretch_factors{0.9, 1.1};
  std::vector<double> pitch_semitones{-2.0, 2.0};
  double target_seconds = 15.0;
  bool include_original = true;

  void validate() const;

  std::string to_json() const;
  static AugmentPlan from_json(const std::string& text);
  static AugmentPlan load(const std::string& path);
};

// Phase-vocoder stretch (STFT 2048, hop 512, Hann). `factor` multiplies
// playback rate, so output duration is in_duration / factor within 2%.
// Pitch is preserved.
AudioClip time_stretch(const AudioClip& clip, double factor);

// Shift pitch by a semitone count: resample by r = 2^(semitones/12), then
// time-stretch by 1/r. Duration is preserved within 2%.
AudioClip pitch_shift(const AudioClip& clip, double semitones);

// Pad with trailing zeros or truncate the tail to exactly
// round(target_seconds * sample_rate) samples.
AudioClip fix_length(const AudioClip& clip, double target_seconds);

// Original (optional) + one clip per stretch factor + one per semitone
// value, each passed through fix_length. source_id carries the transform
// tag. Deterministic; no randomness anywhere.
std::vector<AudioClip> augment_set(const AudioClip& clip,
                                   const AugmentPlan& plan);

}  // namespace emoformer
