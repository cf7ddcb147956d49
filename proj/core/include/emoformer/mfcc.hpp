#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emoformer/audio.hpp"

namespace emoformer {

enum class WindowKind { hamming, hann };

struct MfccConfig {
  double alpha = 0.97;        // pre-emphasis, must satisfy 0.9 < alpha < 1
  double frame_len_ms = 25.0;
  double hop_ms = 10.0;
  WindowKind window = WindowKind::hamming;
  int nfft = 512;             // power of two, >= frame length in samples
  int n_mels = 40;
  double fmin_hz = 0.0;
  double fmax_hz = 0.0;       // 0 means sample_rate / 2
  int n_coeffs = 13;
  int segment_frames = 469;
  int overlap_frames = 128;

  void validate() const;

  std::string to_json() const;
  static MfccConfig from_json(const std::string& text);
  static MfccConfig load(const std::string& path);
};

// [n_coeffs x T] coefficient matrix, row-major over coefficients.
struct MfccMatrix {
  std::vector<double> coeffs;
  int n_coeffs = 0;
  int num_frames = 0;
  std::vector<double> frame_times;  // start time of each frame, seconds
  std::string source_id;
  MfccConfig config;

  double at(int coeff, int frame) const {
    return coeffs[static_cast<size_t>(coeff) * num_frames + frame];
  }
};

// One fixed-shape model input window: [n_coeffs x segment_frames],
// 13 x 469 with defaults.
struct FeatureSegment {
  std::vector<double> data;  // row-major [rows x cols]
  int rows = 0;
  int cols = 0;
  std::string parent_id;
  int index = 0;
};

// y[0] = x[0]; y[n] = x[n] - alpha * x[n-1].
std::vector<double> pre_emphasis(const std::vector<double>& signal,
                                 double alpha);

// Overlapping frames, each multiplied by the window. Row-major
// [num_frames x frame_len]; num_frames = 1 + floor((len - frame_len)/hop).
struct FrameMatrix {
  std::vector<double> data;
  int num_frames = 0;
  int frame_len = 0;
};
FrameMatrix frame_and_window(const std::vector<double>& signal,
                             const MfccConfig& config, int sample_rate);

// |DFT|^2 per frame, non-negative-frequency bins only:
// [num_frames x (nfft/2 + 1)].
struct PowerSpectrum {
  std::vector<double> data;
  int num_frames = 0;
  int num_bins = 0;
};
PowerSpectrum power_spectrum(const FrameMatrix& frames, int nfft);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filters, peaks uniformly spaced on the mel scale:
// [n_mels x (nfft/2 + 1)] row-major.
std::vector<double> mel_filterbank(const MfccConfig& config, int sample_rate);

MfccMatrix extract_mfcc(const AudioClip& clip, const MfccConfig& config);

// Windows of `segment_frames` columns at hop segment_frames -
// overlap_frames; the trailing remainder is dropped.
std::vector<FeatureSegment> segment(const MfccMatrix& m, int segment_frames,
                                    int overlap_frames);

}  // namespace emoformer
