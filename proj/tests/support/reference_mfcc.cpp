#include "reference_mfcc.hpp"

#include <cmath>

namespace emoformer::testing {

namespace {
constexpr double kPi = 3.14159265358979323846;

double ref_hz_to_mel(double hz) {
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double ref_mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}
}  // namespace

std::vector<double> reference_mfcc(const AudioClip& clip,
                                   const MfccConfig& config,
                                   int* out_frames) {
  const int rate = clip.sample_rate;
  const auto flen =
      static_cast<int>(std::lround(config.frame_len_ms * rate / 1000.0));
  const auto hop =
      static_cast<int>(std::lround(config.hop_ms * rate / 1000.0));

  std::vector<double> emphasized(clip.samples.size());
  emphasized[0] = clip.samples[0];
  for (size_t n = 1; n < clip.samples.size(); ++n)
    emphasized[n] = static_cast<double>(clip.samples[n]) -
                    config.alpha * static_cast<double>(clip.samples[n - 1]);

  const int frames = 1 + static_cast<int>((emphasized.size() - flen) / hop);
  if (out_frames != nullptr) *out_frames = frames;

  std::vector<double> window(flen);
  for (int i = 0; i < flen; ++i) {
    const double phase = 2.0 * kPi * i / (flen - 1);
    window[i] = config.window == WindowKind::hamming
                    ? 0.54 - 0.46 * std::cos(phase)
                    : 0.5 - 0.5 * std::cos(phase);
  }

  const int nfft = config.nfft;
  const int bins = nfft / 2 + 1;
  const double fmax = config.fmax_hz > 0.0 ? config.fmax_hz : rate / 2.0;
  const double mel_lo = ref_hz_to_mel(config.fmin_hz);
  const double mel_hi = ref_hz_to_mel(fmax);
  std::vector<double> edges(config.n_mels + 2);
  for (int i = 0; i < config.n_mels + 2; ++i)
    edges[i] =
        ref_mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (config.n_mels + 1));

  const int C = config.n_coeffs;
  const int M = config.n_mels;
  std::vector<double> out(static_cast<size_t>(C) * frames);
  std::vector<double> frame(flen);
  std::vector<double> power(bins);
  std::vector<double> log_mel(M);

  for (int f = 0; f < frames; ++f) {
    for (int i = 0; i < flen; ++i)
      frame[i] = emphasized[static_cast<size_t>(f) * hop + i] * window[i];

    // Direct DFT, one bin at a time; zero padding to nfft is implicit in
    // summing only the flen real samples.
    for (int k = 0; k < bins; ++k) {
      double re = 0.0, im = 0.0;
      for (int n = 0; n < flen; ++n) {
        const double angle = -2.0 * kPi * k * n / nfft;
        re += frame[n] * std::cos(angle);
        im += frame[n] * std::sin(angle);
      }
      power[k] = re * re + im * im;
    }

    for (int m = 0; m < M; ++m) {
      const double left = edges[m], center = edges[m + 1],
                   right = edges[m + 2];
      double acc = 0.0;
      for (int k = 0; k < bins; ++k) {
        const double freq = static_cast<double>(k) * rate / nfft;
        double w = 0.0;
        if (freq >= left && freq <= center && center > left)
          w = (freq - left) / (center - left);
        else if (freq > center && freq <= right && right > center)
          w = (right - freq) / (right - center);
        acc += w * power[k];
      }
      log_mel[m] = std::log(acc + 1e-10);
    }

    for (int c = 0; c < C; ++c) {
      const double scale = c == 0 ? std::sqrt(1.0 / M) : std::sqrt(2.0 / M);
      double acc = 0.0;
      for (int m = 0; m < M; ++m)
        acc += scale * std::cos(kPi * c * (2.0 * m + 1.0) / (2.0 * M)) *
               log_mel[m];
      out[static_cast<size_t>(c) * frames + f] = acc;
    }
  }
  return out;
}

}  // namespace emoformer::testing
