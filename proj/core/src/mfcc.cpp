#include "emoformer/mfcc.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "emoformer/errors.hpp"
#include "emoformer/fft.hpp"

namespace emoformer {

namespace {

constexpr double kPi = 3.141592653589793238463;
constexpr double kLogGuard = 1e-10;

int frame_len_samples(const MfccConfig& c, int rate) {
  return static_cast<int>(std::lround(c.frame_len_ms * rate / 1000.0));
}

int hop_samples(const MfccConfig& c, int rate) {
  return static_cast<int>(std::lround(c.hop_ms * rate / 1000.0));
}

}  // namespace

void MfccConfig::validate() const {
  if (!(alpha > 0.9 && alpha < 1.0))
    throw ValidationError("MfccConfig: alpha must satisfy 0.9 < alpha < 1, got " +
                          std::to_string(alpha));
  if (frame_len_ms <= 0 || hop_ms <= 0)
    throw ValidationError("MfccConfig: frame_len_ms and hop_ms must be > 0");
  if (!is_power_of_two(static_cast<size_t>(nfft)))
    throw ValidationError("MfccConfig: nfft must be a power of two, got " +
                          std::to_string(nfft));
  if (n_mels <= 0)
    throw ValidationError("MfccConfig: n_mels must be > 0");
  if (n_coeffs <= 0 || n_coeffs > n_mels)
    throw ValidationError("MfccConfig: need 0 < n_coeffs <= n_mels, got " +
                          std::to_string(n_coeffs) + " vs " +
                          std::to_string(n_mels));
  if (overlap_frames < 0 || overlap_frames >= segment_frames)
    throw ValidationError(
        "MfccConfig: overlap_frames must satisfy 0 <= overlap < segment, got " +
        std::to_string(overlap_frames) + " vs " +
        std::to_string(segment_frames));
}

std::string MfccConfig::to_json() const {
  nlohmann::json j;
  j["alpha"] = alpha;
  j["frame_len_ms"] = frame_len_ms;
  j["hop_ms"] = hop_ms;
  j["window"] = window == WindowKind::hamming ? "hamming" : "hann";
  j["nfft"] = nfft;
  j["n_mels"] = n_mels;
  j["fmin_hz"] = fmin_hz;
  j["fmax_hz"] = fmax_hz;
  j["n_coeffs"] = n_coeffs;
  j["segment_frames"] = segment_frames;
  j["overlap_frames"] = overlap_frames;
  return j.dump(2);
}

MfccConfig MfccConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("MfccConfig: bad JSON: ") + e.what());
  }
  MfccConfig c;
  if (j.contains("alpha")) c.alpha = j["alpha"].get<double>();
  if (j.contains("frame_len_ms")) c.frame_len_ms = j["frame_len_ms"].get<double>();
  if (j.contains("hop_ms")) c.hop_ms = j["hop_ms"].get<double>();
  if (j.contains("window")) {
    const std::string w = j["window"].get<std::string>();
    if (w == "hamming") c.window = WindowKind::hamming;
    else if (w == "hann") c.window = WindowKind::hann;
    else throw ValidationError("MfccConfig: unknown window '" + w + "'");
  }
  if (j.contains("nfft")) c.nfft = j["nfft"].get<int>();
  if (j.contains("n_mels")) c.n_mels = j["n_mels"].get<int>();
  if (j.contains("fmin_hz")) c.fmin_hz = j["fmin_hz"].get<double>();
  if (j.contains("fmax_hz")) c.fmax_hz = j["fmax_hz"].get<double>();
  if (j.contains("n_coeffs")) c.n_coeffs = j["n_coeffs"].get<int>();
  if (j.contains("segment_frames")) c.segment_frames = j["segment_frames"].get<int>();
  if (j.contains("overlap_frames")) c.overlap_frames = j["overlap_frames"].get<int>();
  c.validate();
  return c;
}

MfccConfig MfccConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("MfccConfig: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::vector<double> pre_emphasis(const std::vector<double>& signal,
                                 double alpha) {
  if (!(alpha > 0.9 && alpha < 1.0))
    throw ValidationError("pre_emphasis: alpha must satisfy 0.9 < alpha < 1, got " +
                          std::to_string(alpha));
  if (signal.empty())
    throw ValidationError("pre_emphasis: signal is empty");
  std::vector<double> out(signal.size());
  out[0] = signal[0];
  for (size_t n = 1; n < signal.size(); ++n)
    out[n] = signal[n] - alpha * signal[n - 1];
  return out;
}

FrameMatrix frame_and_window(const std::vector<double>& signal,
                             const MfccConfig& config, int sample_rate) {
  const int frame_len = frame_len_samples(config, sample_rate);
  const int hop = hop_samples(config, sample_rate);
  if (frame_len <= 0 || hop <= 0)
    throw ValidationError("frame_and_window: degenerate frame/hop");
  if (static_cast<int>(signal.size()) < frame_len)
    throw ValidationError("frame_and_window: signal too short (" +
                          std::to_string(signal.size()) + " samples, need >= " +
                          std::to_string(frame_len) + ")");

  const int num_frames =
      1 + static_cast<int>((signal.size() - frame_len) / hop);

  std::vector<double> window(frame_len);
  for (int i = 0; i < frame_len; ++i) {
    const double phase = 2.0 * kPi * i / (frame_len - 1);
    window[i] = config.window == WindowKind::hamming
                    ? 0.54 - 0.46 * std::cos(phase)
                    : 0.5 - 0.5 * std::cos(phase);
  }

  FrameMatrix out;
  out.num_frames = num_frames;
  out.frame_len = frame_len;
  out.data.resize(static_cast<size_t>(num_frames) * frame_len);
  for (int f = 0; f < num_frames; ++f) {
    const size_t start = static_cast<size_t>(f) * hop;
    double* row = out.data.data() + static_cast<size_t>(f) * frame_len;
    for (int i = 0; i < frame_len; ++i)
      row[i] = signal[start + i] * window[i];
  }
  return out;
}

PowerSpectrum power_spectrum(const FrameMatrix& frames, int nfft) {
  if (!is_power_of_two(static_cast<size_t>(nfft)))
    throw ValidationError("power_spectrum: nfft must be a power of two, got " +
                          std::to_string(nfft));
  if (nfft < frames.frame_len)
    throw ValidationError("power_spectrum: nfft " + std::to_string(nfft) +
                          " < frame length " +
                          std::to_string(frames.frame_len));
  PowerSpectrum out;
  out.num_frames = frames.num_frames;
  out.num_bins = nfft / 2 + 1;
  out.data.resize(static_cast<size_t>(out.num_frames) * out.num_bins);
  for (int f = 0; f < frames.num_frames; ++f) {
    const double* row =
        frames.data.data() + static_cast<size_t>(f) * frames.frame_len;
    auto bins = power_spectrum_bins(row, frames.frame_len, nfft);
    double* dst = out.data.data() + static_cast<size_t>(f) * out.num_bins;
    for (int k = 0; k < out.num_bins; ++k) dst[k] = bins[k];
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

std::vector<double> mel_filterbank(const MfccConfig& config, int sample_rate) {
  const double fmax = config.fmax_hz > 0.0 ? config.fmax_hz : sample_rate / 2.0;
  const double fmin = config.fmin_hz;
  if (!(fmin >= 0.0) || !(fmin < fmax) || fmax > sample_rate / 2.0 + 1e-9)
    throw ValidationError("mel_filterbank: need 0 <= fmin < fmax <= rate/2");

  const int num_bins = config.nfft / 2 + 1;
  const int n_mels = config.n_mels;
  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);

  // n_mels + 2 edge frequencies, uniform in mel. Filter i rises over
  // [edge_i, edge_{i+1}] and falls over [edge_{i+1}, edge_{i+2}].
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

  std::vector<double> banks(static_cast<size_t>(n_mels) * num_bins, 0.0);
  for (int i = 0; i < n_mels; ++i) {
    const double left = edges[i], center = edges[i + 1], right = edges[i + 2];
    double* row = banks.data() + static_cast<size_t>(i) * num_bins;
    for (int k = 0; k < num_bins; ++k) {
      const double f =
          static_cast<double>(k) * sample_rate / config.nfft;
      double w = 0.0;
      if (f >= left && f <= center && center > left)
        w = (f - left) / (center - left);
      else if (f > center && f <= right && right > center)
        w = (right - f) / (right - center);
      row[k] = w;
    }
  }
  return banks;
}

MfccMatrix extract_mfcc(const AudioClip& clip, const MfccConfig& config) {
  config.validate();
  clip.validate();

  std::vector<double> signal(clip.samples.begin(), clip.samples.end());
  auto emphasized = pre_emphasis(signal, config.alpha);
  auto frames = frame_and_window(emphasized, config, clip.sample_rate);
  auto power = power_spectrum(frames, config.nfft);
  auto banks = mel_filterbank(config, clip.sample_rate);

  const int T = power.num_frames;
  const int M = config.n_mels;
  const int C = config.n_coeffs;
  const int num_bins = power.num_bins;

  // Orthonormal DCT-II over the mel axis.
  std::vector<double> dct(static_cast<size_t>(C) * M);
  for (int c = 0; c < C; ++c) {
    const double scale = c == 0 ? std::sqrt(1.0 / M) : std::sqrt(2.0 / M);
    for (int m = 0; m < M; ++m)
      dct[static_cast<size_t>(c) * M + m] =
          scale * std::cos(kPi * c * (2.0 * m + 1.0) / (2.0 * M));
  }

  MfccMatrix out;
  out.config = config;
  out.source_id = clip.source_id;
  out.n_coeffs = C;
  out.num_frames = T;
  out.coeffs.resize(static_cast<size_t>(C) * T);
  out.frame_times.resize(T);
  const double hop_s = config.hop_ms / 1000.0;
  for (int t = 0; t < T; ++t) out.frame_times[t] = t * hop_s;

  std::vector<double> log_mel(M);
  for (int t = 0; t < T; ++t) {
    const double* spec = power.data.data() + static_cast<size_t>(t) * num_bins;
    for (int m = 0; m < M; ++m) {
      const double* bank = banks.data() + static_cast<size_t>(m) * num_bins;
      double acc = 0.0;
      for (int k = 0; k < num_bins; ++k) acc += bank[k] * spec[k];
      log_mel[m] = std::log(acc + kLogGuard);
    }
    for (int c = 0; c < C; ++c) {
      const double* row = dct.data() + static_cast<size_t>(c) * M;
      double acc = 0.0;
      for (int m = 0; m < M; ++m) acc += row[m] * log_mel[m];
      out.coeffs[static_cast<size_t>(c) * T + t] = acc;
    }
  }
  return out;
}

std::vector<FeatureSegment> segment(const MfccMatrix& m, int segment_frames,
                                    int overlap_frames) {
  if (segment_frames <= 0 || overlap_frames < 0 ||
      overlap_frames >= segment_frames)
    throw ValidationError("segment: need 0 <= overlap < segment_frames");
  if (m.num_frames < segment_frames)
    throw ValidationError("segment: matrix has " +
                          std::to_string(m.num_frames) +
                          " frames, need at least " +
                          std::to_string(segment_frames));

  const int hop = segment_frames - overlap_frames;
  const int count = 1 + (m.num_frames - segment_frames) / hop;

  std::vector<FeatureSegment> out;
  out.reserve(count);
  for (int s = 0; s < count; ++s) {
    FeatureSegment seg;
    seg.rows = m.n_coeffs;
    seg.cols = segment_frames;
    seg.parent_id = m.source_id;
    seg.index = s;
    seg.data.resize(static_cast<size_t>(seg.rows) * seg.cols);
    const int offset = s * hop;
    for (int c = 0; c < m.n_coeffs; ++c) {
      const double* src =
          m.coeffs.data() + static_cast<size_t>(c) * m.num_frames + offset;
      double* dst = seg.data.data() + static_cast<size_t>(c) * segment_frames;
      for (int t = 0; t < segment_frames; ++t) dst[t] = src[t];
    }
    out.push_back(std::move(seg));
  }
  return out;
}

}  // namespace emoformer
