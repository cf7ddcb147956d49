#include "emoformer/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "emoformer/errors.hpp"

namespace emoformer {

namespace {

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatIeeeFloat = 3;
constexpr uint16_t kFormatExtensible = 0xfffe;

uint32_t read_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

// Zeroth-order modified Bessel function, power series.
double bessel_i0(double x) {
  double sum = 1.0;
  double term = 1.0;
  const double half_x = x / 2.0;
  for (int k = 1; k < 64; ++k) {
    term *= (half_x / k) * (half_x / k);
    sum += term;
    if (term < sum * 1e-16) break;
  }
  return sum;
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = 3.141592653589793238463 * x;
  return std::sin(px) / px;
}

}  // namespace

void AudioClip::validate() const {
  if (sample_rate <= 0) {
    throw ValidationError("AudioClip: sample_rate must be > 0, got " +
                          std::to_string(sample_rate));
  }
  for (size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples[i])) {
      throw ValidationError("AudioClip: non-finite sample at index " +
                            std::to_string(i));
    }
  }
}

AudioClip load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_wav: cannot open '" + path + "'");
  std::string raw((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  const uint8_t* p = reinterpret_cast<const uint8_t*>(raw.data());
  const size_t n = raw.size();

  if (n < 12) throw FormatError("load_wav: file too short for RIFF header", n);
  if (std::memcmp(p, "RIFF", 4) != 0)
    throw FormatError("load_wav: missing RIFF tag", 0);
  if (std::memcmp(p + 8, "WAVE", 4) != 0)
    throw FormatError("load_wav: missing WAVE tag", 8);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  const uint8_t* data = nullptr;
  size_t data_len = 0, data_off = 0;

  size_t off = 12;
  while (off + 8 <= n) {
    const uint8_t* tag = p + off;
    uint32_t chunk_len = read_u32(p + off + 4);
    size_t body = off + 8;
    if (body + chunk_len > n)
      throw FormatError("load_wav: chunk '" +
                            std::string(reinterpret_cast<const char*>(tag), 4) +
                            "' overruns file",
                        off);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (chunk_len < 16)
        throw FormatError("load_wav: fmt chunk too short", body);
      format = read_u16(p + body);
      channels = read_u16(p + body + 2);
      rate = read_u32(p + body + 4);
      bits = read_u16(p + body + 14);
      if (format == kFormatExtensible && chunk_len >= 40) {
        // Sub-format GUID starts with the effective format code.
        format = read_u16(p + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data = p + body;
      data_len = chunk_len;
      data_off = body;
    }
    // Chunks are word-aligned.
    off = body + chunk_len + (chunk_len & 1);
  }

  if (!have_fmt) throw FormatError("load_wav: no fmt chunk", n);
  if (data == nullptr) throw FormatError("load_wav: no data chunk", n);
  if (channels != 1 && channels != 2)
    throw FormatError("load_wav: unsupported channel count " +
                          std::to_string(channels),
                      data_off);
  if (rate == 0) throw FormatError("load_wav: sample rate is zero", data_off);

  const bool pcm16 = (format == kFormatPcm && bits == 16);
  const bool f32 = (format == kFormatIeeeFloat && bits == 32);
  if (!pcm16 && !f32)
    throw ValidationError(
        "load_wav: unsupported codec (format " + std::to_string(format) +
        ", " + std::to_string(bits) +
        " bits); only PCM16 and IEEE float32 are handled");

  const size_t bytes_per_sample = pcm16 ? 2 : 4;
  const size_t frame_bytes = bytes_per_sample * channels;
  const size_t frames = data_len / frame_bytes;

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.source_id = path;
  clip.samples.resize(frames);
  for (size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (size_t c = 0; c < channels; ++c) {
      const uint8_t* s = data + i * frame_bytes + c * bytes_per_sample;
      if (pcm16) {
        int16_t v = static_cast<int16_t>(s[0] | (s[1] << 8));
        acc += static_cast<double>(v) / 32768.0;
      } else {
        float v;
        std::memcpy(&v, s, 4);
        acc += v;
      }
    }
    clip.samples[i] = static_cast<float>(acc / channels);
  }
  return clip;
}

void save_wav(const AudioClip& clip, const std::string& path) {
  clip.validate();
  const uint32_t n = static_cast<uint32_t>(clip.samples.size());
  std::string out;
  out.reserve(44 + 2 * n);
  out.append("RIFF");
  put_u32(out, 36 + 2 * n);
  out.append("WAVE");
  out.append("fmt ");
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<uint32_t>(clip.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.append("data");
  put_u32(out, 2 * n);
  for (uint32_t i = 0; i < n; ++i) {
    double s = std::clamp(static_cast<double>(clip.samples[i]), -1.0, 1.0);
    long v = std::lrint(s * 32768.0);
    v = std::clamp(v, -32768L, 32767L);
    put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(v)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_wav: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("save_wav: write failed for '" + path + "'");
}

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) {
    throw ValidationError("resample: target_rate must be > 0, got " +
                          std::to_string(target_rate));
  }
  clip.validate();
  if (target_rate == clip.sample_rate) return clip;

  const double ratio =
      static_cast<double>(target_rate) / static_cast<double>(clip.sample_rate);
  const size_t in_len = clip.samples.size();
  const size_t out_len =
      static_cast<size_t>(std::llround(static_cast<double>(in_len) * ratio));

  // Fixed-quality kernel: 32 zero crossings per side, Kaiser beta 8.555,
  // cutoff slightly below the narrower Nyquist.
  const double down = std::min(1.0, ratio);
  const double cutoff = 0.5 * down * 0.945;
  const double half_width = 32.0 / down;
  const int taps = static_cast<int>(std::ceil(half_width));
  const double beta = 8.555;
  const double i0_beta = bessel_i0(beta);

  // Kaiser window sampled on |u| in [0, 1], linearly interpolated per tap.
  constexpr int kTableSize = 8192;
  std::vector<double> window(kTableSize + 1);
  for (int j = 0; j <= kTableSize; ++j) {
    const double u = static_cast<double>(j) / kTableSize;
    window[j] = bessel_i0(beta * std::sqrt(1.0 - u * u)) / i0_beta;
  }
  auto kaiser = [&](double u) {
    const double s = std::abs(u) * kTableSize;
    const int j = std::min(static_cast<int>(s), kTableSize - 1);
    const double f = s - j;
    return window[j] + f * (window[j + 1] - window[j]);
  };

  AudioClip out;
  out.sample_rate = target_rate;
  out.source_id = clip.source_id;
  out.samples.resize(out_len);

  const float* x = clip.samples.data();
  for (size_t i = 0; i < out_len; ++i) {
    const double t = static_cast<double>(i) / ratio;
    const long center = std::lrint(std::floor(t));
    double acc = 0.0;
    double wsum = 0.0;
    for (long k = center - taps; k <= center + taps; ++k) {
      const double d = static_cast<double>(k) - t;
      const double u = d / half_width;
      if (u < -1.0 || u > 1.0) continue;
      const double w = 2.0 * cutoff * sinc(2.0 * cutoff * d) * kaiser(u);
      wsum += w;
      if (k >= 0 && k < static_cast<long>(in_len))
        acc += w * static_cast<double>(x[k]);
    }
    out.samples[i] = wsum > 0.0 ? static_cast<float>(acc / wsum) : 0.0f;
  }
  return out;
}

}  // namespace emoformer
