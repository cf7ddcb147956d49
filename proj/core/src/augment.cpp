#include "emoformer/augment.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "emoformer/errors.hpp"
#include "emoformer/fft.hpp"

namespace emoformer {

namespace {

constexpr size_t kStftSize = 2048;
constexpr size_t kSynthesisHop = 512;
constexpr double kPi = 3.141592653589793238463;

std::vector<double> hann_window(size_t n) {
  std::vector<double> w(n);
  for (size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
  return w;
}

double wrap_phase(double x) {
  x = std::fmod(x + kPi, 2.0 * kPi);
  if (x < 0) x += 2.0 * kPi;
  return x - kPi;
}

std::string transform_tag(const std::string& base, const std::string& tag) {
  return base.empty() ? tag : base + "#" + tag;
}

std::string format_factor(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

void AugmentPlan::validate() const {
  for (double f : stretch_factors) {
    if (!(f > 0.0))
      throw ValidationError("AugmentPlan: stretch factor must be > 0, got " +
                            format_factor(f));
  }
  for (double s : pitch_semitones) {
    if (!std::isfinite(s))
      throw ValidationError("AugmentPlan: pitch semitones must be finite");
  }
  if (!(target_seconds > 0.0))
    throw ValidationError("AugmentPlan: target_seconds must be > 0, got " +
                          format_factor(target_seconds));
  if (!include_original && stretch_factors.empty() && pitch_semitones.empty())
    throw ValidationError("AugmentPlan: plan produces no clips");
}

std::string AugmentPlan::to_json() const {
  nlohmann::json j;
  j["stretch_factors"] = stretch_factors;
  j["pitch_semitones"] = pitch_semitones;
  j["target_seconds"] = target_seconds;
  j["include_original"] = include_original;
  return j.dump(2);
}

AugmentPlan AugmentPlan::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("AugmentPlan: bad JSON: ") + e.what());
  }
  AugmentPlan plan;
  if (j.contains("stretch_factors"))
    plan.stretch_factors = j["stretch_factors"].get<std::vector<double>>();
  if (j.contains("pitch_semitones"))
    plan.pitch_semitones = j["pitch_semitones"].get<std::vector<double>>();
  if (j.contains("target_seconds"))
    plan.target_seconds = j["target_seconds"].get<double>();
  if (j.contains("include_original"))
    plan.include_original = j["include_original"].get<bool>();
  plan.validate();
  return plan;
}

AugmentPlan AugmentPlan::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("AugmentPlan: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

AudioClip time_stretch(const AudioClip& clip, double factor) {
  if (!(factor > 0.0))
    throw ValidationError("time_stretch: factor must be > 0, got " +
                          format_factor(factor));
  clip.validate();

  const size_t n = kStftSize;
  const size_t hop_syn = kSynthesisHop;
  const size_t hop_ana = std::max<size_t>(
      1, static_cast<size_t>(std::lround(hop_syn * factor)));

  // Signals shorter than one STFT frame are padded so at least one frame
  // exists; the duration contract only binds for clips >> frame size.
  std::vector<float> x = clip.samples;
  if (x.size() < n) x.resize(n, 0.0f);

  const size_t num_frames = 1 + (x.size() - n) / hop_ana;
  const auto window = hann_window(n);
  const size_t bins = n / 2 + 1;

  std::vector<double> prev_phase(bins, 0.0);
  std::vector<double> synth_phase(bins, 0.0);
  const size_t out_len = (num_frames - 1) * hop_syn + n;
  std::vector<double> out(out_len, 0.0);
  std::vector<double> norm(out_len, 0.0);

  std::vector<std::complex<double>> spec(n);
  for (size_t m = 0; m < num_frames; ++m) {
    const size_t start = m * hop_ana;
    for (size_t i = 0; i < n; ++i)
      spec[i] = {static_cast<double>(x[start + i]) * window[i], 0.0};
    fft(spec, false);

    // Per-bin instantaneous frequency from the analysis phase increment,
    // re-advanced at the synthesis hop.
    for (size_t k = 0; k < bins; ++k) {
      const double mag = std::abs(spec[k]);
      const double phase = std::arg(spec[k]);
      const double omega = 2.0 * kPi * k / static_cast<double>(n);
      if (m == 0) {
        synth_phase[k] = phase;
      } else {
        const double expected = omega * static_cast<double>(hop_ana);
        const double deviation =
            wrap_phase(phase - prev_phase[k] - expected);
        const double inst_freq =
            omega + deviation / static_cast<double>(hop_ana);
        synth_phase[k] =
            synth_phase[k] + inst_freq * static_cast<double>(hop_syn);
      }
      prev_phase[k] = phase;
      spec[k] = std::polar(mag, synth_phase[k]);
    }
    // Hermitian symmetry for the real inverse transform.
    for (size_t k = bins; k < n; ++k) spec[k] = std::conj(spec[n - k]);
    fft(spec, true);

    const size_t out_start = m * hop_syn;
    for (size_t i = 0; i < n; ++i) {
      out[out_start + i] += spec[i].real() * window[i];
      norm[out_start + i] += window[i] * window[i];
    }
  }

  AudioClip result;
  result.sample_rate = clip.sample_rate;
  result.source_id = transform_tag(clip.source_id,
                                   "stretch" + format_factor(factor));
  result.samples.resize(out_len);
  for (size_t i = 0; i < out_len; ++i) {
    const double w = norm[i] > 1e-6 ? norm[i] : 1.0;
    result.samples[i] = static_cast<float>(out[i] / w);
  }
  return result;
}

AudioClip pitch_shift(const AudioClip& clip, double semitones) {
  if (!std::isfinite(semitones))
    throw ValidationError("pitch_shift: semitones must be finite");
  clip.validate();

  const double ratio = std::pow(2.0, semitones / 12.0);
  const int inner_rate = std::max(
      1, static_cast<int>(std::lround(clip.sample_rate / ratio)));
  // Use the ratio actually realized by the integer rate so the stretch
  // restores the duration exactly.
  const double achieved =
      static_cast<double>(clip.sample_rate) / static_cast<double>(inner_rate);

  AudioClip shifted = resample(clip, inner_rate);
  shifted.sample_rate = clip.sample_rate;  // reinterpret: frequencies * ratio
  AudioClip result = time_stretch(shifted, 1.0 / achieved);
  result.sample_rate = clip.sample_rate;
  result.source_id = transform_tag(clip.source_id,
                                   "pitch" + format_factor(semitones));
  return result;
}

AudioClip fix_length(const AudioClip& clip, double target_seconds) {
  if (!(target_seconds > 0.0))
    throw ValidationError("fix_length: target_seconds must be > 0");
  clip.validate();
  const size_t target = static_cast<size_t>(
      std::llround(target_seconds * clip.sample_rate));
  AudioClip out = clip;
  out.samples.resize(target, 0.0f);
  return out;
}

std::vector<AudioClip> augment_set(const AudioClip& clip,
                                   const AugmentPlan& plan) {
  plan.validate();
  clip.validate();
  std::vector<AudioClip> out;
  out.reserve((plan.include_original ? 1 : 0) + plan.stretch_factors.size() +
              plan.pitch_semitones.size());
  if (plan.include_original) {
    AudioClip original = clip;
    original.source_id = transform_tag(clip.source_id, "orig");
    out.push_back(fix_length(original, plan.target_seconds));
  }
  for (double f : plan.stretch_factors)
    out.push_back(fix_length(time_stretch(clip, f), plan.target_seconds));
  for (double s : plan.pitch_semitones)
    out.push_back(fix_length(pitch_shift(clip, s), plan.target_seconds));
  return out;
}

}  // namespace emoformer
