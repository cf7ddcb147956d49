#include "emoformer/fft.hpp"

#include <cmath>

#include "emoformer/errors.hpp"

namespace emoformer {

namespace {
constexpr double kTwoPi = 6.283185307179586476925287;
}

bool is_power_of_two(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  if (!is_power_of_two(n)) {
    throw ValidationError("fft: length " + std::to_string(n) +
                          " is not a power of two");
  }
  // Bit-reversal permutation.
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = kTwoPi / static_cast<double>(len) * (inverse ? 1 : -1);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv_n;
  }
}

template <typename S>
static std::vector<std::complex<double>> rfft_impl(const S* x, size_t len,
                                                   size_t nfft) {
  std::vector<std::complex<double>> a(nfft, {0.0, 0.0});
  const size_t m = len < nfft ? len : nfft;
  for (size_t i = 0; i < m; ++i) a[i] = {static_cast<double>(x[i]), 0.0};
  fft(a, false);
  return a;
}

std::vector<std::complex<double>> rfft(const float* x, size_t len,
                                       size_t nfft) {
  return rfft_impl(x, len, nfft);
}

std::vector<std::complex<double>> rfft(const double* x, size_t len,
                                       size_t nfft) {
  return rfft_impl(x, len, nfft);
}

std::vector<double> power_spectrum_bins(const double* frame, size_t len,
                                        size_t nfft) {
  auto spec = rfft(frame, len, nfft);
  std::vector<double> power(nfft / 2 + 1);
  for (size_t k = 0; k <= nfft / 2; ++k) power[k] = std::norm(spec[k]);
  return power;
}

double dominant_frequency(const std::vector<float>& samples, int sample_rate) {
  if (samples.empty()) return 0.0;
  size_t n = 1;
  while (n * 2 <= samples.size() && n < (1u << 18)) n *= 2;
  auto spec = rfft(samples.data(), n, n);
  size_t best = 1;
  double best_mag = 0.0;
  for (size_t k = 1; k <= n / 2; ++k) {
    double mag = std::norm(spec[k]);
    if (mag > best_mag) {
      best_mag = mag;
      best = k;
    }
  }
  return static_cast<double>(best) * sample_rate / static_cast<double>(n);
}

}  // namespace emoformer
