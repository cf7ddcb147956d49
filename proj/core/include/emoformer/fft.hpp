#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace emoformer {

bool is_power_of_two(size_t n);

// In-place iterative radix-2 FFT. `n` must be a power of two.
// inverse=true applies the conjugate transform and the 1/n scale.
void fft(std::vector<std::complex<double>>& a, bool inverse);

// Forward FFT of a real signal zero-padded (or truncated) to nfft.
std::vector<std::complex<double>> rfft(const float* x, size_t len, size_t nfft);
std::vector<std::complex<double>> rfft(const double* x, size_t len,
                                       size_t nfft);

// |X[k]|^2 for k = 0..nfft/2 of a real frame.
std::vector<double> power_spectrum_bins(const double* frame, size_t len,
                                        size_t nfft);

// Frequency (Hz) of the largest-magnitude FFT bin over a power-of-two
// window of the signal. Bin 0 is excluded so DC offsets do not mask tones.
double dominant_frequency(const std::vector<float>& samples, int sample_rate);

}  // namespace emoformer
