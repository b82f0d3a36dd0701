#pragma once

#include <complex>
#include <vector>

#include "ecgssl/tensor.hpp"

namespace ecgssl {

enum class WindowKind { kHann, kGaussian, kRectangular };

struct StftConfig {
  int64_t window_len = 128;  // must be a power of two
  int64_t hop = 64;
  WindowKind window_kind = WindowKind::kHann;
  real gaussian_sigma = 0.4;  // relative to half the window width
  real log_epsilon = 1e-10;

  void validate() const;
};

// Window coefficients, nonnegative and max-normalized to 1.
std::vector<real> window_coefficients(const StftConfig& cfg);

struct ComplexMatrix {
  int64_t rows = 0;  // frequency bins
  int64_t cols = 0;  // frames
  std::vector<std::complex<real>> values;  // row-major

  std::complex<real>& at(int64_t r, int64_t c) { return values[static_cast<size_t>(r * cols + c)]; }
  const std::complex<real>& at(int64_t r, int64_t c) const {
    return values[static_cast<size_t>(r * cols + c)];
  }
};

// In-place radix-2 decimation-in-time FFT; size must be a power of two.
void fft_radix2(std::vector<std::complex<real>>& a, bool inverse = false);

// Windowed short-time Fourier transform. Frame f covers samples
// [f*hop, f*hop + window_len); the trailing partial frame is dropped, so
// frames = (n - window_len)/hop + 1. Only bins 0..window_len/2 are kept
// (real input symmetry).
ComplexMatrix stft(const std::vector<real>& x, const StftConfig& cfg);

struct Spectrogram {
  Tensor values;                  // [leads, freq_bins, frames], log(|S|^2 + eps)
  std::vector<real> frame_times;  // seconds, frame centers
  std::vector<real> bin_freqs;    // Hz

  int64_t leads() const { return values.dim(0); }
  int64_t freq_bins() const { return values.dim(1); }
  int64_t frames() const { return values.dim(2); }
};

// Log-power spectrogram of a multi-lead recording; leads are processed
// independently and stacked as channels.
Spectrogram spectrogram(const Tensor& record_leads, const StftConfig& cfg,
                        real sample_rate_hz = 500.0);

}  // namespace ecgssl
