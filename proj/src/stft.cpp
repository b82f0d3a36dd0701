#include "ecgssl/stft.hpp"

#include <algorithm>
#include <cmath>

namespace ecgssl {

namespace {
bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }
}  // namespace

void StftConfig::validate() const {
  if (!is_pow2(window_len))
    throw ValueError("stft: window_len must be a power of two, got " +
                     std::to_string(window_len));
  if (hop < 1 || hop > window_len)
    throw ValueError("stft: hop must satisfy 0 < hop <= window_len");
  if (!(log_epsilon > 0.0))
    throw ValueError("stft: log_epsilon must be positive");
  if (window_kind == WindowKind::kGaussian && !(gaussian_sigma > 0.0))
    throw ValueError("stft: gaussian window sigma must be positive");
}

std::vector<real> window_coefficients(const StftConfig& cfg) {
  cfg.validate();
  const int64_t n = cfg.window_len;
  std::vector<real> w(static_cast<size_t>(n), 1.0);
  switch (cfg.window_kind) {
    case WindowKind::kRectangular:
      break;
    case WindowKind::kHann:
      for (int64_t k = 0; k < n; ++k)
        w[static_cast<size_t>(k)] =
            0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<real>(k) /
                                 static_cast<real>(n));
      break;
    case WindowKind::kGaussian: {
      const real center = static_cast<real>(n - 1) / 2.0;
      const real denom = cfg.gaussian_sigma * center;
      for (int64_t k = 0; k < n; ++k) {
        const real z = (static_cast<real>(k) - center) / denom;
        w[static_cast<size_t>(k)] = std::exp(-0.5 * z * z);
      }
      break;
    }
  }
  const real mx = *std::max_element(w.begin(), w.end());
  for (real& v : w) v /= mx;
  return w;
}

void fft_radix2(std::vector<std::complex<real>>& a, bool inverse) {
  const size_t n = a.size();
  if (!is_pow2(static_cast<int64_t>(n)))
    throw ValueError("fft: size must be a power of two, got " + std::to_string(n));
  // Bit-reversal permutation.
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const real ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<real>(len);
    const std::complex<real> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<real> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const std::complex<real> u = a[i + j];
        const std::complex<real> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const real inv_n = 1.0 / static_cast<real>(n);
    for (auto& v : a) v *= inv_n;
  }
}

ComplexMatrix stft(const std::vector<real>& x, const StftConfig& cfg) {
  cfg.validate();
  const int64_t n = static_cast<int64_t>(x.size());
  const int64_t win = cfg.window_len;
  if (n < win) {
    throw ValueError("stft: input length " + std::to_string(n) +
                     " shorter than window " + std::to_string(win));
  }
  const int64_t frames = (n - win) / cfg.hop + 1;
  const int64_t bins = win / 2 + 1;
  const std::vector<real> w = window_coefficients(cfg);

  ComplexMatrix out;
  out.rows = bins;
  out.cols = frames;
  out.values.assign(static_cast<size_t>(bins * frames), {0.0, 0.0});

  std::vector<std::complex<real>> buf(static_cast<size_t>(win));
  for (int64_t f = 0; f < frames; ++f) {
    const int64_t start = f * cfg.hop;
    for (int64_t k = 0; k < win; ++k)
      buf[static_cast<size_t>(k)] = {
          x[static_cast<size_t>(start + k)] * w[static_cast<size_t>(k)], 0.0};
    fft_radix2(buf);
    for (int64_t b = 0; b < bins; ++b) out.at(b, f) = buf[static_cast<size_t>(b)];
  }
  return out;
}

Spectrogram spectrogram(const Tensor& record_leads, const StftConfig& cfg,
                        real sample_rate_hz) {
  if (record_leads.rank() != 2) {
    throw ShapeError("spectrogram: expected [leads, samples], got " +
                     shape_str(record_leads.shape()));
  }
  const int64_t leads = record_leads.dim(0);
  const int64_t n = record_leads.dim(1);
  const int64_t bins = cfg.window_len / 2 + 1;

  Spectrogram out;
  std::vector<real> lead_buf(static_cast<size_t>(n));
  Tensor values;
  int64_t frames = 0;
  for (int64_t l = 0; l < leads; ++l) {
    std::copy(record_leads.data().begin() + l * n,
              record_leads.data().begin() + (l + 1) * n, lead_buf.begin());
    ComplexMatrix s = stft(lead_buf, cfg);
    if (l == 0) {
      frames = s.cols;
      values = Tensor::zeros({leads, bins, frames});
    }
    real* dst = values.mutable_data().data() + l * bins * frames;
    for (int64_t i = 0; i < bins * frames; ++i) {
      const real m2 = std::norm(s.values[static_cast<size_t>(i)]);
      dst[i] = std::log(m2 + cfg.log_epsilon);
    }
  }
  out.values = values;
  out.frame_times.resize(static_cast<size_t>(frames));
  for (int64_t f = 0; f < frames; ++f)
    out.frame_times[static_cast<size_t>(f)] =
        (static_cast<real>(f * cfg.hop) + static_cast<real>(cfg.window_len) / 2.0) /
        sample_rate_hz;
  out.bin_freqs.resize(static_cast<size_t>(bins));
  for (int64_t b = 0; b < bins; ++b)
    out.bin_freqs[static_cast<size_t>(b)] =
        static_cast<real>(b) * sample_rate_hz / static_cast<real>(cfg.window_len);
  return out;
}

}  // namespace ecgssl
