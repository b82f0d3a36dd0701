#pragma once

#include <string>
#include <vector>

#include "ecgssl/rng.hpp"
#include "ecgssl/tensor.hpp"

namespace ecgssl {

enum class ViewKind { kGlobal, kLocal };
enum class Modality { kTime, kTimeFreq };

struct AugmentSpec {
  real sigma = 0.05;            // additive Gaussian noise std
  real cutout_alpha_max = 0.5;  // cutout width fraction upper bound
  real global_crop_lo = 0.6, global_crop_hi = 1.0;  // (0.5, 1.0]
  real local_crop_lo = 0.05, local_crop_hi = 0.5;   // (0, 0.5]
  int n_local_views = 4;
  int64_t output_len = 1000;  // network input length after crop+resample
  uint64_t rng_seed = 0;

  // Per-transformation switches for the ablation grid. With everything off,
  // views are random crops only.
  bool enable_time_cutout = true;
  bool enable_noise = true;       // time modality only
  bool enable_freq_cutout = true;  // time-frequency modality only

  void validate() const;
};

struct View {
  Tensor payload;  // [C,L] (time) or [C,F,T] (time-frequency)
  ViewKind kind = ViewKind::kGlobal;
  Modality modality = Modality::kTime;
  real crop_fraction = 1.0;
};

// One augmented batch: per view slot, records stacked along the leading dim.
struct ViewBatch {
  Modality modality = Modality::kTime;
  int64_t batch = 0;
  struct Slot {
    ViewKind kind;
    Tensor stacked;  // [B,C,L] or [B,C,F,T]
  };
  std::vector<Slot> views;

  int64_t n_global() const {
    int64_t n = 0;
    for (const auto& v : views) n += v.kind == ViewKind::kGlobal ? 1 : 0;
    return n;
  }
};

// --- deterministic cores (spans forced by the caller; used by tests) -------

// Zeroes samples t1..t2 inclusive on every lead. x is [C,n] or [n].
Tensor time_cutout_span(const Tensor& x, int64_t t1, int64_t t2);

// Zeroes frame band t1..t2 (all rows) and frequency band f1..f2 (all
// columns), inclusive, on a [F,T] matrix or [C,F,T] stack.
Tensor freq_time_cutout_bands(const Tensor& m, int64_t t1, int64_t t2,
                              int64_t f1, int64_t f2);

// Contiguous time crop [start, start+len) resampled to out_len by linear
// interpolation. Crops the last axis of [C,n] / [n] / [C,F,T].
Tensor crop_resample(const Tensor& x, int64_t start, int64_t len,
                     int64_t out_len);

// --- stochastic transformations --------------------------------------------

// Draws the cutout span: width floor(U(0, alpha_max) * n), start uniform over
// valid positions. The span is inclusive, so at least one sample is zeroed.
void draw_cutout_span(int64_t n, real alpha_max, Rng& rng, int64_t& t1,
                      int64_t& t2);

Tensor time_cutout(const Tensor& x, real alpha_max, Rng& rng);
Tensor gaussian_noise(const Tensor& x, real sigma, Rng& rng);

// Time-domain view transformation: cutout followed by additive noise over
// the whole sequence (the zeroed span therefore carries pure noise).
Tensor transform_t1(const Tensor& x, const AugmentSpec& spec, Rng& rng);

// Time-frequency view transformation: time band + frequency band cutout.
Tensor freq_time_cutout(const Tensor& m, const AugmentSpec& spec, Rng& rng);
Tensor transform_t2(const Tensor& m, const AugmentSpec& spec, Rng& rng);

// Random crop of the configured kind, resampled to spec.output_len along the
// time axis. Spectrogram inputs keep all frequency bins.
View crop_view(const Tensor& x, Modality modality, ViewKind kind,
               const AugmentSpec& spec, Rng& rng);

// Builds 2 global + n_local_views local views per record, each passed through
// the modality's transformation. Record r uses an independent RNG stream
// derived from (seed, r), so batches are reproducible and parallelizable.
ViewBatch make_view_batch(const std::vector<Tensor>& records, Modality modality,
                          const AugmentSpec& spec, uint64_t seed);

// Raw bytes of all stacked view tensors, for reproducibility checks.
std::string view_batch_bytes(const ViewBatch& vb);

}  // namespace ecgssl
