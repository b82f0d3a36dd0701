#include "ecgssl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ecgssl {

void AugmentSpec::validate() const {
  if (sigma < 0.0) throw ValueError("augment: sigma must be >= 0");
  if (!(cutout_alpha_max > 0.0 && cutout_alpha_max <= 1.0))
    throw ValueError("augment: cutout_alpha_max must be in (0, 1]");
  if (!(global_crop_lo > 0.5 && global_crop_hi <= 1.0 &&
        global_crop_lo < global_crop_hi))
    throw ValueError("augment: global crop range must lie in (0.5, 1.0]");
  if (!(local_crop_lo > 0.0 && local_crop_hi <= 0.5 &&
        local_crop_lo < local_crop_hi))
    throw ValueError("augment: local crop range must lie in (0, 0.5]");
  if (n_local_views < 0) throw ValueError("augment: n_local_views must be >= 0");
  if (output_len < 2) throw ValueError("augment: output_len must be >= 2");
}

namespace {

int64_t time_axis_len(const Tensor& x) { return x.dim(x.rank() - 1); }

void check_time_rank(const Tensor& x, const char* op) {
  if (x.rank() < 1 || x.rank() > 3) {
    throw ShapeError(std::string(op) + ": expected rank 1..3 input, got " +
                     shape_str(x.shape()));
  }
}

}  // namespace

Tensor time_cutout_span(const Tensor& x, int64_t t1, int64_t t2) {
  check_time_rank(x, "time_cutout");
  const int64_t n = time_axis_len(x);
  if (t1 < 0 || t2 < t1 || t2 >= n) {
    throw ValueError("time_cutout: span [" + std::to_string(t1) + ", " +
                     std::to_string(t2) + "] out of range for length " +
                     std::to_string(n));
  }
  Tensor out = Tensor::from_data(x.shape(), x.data());
  const int64_t rows = x.numel() / n;
  for (int64_t r = 0; r < rows; ++r)
    std::fill(out.mutable_data().begin() + r * n + t1,
              out.mutable_data().begin() + r * n + t2 + 1, 0.0);
  return out;
}

void draw_cutout_span(int64_t n, real alpha_max, Rng& rng, int64_t& t1,
                      int64_t& t2) {
  if (n < 2) throw ValueError("cutout: sequence length must be >= 2");
  const real alpha = rng.uniform(0.0, alpha_max) * static_cast<real>(n);
  int64_t width = static_cast<int64_t>(std::floor(alpha));
  width = std::min(width, n - 1);
  t1 = rng.uniform_int(0, n - 1 - width);
  t2 = t1 + width;
}

Tensor time_cutout(const Tensor& x, real alpha_max, Rng& rng) {
  int64_t t1, t2;
  draw_cutout_span(time_axis_len(x), alpha_max, rng, t1, t2);
  return time_cutout_span(x, t1, t2);
}

Tensor gaussian_noise(const Tensor& x, real sigma, Rng& rng) {
  if (sigma < 0.0) throw ValueError("gaussian_noise: sigma must be >= 0");
  if (sigma == 0.0) return Tensor::from_data(x.shape(), x.data());
  Tensor out = Tensor::from_data(x.shape(), x.data());
  for (real& v : out.mutable_data()) v += rng.normal(0.0, sigma);
  return out;
}

Tensor transform_t1(const Tensor& x, const AugmentSpec& spec, Rng& rng) {
  Tensor out = x;
  if (spec.enable_time_cutout)
    out = time_cutout(out, spec.cutout_alpha_max, rng);
  if (spec.enable_noise) out = gaussian_noise(out, spec.sigma, rng);
  return out;
}

Tensor freq_time_cutout_bands(const Tensor& m, int64_t t1, int64_t t2,
                              int64_t f1, int64_t f2) {
  if (m.rank() != 2 && m.rank() != 3) {
    throw ShapeError("freq_time_cutout: expected [F,T] or [C,F,T], got " +
                     shape_str(m.shape()));
  }
  const int64_t T = m.dim(m.rank() - 1);
  const int64_t F = m.dim(m.rank() - 2);
  const int64_t C = m.rank() == 3 ? m.dim(0) : 1;
  // A band with t2 < t1 is empty (that axis untouched).
  const bool has_t = t2 >= t1, has_f = f2 >= f1;
  if (has_t && (t1 < 0 || t2 >= T))
    throw ValueError("freq_time_cutout: time band out of range");
  if (has_f && (f1 < 0 || f2 >= F))
    throw ValueError("freq_time_cutout: frequency band out of range");
  Tensor out = Tensor::from_data(m.shape(), m.data());
  real* p = out.mutable_data().data();
  for (int64_t c = 0; c < C; ++c) {
    real* plane = p + c * F * T;
    for (int64_t f = 0; f < F; ++f) {
      real* row = plane + f * T;
      if (has_f && f >= f1 && f <= f2) {
        std::fill(row, row + T, 0.0);
      } else if (has_t) {
        std::fill(row + t1, row + t2 + 1, 0.0);
      }
    }
  }
  return out;
}

Tensor freq_time_cutout(const Tensor& m, const AugmentSpec& spec, Rng& rng) {
  const int64_t T = m.dim(m.rank() - 1);
  const int64_t F = m.dim(m.rank() - 2);
  if (T < 2 || F < 2)
    throw ValueError("freq_time_cutout: both axes must have length >= 2");
  int64_t t1, t2, f1, f2;
  draw_cutout_span(T, spec.cutout_alpha_max, rng, t1, t2);
  draw_cutout_span(F, spec.cutout_alpha_max, rng, f1, f2);
  return freq_time_cutout_bands(m, t1, t2, f1, f2);
}

Tensor transform_t2(const Tensor& m, const AugmentSpec& spec, Rng& rng) {
  if (!spec.enable_freq_cutout && !spec.enable_time_cutout)
    return Tensor::from_data(m.shape(), m.data());
  const int64_t T = m.dim(m.rank() - 1);
  const int64_t F = m.dim(m.rank() - 2);
  int64_t t1 = 0, t2 = -1, f1 = 0, f2 = -1;
  if (spec.enable_time_cutout)
    draw_cutout_span(T, spec.cutout_alpha_max, rng, t1, t2);
  if (spec.enable_freq_cutout)
    draw_cutout_span(F, spec.cutout_alpha_max, rng, f1, f2);
  return freq_time_cutout_bands(m, t1, t2, f1, f2);
}

View crop_view(const Tensor& x, Modality modality, ViewKind kind,
               const AugmentSpec& spec, Rng& rng) {
  spec.validate();
  const int64_t n = time_axis_len(x);
  if (n < 4) throw ValueError("crop_view: input time length must be >= 4");
  const real lo = kind == ViewKind::kGlobal ? spec.global_crop_lo : spec.local_crop_lo;
  const real hi = kind == ViewKind::kGlobal ? spec.global_crop_hi : spec.local_crop_hi;
  // Draw from (lo, hi]: hi is attainable, lo is not.
  const real r = hi - (hi - lo) * rng.uniform();
  int64_t len = static_cast<int64_t>(std::llround(r * static_cast<real>(n)));
  len = std::clamp<int64_t>(len, 2, n);
  const int64_t start = rng.uniform_int(0, n - len);
  View v;
  v.kind = kind;
  v.modality = modality;
  v.crop_fraction = r;
  v.payload = crop_resample(x, start, len, spec.output_len);
  return v;
}

Tensor crop_resample(const Tensor& x, int64_t start, int64_t len,
                     int64_t out_len) {
  check_time_rank(x, "crop_resample");
  const int64_t n = time_axis_len(x);
  if (start < 0 || len < 2 || start + len > n)
    throw ValueError("crop_resample: crop [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of range");
  if (out_len < 2) throw ValueError("crop_resample: out_len must be >= 2");
  Shape out_shape = x.shape();
  out_shape.back() = out_len;
  Tensor out = Tensor::zeros(out_shape);
  const int64_t rows = x.numel() / n;
  const real step = static_cast<real>(len - 1) / static_cast<real>(out_len - 1);
  const real* px = x.data().data();
  real* po = out.mutable_data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const real* src = px + r * n + start;
    real* dst = po + r * out_len;
    for (int64_t j = 0; j < out_len; ++j) {
      const real pos = static_cast<real>(j) * step;
      const int64_t i0 = std::min<int64_t>(static_cast<int64_t>(pos), len - 2);
      const real frac = pos - static_cast<real>(i0);
      dst[j] = src[i0] * (1.0 - frac) + src[i0 + 1] * frac;
    }
  }
  return out;
}

ViewBatch make_view_batch(const std::vector<Tensor>& records, Modality modality,
                          const AugmentSpec& spec, uint64_t seed) {
  spec.validate();
  if (records.empty()) throw ValueError("make_view_batch: empty batch");
  const int n_views = 2 + spec.n_local_views;
  const int64_t B = static_cast<int64_t>(records.size());

  ViewBatch vb;
  vb.modality = modality;
  vb.batch = B;

  std::vector<std::vector<Tensor>> payloads(
      static_cast<size_t>(n_views));  // [view][record]
  for (auto& p : payloads) p.resize(static_cast<size_t>(B));

  for (int64_t rec = 0; rec < B; ++rec) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(rec)));
    for (int v = 0; v < n_views; ++v) {
      const ViewKind kind = v < 2 ? ViewKind::kGlobal : ViewKind::kLocal;
      View view = crop_view(records[static_cast<size_t>(rec)], modality, kind,
                            spec, rng);
      Tensor payload = modality == Modality::kTime
                           ? transform_t1(view.payload, spec, rng)
                           : transform_t2(view.payload, spec, rng);
      payloads[static_cast<size_t>(v)][static_cast<size_t>(rec)] = payload;
    }
  }

  for (int v = 0; v < n_views; ++v) {
    const Tensor& first = payloads[static_cast<size_t>(v)][0];
    Shape stacked_shape = first.shape();
    stacked_shape.insert(stacked_shape.begin(), B);
    Tensor stacked = Tensor::zeros(stacked_shape);
    const int64_t per = first.numel();
    for (int64_t rec = 0; rec < B; ++rec) {
      const Tensor& p = payloads[static_cast<size_t>(v)][static_cast<size_t>(rec)];
      if (p.shape() != first.shape())
        throw ShapeError("make_view_batch: inconsistent view shapes in batch");
      std::copy(p.data().begin(), p.data().end(),
                stacked.mutable_data().begin() + rec * per);
    }
    vb.views.push_back({v < 2 ? ViewKind::kGlobal : ViewKind::kLocal, stacked});
  }
  return vb;
}

std::string view_batch_bytes(const ViewBatch& vb) {
  std::string out;
  for (const auto& slot : vb.views) {
    out.push_back(slot.kind == ViewKind::kGlobal ? 'G' : 'L');
    for (int64_t d : slot.stacked.shape()) {
      out.append(reinterpret_cast<const char*>(&d), sizeof(d));
    }
    const auto& data = slot.stacked.data();
    out.append(reinterpret_cast<const char*>(data.data()),
               data.size() * sizeof(real));
  }
  return out;
}

}  // namespace ecgssl
