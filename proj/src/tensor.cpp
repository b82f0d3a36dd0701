#include "ecgssl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ecgssl {

namespace {

thread_local bool g_grad_enabled = true;

void check_finite(const std::vector<real>& v, const char* op) {
  for (real x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + ": non-finite value produced");
    }
  }
}

std::vector<real>& ensure_grad(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

bool track(const Tensor& a) { return g_grad_enabled && a.requires_grad(); }
bool track(const Tensor& a, const Tensor& b) {
  return g_grad_enabled && (a.requires_grad() || b.requires_grad());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  check_finite(t.impl_->data, "full");
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<real> values,
                         bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("from_data: " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  check_finite(values, "from_data");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(real value) { return from_data({}, {value}); }

real Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor has " + std::to_string(numel()) +
                     " elements");
  }
  return impl_->data[0];
}

const std::vector<real>& Tensor::grad() const {
  if (impl_->grad.empty()) throw Error("grad: no gradient accumulated");
  return impl_->grad;
}

Tensor randn(Shape shape, Rng& rng, real stddev, bool requires_grad) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (real& x : t.mutable_data()) x = rng.normal(0.0, stddev);
  return t;
}

// ---------------------------------------------------------------------------
// Grad mode / tape
// ---------------------------------------------------------------------------

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(std::shared_ptr<TensorImpl> out,
                  std::function<void()> backward_fn) {
  nodes_.push_back({std::move(out), std::move(backward_fn)});
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_str(loss.shape()));
  }
  Tape& tape = Tape::active();
  if (!loss.requires_grad() || tape.nodes_.empty()) {
    tape.clear();
    return;
  }
  ensure_grad(*loss.impl())[0] += 1.0;
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
    if (!it->out->grad.empty()) it->backward_fn();
  }
  tape.clear();
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: expected rank-2 inputs, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n}, track(a, b));
  {
    const real* pa = a.data().data();
    const real* pb = b.data().data();
    real* po = out.mutable_data().data();
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t kk = 0; kk < k; ++kk) {
        const real av = pa[i * k + kk];
        const real* brow = pb + kk * n;
        real* orow = po + i * n;
        for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  check_finite(out.data(), "matmul");
  if (out.requires_grad()) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active().record(oi, [ai, bi, oi, m, k, n]() {
      const real* g = oi->grad.data();
      if (ai->requires_grad) {
        real* da = ensure_grad(*ai).data();
        const real* pb = bi->data.data();
        // dA = dC * B^T
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) {
            const real gv = g[i * n + j];
            for (int64_t kk = 0; kk < k; ++kk)
              da[i * k + kk] += gv * pb[kk * n + j];
          }
      }
      if (bi->requires_grad) {
        real* db = ensure_grad(*bi).data();
        const real* pa = ai->data.data();
        // dB = A^T * dC
        for (int64_t i = 0; i < m; ++i)
          for (int64_t kk = 0; kk < k; ++kk) {
            const real av = pa[i * k + kk];
            const real* grow = g + i * n;
            real* brow = db + kk * n;
            for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv1d / conv2d (cross-correlation convention, no kernel flip)
// ---------------------------------------------------------------------------

namespace {

int64_t conv_out_len(int64_t len, int64_t kernel, int64_t stride, int64_t pad,
                     const char* op) {
  if (stride < 1) throw ValueError(std::string(op) + ": stride must be >= 1");
  if (pad < 0) throw ValueError(std::string(op) + ": pad must be >= 0");
  if (kernel > len + 2 * pad) {
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(kernel) +
                     " larger than padded input " + std::to_string(len + 2 * pad));
  }
  return (len + 2 * pad - kernel) / stride + 1;
}

// Valid output range [lo, hi) such that 0 <= l*stride + k - pad < len.
inline void valid_range(int64_t len, int64_t out_len, int64_t stride,
                        int64_t k, int64_t pad, int64_t& lo, int64_t& hi) {
  int64_t i0 = k - pad;  // input index at l = 0
  lo = i0 >= 0 ? 0 : (-i0 + stride - 1) / stride;
  hi = i0 < len ? std::min(out_len, (len - 1 - i0) / stride + 1) : 0;
  if (hi < lo) hi = lo;
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.rank() != 3 || w.rank() != 3) {
    throw ShapeError("conv1d: expected x[B,C,L] and w[O,C,K], got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  const int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  const int64_t O = w.dim(0), K = w.dim(2);
  if (w.dim(1) != C) {
    throw ShapeError("conv1d: channel mismatch, x has " + std::to_string(C) +
                     ", w expects " + std::to_string(w.dim(1)));
  }
  const int64_t Lp = conv_out_len(L, K, stride, pad, "conv1d");
  Tensor out = Tensor::zeros({B, O, Lp}, track(x, w));
  {
    const real* px = x.data().data();
    const real* pw = w.data().data();
    real* po = out.mutable_data().data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t o = 0; o < O; ++o) {
        real* orow = po + (b * O + o) * Lp;
        for (int64_t c = 0; c < C; ++c) {
          const real* xrow = px + (b * C + c) * L;
          const real* wrow = pw + (o * C + c) * K;
          for (int64_t k = 0; k < K; ++k) {
            const real wv = wrow[k];
            int64_t lo, hi;
            valid_range(L, Lp, stride, k, pad, lo, hi);
            const real* xs = xrow + k - pad;
            for (int64_t l = lo; l < hi; ++l) orow[l] += wv * xs[l * stride];
          }
        }
      }
  }
  check_finite(out.data(), "conv1d");
  if (out.requires_grad()) {
    auto xi = x.impl(), wi = w.impl(), oi = out.impl();
    const int64_t s = stride, p = pad;
    Tape::active().record(oi, [xi, wi, oi, B, C, L, O, K, Lp, s, p]() {
      const real* g = oi->grad.data();
      if (xi->requires_grad) {
        real* dx = ensure_grad(*xi).data();
        const real* pw = wi->data.data();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t o = 0; o < O; ++o) {
            const real* grow = g + (b * O + o) * Lp;
            for (int64_t c = 0; c < C; ++c) {
              real* dxrow = dx + (b * C + c) * L;
              const real* wrow = pw + (o * C + c) * K;
              for (int64_t k = 0; k < K; ++k) {
                const real wv = wrow[k];
                int64_t lo, hi;
                valid_range(L, Lp, s, k, p, lo, hi);
                real* xs = dxrow + k - p;
                for (int64_t l = lo; l < hi; ++l) xs[l * s] += wv * grow[l];
              }
            }
          }
      }
      if (wi->requires_grad) {
        real* dw = ensure_grad(*wi).data();
        const real* px = xi->data.data();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t o = 0; o < O; ++o) {
            const real* grow = g + (b * O + o) * Lp;
            for (int64_t c = 0; c < C; ++c) {
              const real* xrow = px + (b * C + c) * L;
              real* wrow = dw + (o * C + c) * K;
              for (int64_t k = 0; k < K; ++k) {
                int64_t lo, hi;
                valid_range(L, Lp, s, k, p, lo, hi);
                const real* xs = xrow + k - p;
                real acc = 0.0;
                for (int64_t l = lo; l < hi; ++l) acc += xs[l * s] * grow[l];
                wrow[k] += acc;
              }
            }
          }
      }
    });
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d: expected x[B,C,H,W] and w[O,C,Kh,Kw], got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = w.dim(0), Kh = w.dim(2), Kw = w.dim(3);
  if (w.dim(1) != C) {
    throw ShapeError("conv2d: channel mismatch, x has " + std::to_string(C) +
                     ", w expects " + std::to_string(w.dim(1)));
  }
  const int64_t Hp = conv_out_len(H, Kh, stride, pad, "conv2d");
  const int64_t Wp = conv_out_len(W, Kw, stride, pad, "conv2d");
  Tensor out = Tensor::zeros({B, O, Hp, Wp}, track(x, w));
  {
    const real* px = x.data().data();
    const real* pw = w.data().data();
    real* po = out.mutable_data().data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t o = 0; o < O; ++o) {
        real* oplane = po + (b * O + o) * Hp * Wp;
        for (int64_t c = 0; c < C; ++c) {
          const real* xplane = px + (b * C + c) * H * W;
          const real* wplane = pw + (o * C + c) * Kh * Kw;
          for (int64_t kh = 0; kh < Kh; ++kh) {
            int64_t hlo, hhi;
            valid_range(H, Hp, stride, kh, pad, hlo, hhi);
            for (int64_t kw = 0; kw < Kw; ++kw) {
              const real wv = wplane[kh * Kw + kw];
              int64_t wlo, whi;
              valid_range(W, Wp, stride, kw, pad, wlo, whi);
              for (int64_t hh = hlo; hh < hhi; ++hh) {
                const real* xrow = xplane + (hh * stride + kh - pad) * W + kw - pad;
                real* orow = oplane + hh * Wp;
                for (int64_t ww = wlo; ww < whi; ++ww)
                  orow[ww] += wv * xrow[ww * stride];
              }
            }
          }
        }
      }
  }
  check_finite(out.data(), "conv2d");
  if (out.requires_grad()) {
    auto xi = x.impl(), wi = w.impl(), oi = out.impl();
    const int64_t s = stride, p = pad;
    Tape::active().record(oi, [xi, wi, oi, B, C, H, W, O, Kh, Kw, Hp, Wp, s, p]() {
      const real* g = oi->grad.data();
      if (xi->requires_grad) {
        real* dx = ensure_grad(*xi).data();
        const real* pw = wi->data.data();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t o = 0; o < O; ++o) {
            const real* gplane = g + (b * O + o) * Hp * Wp;
            for (int64_t c = 0; c < C; ++c) {
              real* dxplane = dx + (b * C + c) * H * W;
              const real* wplane = pw + (o * C + c) * Kh * Kw;
              for (int64_t kh = 0; kh < Kh; ++kh) {
                int64_t hlo, hhi;
                valid_range(H, Hp, s, kh, p, hlo, hhi);
                for (int64_t kw = 0; kw < Kw; ++kw) {
                  const real wv = wplane[kh * Kw + kw];
                  int64_t wlo, whi;
                  valid_range(W, Wp, s, kw, p, wlo, whi);
                  for (int64_t hh = hlo; hh < hhi; ++hh) {
                    real* dxrow = dxplane + (hh * s + kh - p) * W + kw - p;
                    const real* grow = gplane + hh * Wp;
                    for (int64_t ww = wlo; ww < whi; ++ww)
                      dxrow[ww * s] += wv * grow[ww];
                  }
                }
              }
            }
          }
      }
      if (wi->requires_grad) {
        real* dw = ensure_grad(*wi).data();
        const real* px = xi->data.data();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t o = 0; o < O; ++o) {
            const real* gplane = g + (b * O + o) * Hp * Wp;
            for (int64_t c = 0; c < C; ++c) {
              const real* xplane = px + (b * C + c) * H * W;
              real* wplane = dw + (o * C + c) * Kh * Kw;
              for (int64_t kh = 0; kh < Kh; ++kh) {
                int64_t hlo, hhi;
                valid_range(H, Hp, s, kh, p, hlo, hhi);
                for (int64_t kw = 0; kw < Kw; ++kw) {
                  int64_t wlo, whi;
                  valid_range(W, Wp, s, kw, p, wlo, whi);
                  real acc = 0.0;
                  for (int64_t hh = hlo; hh < hhi; ++hh) {
                    const real* xrow = xplane + (hh * s + kh - p) * W + kw - p;
                    const real* grow = gplane + hh * Wp;
                    for (int64_t ww = wlo; ww < whi; ++ww)
                      acc += xrow[ww * s] * grow[ww];
                  }
                  wplane[kh * Kw + kw] += acc;
                }
              }
            }
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax / log-softmax with temperature
// ---------------------------------------------------------------------------

namespace {

void require_rows(const Tensor& z, const char* op) {
  if (z.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected [B,K], got " +
                     shape_str(z.shape()));
  }
}

void check_temperature(real t, const char* op) {
  if (!(t > 0.0)) {
    throw ValueError(std::string(op) + ": temperature must be positive");
  }
}

}  // namespace

Tensor softmax_t(const Tensor& z, real temperature) {
  require_rows(z, "softmax_t");
  check_temperature(temperature, "softmax_t");
  const int64_t B = z.dim(0), K = z.dim(1);
  Tensor out = Tensor::zeros({B, K}, track(z));
  {
    const real* pz = z.data().data();
    real* po = out.mutable_data().data();
    for (int64_t b = 0; b < B; ++b) {
      const real* row = pz + b * K;
      real* orow = po + b * K;
      real mx = row[0];
      for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
      real denom = 0.0;
      for (int64_t k = 0; k < K; ++k) {
        orow[k] = std::exp((row[k] - mx) / temperature);
        denom += orow[k];
      }
      for (int64_t k = 0; k < K; ++k) orow[k] /= denom;
    }
  }
  check_finite(out.data(), "softmax_t");
  if (out.requires_grad()) {
    auto zi = z.impl(), oi = out.impl();
    const real tau = temperature;
    Tape::active().record(oi, [zi, oi, B, K, tau]() {
      const real* g = oi->grad.data();
      const real* p = oi->data.data();
      real* dz = ensure_grad(*zi).data();
      for (int64_t b = 0; b < B; ++b) {
        const real* grow = g + b * K;
        const real* prow = p + b * K;
        real dot = 0.0;
        for (int64_t k = 0; k < K; ++k) dot += grow[k] * prow[k];
        real* drow = dz + b * K;
        for (int64_t k = 0; k < K; ++k)
          drow[k] += prow[k] * (grow[k] - dot) / tau;
      }
    });
  }
  return out;
}

Tensor log_softmax_t(const Tensor& z, real temperature) {
  require_rows(z, "log_softmax_t");
  check_temperature(temperature, "log_softmax_t");
  const int64_t B = z.dim(0), K = z.dim(1);
  Tensor out = Tensor::zeros({B, K}, track(z));
  {
    const real* pz = z.data().data();
    real* po = out.mutable_data().data();
    for (int64_t b = 0; b < B; ++b) {
      const real* row = pz + b * K;
      real* orow = po + b * K;
      real mx = row[0];
      for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
      real denom = 0.0;
      for (int64_t k = 0; k < K; ++k) {
        orow[k] = (row[k] - mx) / temperature;
        denom += std::exp(orow[k]);
      }
      const real lse = std::log(denom);
      for (int64_t k = 0; k < K; ++k) orow[k] -= lse;
    }
  }
  check_finite(out.data(), "log_softmax_t");
  if (out.requires_grad()) {
    auto zi = z.impl(), oi = out.impl();
    const real tau = temperature;
    Tape::active().record(oi, [zi, oi, B, K, tau]() {
      const real* g = oi->grad.data();
      const real* lp = oi->data.data();
      real* dz = ensure_grad(*zi).data();
      for (int64_t b = 0; b < B; ++b) {
        const real* grow = g + b * K;
        const real* lrow = lp + b * K;
        real gsum = 0.0;
        for (int64_t k = 0; k < K; ++k) gsum += grow[k];
        real* drow = dz + b * K;
        for (int64_t k = 0; k < K; ++k)
          drow[k] += (grow[k] - std::exp(lrow[k]) * gsum) / tau;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise suite
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape(), track(a, b));
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i)
    out.mutable_data()[i] = a.data()[i] + b.data()[i];
  check_finite(out.data(), "add");
  if (out.requires_grad()) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active().record(oi, [ai, bi, oi, n]() {
      const real* g = oi->grad.data();
      if (ai->requires_grad) {
        real* da = ensure_grad(*ai).data();
        for (int64_t i = 0; i < n; ++i) da[i] += g[i];
      }
      if (bi->requires_grad) {
        real* db = ensure_grad(*bi).data();
        for (int64_t i = 0; i < n; ++i) db[i] += g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape(), track(a, b));
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i)
    out.mutable_data()[i] = a.data()[i] * b.data()[i];
  check_finite(out.data(), "mul");
  if (out.requires_grad()) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active().record(oi, [ai, bi, oi, n]() {
      const real* g = oi->grad.data();
      if (ai->requires_grad) {
        real* da = ensure_grad(*ai).data();
        const real* pb = bi->data.data();
        for (int64_t i = 0; i < n; ++i) da[i] += g[i] * pb[i];
      }
      if (bi->requires_grad) {
        real* db = ensure_grad(*bi).data();
        const real* pa = ai->data.data();
        for (int64_t i = 0; i < n; ++i) db[i] += g[i] * pa[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, real c) {
  Tensor out = Tensor::zeros(x.shape(), track(x));
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.mutable_data()[i] = x.data()[i] * c;
  check_finite(out.data(), "scale");
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active().record(oi, [xi, oi, c, n]() {
      real* dx = ensure_grad(*xi).data();
      const real* g = oi->grad.data();
      for (int64_t i = 0; i < n; ++i) dx[i] += g[i] * c;
    });
  }
  return out;
}

namespace {

// Shared scaffolding for unary elementwise ops whose backward depends only
// on input and output values.
template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Bwd bwd) {
  Tensor out = Tensor::zeros(x.shape(), track(x));
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.mutable_data()[i] = fwd(x.data()[i]);
  check_finite(out.data(), name);
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active().record(oi, [xi, oi, n, bwd]() {
      real* dx = ensure_grad(*xi).data();
      const real* g = oi->grad.data();
      const real* px = xi->data.data();
      const real* py = oi->data.data();
      for (int64_t i = 0; i < n; ++i) dx[i] += g[i] * bwd(px[i], py[i]);
    });
  }
  return out;
}

}  // namespace

Tensor relu(const Tensor& x) {
  return unary_op(
      x, "relu", [](real v) { return v > 0.0 ? v : 0.0; },
      [](real v, real) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, "sigmoid",
      [](real v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const real e = std::exp(v);
        return e / (1.0 + e);
      },
      [](real, real y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      x, "tanh", [](real v) { return std::tanh(v); },
      [](real, real y) { return 1.0 - y * y; });
}

Tensor log(const Tensor& x) {
  for (real v : x.data()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input");
  }
  return unary_op(
      x, "log", [](real v) { return std::log(v); },
      [](real v, real) { return 1.0 / v; });
}

namespace {

Tensor reduce_all(const Tensor& x, bool take_mean, const char* name) {
  const int64_t n = x.numel();
  real acc = 0.0;
  for (real v : x.data()) acc += v;
  if (take_mean && n > 0) acc /= static_cast<real>(n);
  Tensor out = Tensor::zeros({}, track(x));
  out.mutable_data()[0] = acc;
  check_finite(out.data(), name);
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    const real w = take_mean && n > 0 ? 1.0 / static_cast<real>(n) : 1.0;
    Tape::active().record(oi, [xi, oi, n, w]() {
      real* dx = ensure_grad(*xi).data();
      const real g = oi->grad[0] * w;
      for (int64_t i = 0; i < n; ++i) dx[i] += g;
    });
  }
  return out;
}

}  // namespace

Tensor mean(const Tensor& x) { return reduce_all(x, true, "mean"); }
Tensor sum(const Tensor& x) { return reduce_all(x, false, "sum"); }

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw ShapeError("global_avg_pool: expected [B,C,L] or [B,C,H,W], got " +
                     shape_str(x.shape()));
  }
  const int64_t B = x.dim(0), C = x.dim(1);
  const int64_t spatial = x.numel() / (B * C);
  Tensor out = Tensor::zeros({B, C}, track(x));
  {
    const real* px = x.data().data();
    real* po = out.mutable_data().data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
      real acc = 0.0;
      const real* row = px + bc * spatial;
      for (int64_t i = 0; i < spatial; ++i) acc += row[i];
      po[bc] = acc / static_cast<real>(spatial);
    }
  }
  check_finite(out.data(), "global_avg_pool");
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active().record(oi, [xi, oi, B, C, spatial]() {
      real* dx = ensure_grad(*xi).data();
      const real* g = oi->grad.data();
      const real inv = 1.0 / static_cast<real>(spatial);
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const real gv = g[bc] * inv;
        real* row = dx + bc * spatial;
        for (int64_t i = 0; i < spatial; ++i) row[i] += gv;
      }
    });
  }
  return out;
}

Tensor max_pool1d(const Tensor& x, int kernel, int stride, int pad) {
  if (x.rank() != 3) {
    throw ShapeError("max_pool1d: expected [B,C,L], got " + shape_str(x.shape()));
  }
  const int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  const int64_t Lp = conv_out_len(L, kernel, stride, pad, "max_pool1d");
  Tensor out = Tensor::zeros({B, C, Lp}, track(x));
  auto argmax = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(B * C * Lp));
  {
    const real* px = x.data().data();
    real* po = out.mutable_data().data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const real* row = px + bc * L;
      for (int64_t l = 0; l < Lp; ++l) {
        real best = -std::numeric_limits<real>::infinity();
        int64_t best_i = -1;
        for (int64_t k = 0; k < kernel; ++k) {
          const int64_t i = l * stride + k - pad;
          if (i < 0 || i >= L) continue;
          if (row[i] > best) {
            best = row[i];
            best_i = i;
          }
        }
        po[bc * Lp + l] = best;
        (*argmax)[static_cast<size_t>(bc * Lp + l)] = best_i;
      }
    }
  }
  check_finite(out.data(), "max_pool1d");
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active().record(oi, [xi, oi, argmax, B, C, L, Lp]() {
      real* dx = ensure_grad(*xi).data();
      const real* g = oi->grad.data();
      for (int64_t bc = 0; bc < B * C; ++bc)
        for (int64_t l = 0; l < Lp; ++l) {
          const int64_t i = (*argmax)[static_cast<size_t>(bc * Lp + l)];
          if (i >= 0) dx[bc * L + i] += g[bc * Lp + l];
        }
    });
  }
  return out;
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride, int pad) {
  if (x.rank() != 4) {
    throw ShapeError("max_pool2d: expected [B,C,H,W], got " + shape_str(x.shape()));
  }
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Hp = conv_out_len(H, kernel, stride, pad, "max_pool2d");
  const int64_t Wp = conv_out_len(W, kernel, stride, pad, "max_pool2d");
  Tensor out = Tensor::zeros({B, C, Hp, Wp}, track(x));
  auto argmax = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(B * C * Hp * Wp));
  {
    const real* px = x.data().data();
    real* po = out.mutable_data().data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const real* plane = px + bc * H * W;
      for (int64_t hh = 0; hh < Hp; ++hh)
        for (int64_t ww = 0; ww < Wp; ++ww) {
          real best = -std::numeric_limits<real>::infinity();
          int64_t best_i = -1;
          for (int64_t kh = 0; kh < kernel; ++kh) {
            const int64_t i = hh * stride + kh - pad;
            if (i < 0 || i >= H) continue;
            for (int64_t kw = 0; kw < kernel; ++kw) {
              const int64_t j = ww * stride + kw - pad;
              if (j < 0 || j >= W) continue;
              if (plane[i * W + j] > best) {
                best = plane[i * W + j];
                best_i = i * W + j;
              }
            }
          }
          po[bc * Hp * Wp + hh * Wp + ww] = best;
          (*argmax)[static_cast<size_t>(bc * Hp * Wp + hh * Wp + ww)] = best_i;
        }
    }
  }
  check_finite(out.data(), "max_pool2d");
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active().record(oi, [xi, oi, argmax, B, C, H, W, Hp, Wp]() {
      real* dx = ensure_grad(*xi).data();
      const real* g = oi->grad.data();
      for (int64_t bc = 0; bc < B * C; ++bc)
        for (int64_t q = 0; q < Hp * Wp; ++q) {
          const int64_t i = (*argmax)[static_cast<size_t>(bc * Hp * Wp + q)];
          if (i >= 0) dx[bc * H * W + i] += g[bc * Hp * Wp + q];
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  real momentum, real eps) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw ShapeError("batch_norm: expected [B,C,L] or [B,C,H,W], got " +
                     shape_str(x.shape()));
  }
  const int64_t B = x.dim(0), C = x.dim(1);
  const int64_t spatial = x.numel() / (B * C);
  if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C ||
      running_var.numel() != C) {
    throw ShapeError("batch_norm: per-channel parameter size mismatch");
  }
  const int64_t m = B * spatial;

  std::vector<real> mu(static_cast<size_t>(C)), var(static_cast<size_t>(C));
  if (training) {
    const real* px = x.data().data();
    for (int64_t c = 0; c < C; ++c) {
      real s = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const real* row = px + (b * C + c) * spatial;
        for (int64_t i = 0; i < spatial; ++i) s += row[i];
      }
      mu[static_cast<size_t>(c)] = s / static_cast<real>(m);
    }
    for (int64_t c = 0; c < C; ++c) {
      real s = 0.0;
      const real mc = mu[static_cast<size_t>(c)];
      for (int64_t b = 0; b < B; ++b) {
        const real* row = px + (b * C + c) * spatial;
        for (int64_t i = 0; i < spatial; ++i) {
          const real d = row[i] - mc;
          s += d * d;
        }
      }
      var[static_cast<size_t>(c)] = s / static_cast<real>(m);
    }
    // Fold batch statistics into the running buffers (unbiased variance).
    real* rm = running_mean.mutable_data().data();
    real* rv = running_var.mutable_data().data();
    const real unbias = m > 1 ? static_cast<real>(m) / static_cast<real>(m - 1) : 1.0;
    for (int64_t c = 0; c < C; ++c) {
      rm[c] = (1.0 - momentum) * rm[c] + momentum * mu[static_cast<size_t>(c)];
      rv[c] = (1.0 - momentum) * rv[c] +
              momentum * var[static_cast<size_t>(c)] * unbias;
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mu[static_cast<size_t>(c)] = running_mean.data()[static_cast<size_t>(c)];
      var[static_cast<size_t>(c)] = running_var.data()[static_cast<size_t>(c)];
    }
  }

  std::vector<real> inv_std(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c)
    inv_std[static_cast<size_t>(c)] =
        1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps);

  bool rg = g_grad_enabled && (x.requires_grad() || gamma.requires_grad() ||
                               beta.requires_grad());
  Tensor out = Tensor::zeros(x.shape(), rg);
  auto xhat = std::make_shared<std::vector<real>>(x.data().size());
  {
    const real* px = x.data().data();
    const real* pg = gamma.data().data();
    const real* pb = beta.data().data();
    real* po = out.mutable_data().data();
    real* ph = xhat->data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c) {
        const real mc = mu[static_cast<size_t>(c)];
        const real is = inv_std[static_cast<size_t>(c)];
        const real gc = pg[c], bc = pb[c];
        const int64_t base = (b * C + c) * spatial;
        for (int64_t i = 0; i < spatial; ++i) {
          const real h = (px[base + i] - mc) * is;
          ph[base + i] = h;
          po[base + i] = gc * h + bc;
        }
      }
  }
  check_finite(out.data(), "batch_norm");
  if (rg) {
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
    auto istd = std::make_shared<std::vector<real>>(std::move(inv_std));
    Tape::active().record(oi, [xi, gi, bi, oi, xhat, istd, B, C, spatial, m,
                               training]() {
      const real* g = oi->grad.data();
      const real* ph = xhat->data();
      const real* pg = gi->data.data();
      if (gi->requires_grad || bi->requires_grad) {
        real* dgamma = gi->requires_grad ? ensure_grad(*gi).data() : nullptr;
        real* dbeta = bi->requires_grad ? ensure_grad(*bi).data() : nullptr;
        for (int64_t c = 0; c < C; ++c) {
          real sg = 0.0, sb = 0.0;
          for (int64_t b = 0; b < B; ++b) {
            const int64_t base = (b * C + c) * spatial;
            for (int64_t i = 0; i < spatial; ++i) {
              sg += g[base + i] * ph[base + i];
              sb += g[base + i];
            }
          }
          if (dgamma) dgamma[c] += sg;
          if (dbeta) dbeta[c] += sb;
        }
      }
      if (xi->requires_grad) {
        real* dx = ensure_grad(*xi).data();
        for (int64_t c = 0; c < C; ++c) {
          const real is = (*istd)[static_cast<size_t>(c)];
          const real gc = pg[c];
          if (training) {
            // Batch statistics depend on x: full backward formula.
            real sum_dy = 0.0, sum_dy_h = 0.0;
            for (int64_t b = 0; b < B; ++b) {
              const int64_t base = (b * C + c) * spatial;
              for (int64_t i = 0; i < spatial; ++i) {
                sum_dy += g[base + i];
                sum_dy_h += g[base + i] * ph[base + i];
              }
            }
            const real inv_m = 1.0 / static_cast<real>(m);
            for (int64_t b = 0; b < B; ++b) {
              const int64_t base = (b * C + c) * spatial;
              for (int64_t i = 0; i < spatial; ++i) {
                dx[base + i] += gc * is *
                                (g[base + i] - inv_m * sum_dy -
                                 inv_m * ph[base + i] * sum_dy_h);
              }
            }
          } else {
            for (int64_t b = 0; b < B; ++b) {
              const int64_t base = (b * C + c) * spatial;
              for (int64_t i = 0; i < spatial; ++i)
                dx[base + i] += g[base + i] * gc * is;
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

Tensor bias_add(const Tensor& x, const Tensor& b) {
  if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1)) {
    throw ShapeError("bias_add: expected [N,D] + [D], got " +
                     shape_str(x.shape()) + " and " + shape_str(b.shape()));
  }
  const int64_t N = x.dim(0), D = x.dim(1);
  Tensor out = Tensor::zeros({N, D}, track(x, b));
  for (int64_t i = 0; i < N; ++i)
    for (int64_t j = 0; j < D; ++j)
      out.mutable_data()[i * D + j] = x.data()[i * D + j] + b.data()[j];
  check_finite(out.data(), "bias_add");
  if (out.requires_grad()) {
    auto xi = x.impl(), bi = b.impl(), oi = out.impl();
    Tape::active().record(oi, [xi, bi, oi, N, D]() {
      const real* g = oi->grad.data();
      if (xi->requires_grad) {
        real* dx = ensure_grad(*xi).data();
        for (int64_t i = 0; i < N * D; ++i) dx[i] += g[i];
      }
      if (bi->requires_grad) {
        real* db = ensure_grad(*bi).data();
        for (int64_t i = 0; i < N; ++i)
          for (int64_t j = 0; j < D; ++j) db[j] += g[i * D + j];
      }
    });
  }
  return out;
}

Tensor row_scale(const Tensor& x, const Tensor& s) {
  if (x.rank() != 2 || s.numel() != x.dim(0)) {
    throw ShapeError("row_scale: expected [N,D] with N scaling factors, got " +
                     shape_str(x.shape()) + " and " + shape_str(s.shape()));
  }
  const int64_t N = x.dim(0), D = x.dim(1);
  Tensor out = Tensor::zeros({N, D}, track(x, s));
  for (int64_t i = 0; i < N; ++i)
    for (int64_t j = 0; j < D; ++j)
      out.mutable_data()[i * D + j] = x.data()[i * D + j] * s.data()[i];
  check_finite(out.data(), "row_scale");
  if (out.requires_grad()) {
    auto xi = x.impl(), si = s.impl(), oi = out.impl();
    Tape::active().record(oi, [xi, si, oi, N, D]() {
      const real* g = oi->grad.data();
      if (xi->requires_grad) {
        real* dx = ensure_grad(*xi).data();
        const real* ps = si->data.data();
        for (int64_t i = 0; i < N; ++i)
          for (int64_t j = 0; j < D; ++j) dx[i * D + j] += g[i * D + j] * ps[i];
      }
      if (si->requires_grad) {
        real* ds = ensure_grad(*si).data();
        const real* px = xi->data.data();
        for (int64_t i = 0; i < N; ++i) {
          real acc = 0.0;
          for (int64_t j = 0; j < D; ++j) acc += g[i * D + j] * px[i * D + j];
          ds[i] += acc;
        }
      }
    });
  }
  return out;
}

Tensor channel_scale(const Tensor& u, const Tensor& s) {
  if ((u.rank() != 3 && u.rank() != 4) || s.rank() != 2 ||
      s.dim(0) != u.dim(0) || s.dim(1) != u.dim(1)) {
    throw ShapeError("channel_scale: expected [B,C,...] with [B,C] factors, got " +
                     shape_str(u.shape()) + " and " + shape_str(s.shape()));
  }
  const int64_t B = u.dim(0), C = u.dim(1);
  const int64_t spatial = u.numel() / (B * C);
  Tensor out = Tensor::zeros(u.shape(), track(u, s));
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const real sv = s.data()[bc];
    for (int64_t i = 0; i < spatial; ++i)
      out.mutable_data()[bc * spatial + i] = u.data()[bc * spatial + i] * sv;
  }
  check_finite(out.data(), "channel_scale");
  if (out.requires_grad()) {
    auto ui = u.impl(), si = s.impl(), oi = out.impl();
    Tape::active().record(oi, [ui, si, oi, B, C, spatial]() {
      const real* g = oi->grad.data();
      if (ui->requires_grad) {
        real* du = ensure_grad(*ui).data();
        const real* ps = si->data.data();
        for (int64_t bc = 0; bc < B * C; ++bc)
          for (int64_t i = 0; i < spatial; ++i)
            du[bc * spatial + i] += g[bc * spatial + i] * ps[bc];
      }
      if (si->requires_grad) {
        real* ds = ensure_grad(*si).data();
        const real* pu = ui->data.data();
        for (int64_t bc = 0; bc < B * C; ++bc) {
          real acc = 0.0;
          for (int64_t i = 0; i < spatial; ++i)
            acc += g[bc * spatial + i] * pu[bc * spatial + i];
          ds[bc] += acc;
        }
      }
    });
  }
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw ShapeError("concat_cols: expected [N,Da] and [N,Db], got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const int64_t N = a.dim(0), Da = a.dim(1), Db = b.dim(1);
  Tensor out = Tensor::zeros({N, Da + Db}, track(a, b));
  for (int64_t i = 0; i < N; ++i) {
    for (int64_t j = 0; j < Da; ++j)
      out.mutable_data()[i * (Da + Db) + j] = a.data()[i * Da + j];
    for (int64_t j = 0; j < Db; ++j)
      out.mutable_data()[i * (Da + Db) + Da + j] = b.data()[i * Db + j];
  }
  if (out.requires_grad()) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active().record(oi, [ai, bi, oi, N, Da, Db]() {
      const real* g = oi->grad.data();
      if (ai->requires_grad) {
        real* da = ensure_grad(*ai).data();
        for (int64_t i = 0; i < N; ++i)
          for (int64_t j = 0; j < Da; ++j)
            da[i * Da + j] += g[i * (Da + Db) + j];
      }
      if (bi->requires_grad) {
        real* db = ensure_grad(*bi).data();
        for (int64_t i = 0; i < N; ++i)
          for (int64_t j = 0; j < Db; ++j)
            db[i * Db + j] += g[i * (Da + Db) + Da + j];
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int64_t begin, int64_t count) {
  if (x.rank() != 2) {
    throw ShapeError("slice_rows: expected rank-2 input, got " +
                     shape_str(x.shape()));
  }
  const int64_t N = x.dim(0), D = x.dim(1);
  if (begin < 0 || count < 0 || begin + count > N) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of bounds for " +
                     std::to_string(N) + " rows");
  }
  Tensor out = Tensor::zeros({count, D}, track(x));
  std::copy(x.data().begin() + begin * D, x.data().begin() + (begin + count) * D,
            out.mutable_data().begin());
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active().record(oi, [xi, oi, begin, count, D]() {
      real* dx = ensure_grad(*xi).data();
      const real* g = oi->grad.data();
      for (int64_t i = 0; i < count * D; ++i) dx[begin * D + i] += g[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int64_t begin, int64_t count) {
  if (x.rank() != 2) {
    throw ShapeError("slice_cols: expected rank-2 input, got " +
                     shape_str(x.shape()));
  }
  const int64_t N = x.dim(0), D = x.dim(1);
  if (begin < 0 || count < 0 || begin + count > D) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of bounds for " +
                     std::to_string(D) + " cols");
  }
  Tensor out = Tensor::zeros({N, count}, track(x));
  for (int64_t i = 0; i < N; ++i)
    for (int64_t j = 0; j < count; ++j)
      out.mutable_data()[i * count + j] = x.data()[i * D + begin + j];
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    Tape::active().record(oi, [xi, oi, N, D, begin, count]() {
      real* dx = ensure_grad(*xi).data();
      const real* g = oi->grad.data();
      for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < count; ++j)
          dx[i * D + begin + j] += g[i * count + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary cross entropy on probabilities
// ---------------------------------------------------------------------------

Tensor bce_loss(const Tensor& probs, const Tensor& labels) {
  require_same_shape(probs, labels, "bce_loss");
  for (real y : labels.data()) {
    if (y != 0.0 && y != 1.0)
      throw ValueError("bce_loss: labels must be exactly 0 or 1");
  }
  constexpr real kEps = 1e-7;
  const int64_t n = probs.numel();
  if (n == 0) throw ShapeError("bce_loss: empty input");
  real acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const real p = std::clamp(probs.data()[i], kEps, 1.0 - kEps);
    const real y = labels.data()[i];
    acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  Tensor out = Tensor::zeros({}, track(probs));
  out.mutable_data()[0] = acc / static_cast<real>(n);
  check_finite(out.data(), "bce_loss");
  if (out.requires_grad()) {
    auto pi = probs.impl(), li = labels.impl(), oi = out.impl();
    Tape::active().record(oi, [pi, li, oi, n]() {
      real* dp = ensure_grad(*pi).data();
      const real g = oi->grad[0] / static_cast<real>(n);
      for (int64_t i = 0; i < n; ++i) {
        const real p0 = pi->data[static_cast<size_t>(i)];
        if (p0 < kEps || p0 > 1.0 - kEps) continue;  // clamped: flat region
        const real y = li->data[static_cast<size_t>(i)];
        dp[i] += g * (p0 - y) / (p0 * (1.0 - p0));
      }
    });
  }
  return out;
}

}  // namespace ecgssl
