#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "ecgssl/common.hpp"
#include "ecgssl/rng.hpp"

namespace ecgssl {

// ============================================================================
// Dense float tensor with reverse-mode autodiff over a thread-local tape.
//
// A Tensor is a shared handle. Values are immutable through the public op
// API; only optimizers, EMA updates and batch-norm running buffers mutate
// data in place (via mutable_data). Gradients accumulate across backward
// passes until zero_grad.
// ============================================================================

struct TensorImpl {
  Shape shape;
  std::vector<real> data;
  bool requires_grad = false;
  std::vector<real> grad;  // empty until gradient arrives
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<real> values,
                          bool requires_grad = false);
  static Tensor scalar(real value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  const std::vector<real>& data() const { return impl_->data; }
  // In-place mutation escape hatch for optimizer steps / EMA / buffers.
  std::vector<real>& mutable_data() { return impl_->data; }

  real item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<real>& grad() const;
  void zero_grad() { impl_->grad.clear(); }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Gaussian-initialized tensor drawn from the given stream.
Tensor randn(Shape shape, Rng& rng, real stddev = 1.0,
             bool requires_grad = false);

// ---------------------------------------------------------------------------
// Grad mode. Forward passes under NoGradGuard record nothing on the tape
// (used for the teacher network and for evaluation).
// ---------------------------------------------------------------------------
bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---------------------------------------------------------------------------
// Recording tape. Ops append nodes in execution order, which is a valid
// topological order, so backward() replays the list in reverse. The tape is
// consumed (cleared) by every backward() call: rebuild the graph to call
// backward again.
// ---------------------------------------------------------------------------
class Tape {
 public:
  static Tape& active();  // thread-local instance

  void record(std::shared_ptr<TensorImpl> out, std::function<void()> backward_fn);
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::shared_ptr<TensorImpl> out;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
  friend void backward(const Tensor&);
};

// Seeds d(loss)/d(loss)=1 and replays the tape in reverse, accumulating
// gradients into every requires_grad tensor reachable from the loss.
// Scalar loss required. No-op when nothing was recorded.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Operations. Every op validates shapes, checks outputs for NaN/Inf, and
// registers its backward rule when gradients are being tracked.
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);          // [m,k]x[k,n]
Tensor conv1d(const Tensor& x, const Tensor& w, int stride, int pad);
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad);

Tensor softmax_t(const Tensor& z, real temperature);      // rowwise, [B,K]
Tensor log_softmax_t(const Tensor& z, real temperature);  // rowwise, [B,K]

Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard
Tensor scale(const Tensor& x, real c);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor log(const Tensor& x);  // domain error on non-positive input
Tensor mean(const Tensor& x);  // -> scalar
Tensor sum(const Tensor& x);   // -> scalar

Tensor global_avg_pool(const Tensor& x);  // [B,C,L]->[B,C], [B,C,H,W]->[B,C]
Tensor max_pool1d(const Tensor& x, int kernel, int stride, int pad);
Tensor max_pool2d(const Tensor& x, int kernel, int stride, int pad);

// Per-channel normalization over batch and spatial dims. Training mode uses
// batch statistics and folds them into the running buffers (in place); eval
// mode reads the running buffers only and is deterministic.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  real momentum = 0.1, real eps = 1e-5);

Tensor bias_add(const Tensor& x, const Tensor& b);       // [N,D] + [D]
Tensor row_scale(const Tensor& x, const Tensor& s);      // [N,D] * [N,1]
Tensor channel_scale(const Tensor& u, const Tensor& s);  // [B,C,...] * [B,C]
Tensor concat_cols(const Tensor& a, const Tensor& b);    // [N,Da]|[N,Db]
Tensor slice_rows(const Tensor& x, int64_t begin, int64_t count);
Tensor slice_cols(const Tensor& x, int64_t begin, int64_t count);

// Mean binary cross entropy over all entries. Probabilities are clamped to
// [1e-7, 1-1e-7]; labels must be exactly 0 or 1.
Tensor bce_loss(const Tensor& probs, const Tensor& labels);

}  // namespace ecgssl
