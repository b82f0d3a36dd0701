#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ecgssl/augment.hpp"
#include "ecgssl/checkpoint.hpp"
#include "ecgssl/tensor.hpp"

namespace ecgssl {

struct StageSpec {
  int64_t channels = 16;
  int blocks = 2;
  int stride = 2;
};

struct EncoderConfig {
  std::vector<StageSpec> stages = {{16, 2, 2}, {32, 2, 2}, {64, 2, 2}};
  int64_t stem_channels = 16;
  int stem_kernel = 7;   // 1-D stem; the 2-D stem uses block_kernel
  int block_kernel = 3;
  bool stem_pool = true;  // max-pool after the 1-D stem
  int64_t feature_dim = 64;
  int64_t se_reduction = 4;  // 2-D only
  int64_t input_channels = 12;
  int64_t input_length = 1000;                  // 1-D
  int64_t input_freq = 65, input_frames = 64;   // 2-D

  void validate() const;
};

struct ProjectionHeadConfig {
  std::vector<int64_t> hidden = {128, 128};
  int64_t prototypes = 64;  // K
};

// ---------------------------------------------------------------------------
// Layers. Each owns its parameters and appends them to a state dict under a
// caller-supplied prefix; batch-norm running statistics are buffers
// (trainable=false).
// ---------------------------------------------------------------------------

struct Conv1dLayer {
  Conv1dLayer() = default;
  Conv1dLayer(int64_t in_ch, int64_t out_ch, int kernel, int stride, int pad,
              Rng& rng);
  Tensor forward(const Tensor& x) const { return conv1d(x, w, stride, pad); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out);
  Tensor w;
  int stride = 1, pad = 0;
};

struct Conv2dLayer {
  Conv2dLayer() = default;
  Conv2dLayer(int64_t in_ch, int64_t out_ch, int kernel, int stride, int pad,
              Rng& rng);
  Tensor forward(const Tensor& x) const { return conv2d(x, w, stride, pad); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out);
  Tensor w;
  int stride = 1, pad = 0;
};

struct BatchNormLayer {
  BatchNormLayer() = default;
  explicit BatchNormLayer(int64_t channels);
  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out);
  Tensor gamma, beta, running_mean, running_var;
};

struct LinearLayer {
  LinearLayer() = default;
  LinearLayer(int64_t in, int64_t out, Rng& rng);
  Tensor forward(const Tensor& x) const { return bias_add(matmul(x, w), b); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out);
  Tensor w;  // [in, out]
  Tensor b;  // [out]
};

// Squeeze-and-excitation: per-channel gating factors in (0,1) from a
// two-layer bottleneck over globally pooled channel stats.
struct SeBlock {
  SeBlock() = default;
  SeBlock(int64_t channels, int64_t reduction, Rng& rng);
  Tensor forward(const Tensor& u) const;
  Tensor excitation(const Tensor& u) const;  // [B,C] gating factors
  void collect(const std::string& prefix, std::vector<NamedTensor>& out);
  LinearLayer fc1, fc2;
};

struct ResBlock1d {
  ResBlock1d() = default;
  ResBlock1d(int64_t in_ch, int64_t out_ch, int kernel, int stride, Rng& rng);
  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out);
  Conv1dLayer conv1, conv2, proj;
  BatchNormLayer bn1, bn2, bn_proj;
  bool has_proj = false;
};

struct ResBlock2d {
  ResBlock2d() = default;
  ResBlock2d(int64_t in_ch, int64_t out_ch, int kernel, int stride,
             int64_t se_reduction, Rng& rng);
  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out);
  Conv2dLayer conv1, conv2, proj;
  BatchNormLayer bn1, bn2, bn_proj;
  SeBlock se;
  bool has_proj = false;
};

// ---------------------------------------------------------------------------
// Encoders
// ---------------------------------------------------------------------------

class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  virtual void collect_state(const std::string& prefix,
                             std::vector<NamedTensor>& out) = 0;
  virtual int64_t feature_dim() const = 0;
};

// Residual 1-D CNN over [B, leads, L]; embedding via global average pooling
// over time and a linear feature layer.
class Encoder1d : public Encoder {
 public:
  Encoder1d(const EncoderConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x, bool training) override;
  void collect_state(const std::string& prefix,
                     std::vector<NamedTensor>& out) override;
  int64_t feature_dim() const override { return cfg_.feature_dim; }

 private:
  EncoderConfig cfg_;
  Conv1dLayer stem_;
  BatchNormLayer stem_bn_;
  std::vector<ResBlock1d> blocks_;
  LinearLayer feat_;
};

// Residual 2-D CNN with squeeze-and-excitation blocks over
// [B, leads, freq, frames].
class Encoder2d : public Encoder {
 public:
  Encoder2d(const EncoderConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x, bool training) override;
  void collect_state(const std::string& prefix,
                     std::vector<NamedTensor>& out) override;
  int64_t feature_dim() const override { return cfg_.feature_dim; }

 private:
  EncoderConfig cfg_;
  Conv2dLayer stem_;
  BatchNormLayer stem_bn_;
  std::vector<ResBlock2d> blocks_;
  LinearLayer feat_;
};

std::unique_ptr<Encoder> make_encoder(Modality modality,
                                      const EncoderConfig& cfg, Rng& rng);

// MLP from features to K prototype logits (softmax is applied by the
// trainer).
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(int64_t in_dim, const ProjectionHeadConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& f) const;
  void collect_state(const std::string& prefix, std::vector<NamedTensor>& out);
  int64_t prototypes() const { return k_; }

 private:
  std::vector<LinearLayer> layers_;
  int64_t k_ = 0;
};

// Helpers over state dicts.
std::vector<Tensor> trainable_params(std::vector<NamedTensor>& state);
void set_requires_grad(std::vector<NamedTensor>& state, bool rg);

}  // namespace ecgssl
