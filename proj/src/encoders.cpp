#include "ecgssl/encoders.hpp"

#include <cmath>

namespace ecgssl {

void EncoderConfig::validate() const {
  if (stages.empty()) throw ConfigError("encoder: at least one stage required");
  for (const auto& s : stages) {
    if (s.channels < 1 || s.blocks < 1 || s.stride < 1)
      throw ConfigError("encoder: stage fields must be positive");
  }
  if (feature_dim < 1) throw ConfigError("encoder: feature_dim must be positive");
  if (se_reduction < 1) throw ConfigError("encoder: se_reduction must be positive");
  if (input_channels < 1) throw ConfigError("encoder: input_channels must be positive");
}

namespace {
Tensor he_normal(Shape shape, int64_t fan_in, Rng& rng) {
  return randn(std::move(shape), rng, std::sqrt(2.0 / static_cast<real>(fan_in)),
               /*requires_grad=*/true);
}
}  // namespace

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

Conv1dLayer::Conv1dLayer(int64_t in_ch, int64_t out_ch, int kernel, int stride_,
                         int pad_, Rng& rng)
    : w(he_normal({out_ch, in_ch, kernel}, in_ch * kernel, rng)),
      stride(stride_),
      pad(pad_) {}

void Conv1dLayer::collect(const std::string& prefix,
                          std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".w", w, true});
}

Conv2dLayer::Conv2dLayer(int64_t in_ch, int64_t out_ch, int kernel, int stride_,
                         int pad_, Rng& rng)
    : w(he_normal({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel, rng)),
      stride(stride_),
      pad(pad_) {}

void Conv2dLayer::collect(const std::string& prefix,
                          std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".w", w, true});
}

BatchNormLayer::BatchNormLayer(int64_t channels)
    : gamma(Tensor::full({channels}, 1.0, true)),
      beta(Tensor::zeros({channels}, true)),
      running_mean(Tensor::zeros({channels})),
      running_var(Tensor::full({channels}, 1.0)) {}

Tensor BatchNormLayer::forward(const Tensor& x, bool training) {
  return batch_norm(x, gamma, beta, running_mean, running_var, training);
}

void BatchNormLayer::collect(const std::string& prefix,
                             std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".gamma", gamma, true});
  out.push_back({prefix + ".beta", beta, true});
  out.push_back({prefix + ".running_mean", running_mean, false});
  out.push_back({prefix + ".running_var", running_var, false});
}

LinearLayer::LinearLayer(int64_t in, int64_t out, Rng& rng)
    : w(he_normal({in, out}, in, rng)), b(Tensor::zeros({out}, true)) {}

void LinearLayer::collect(const std::string& prefix,
                          std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".w", w, true});
  out.push_back({prefix + ".b", b, true});
}

SeBlock::SeBlock(int64_t channels, int64_t reduction, Rng& rng) {
  const int64_t mid = std::max<int64_t>(1, channels / reduction);
  fc1 = LinearLayer(channels, mid, rng);
  fc2 = LinearLayer(mid, channels, rng);
}

Tensor SeBlock::excitation(const Tensor& u) const {
  Tensor squeezed = global_avg_pool(u);  // [B,C]
  return sigmoid(fc2.forward(relu(fc1.forward(squeezed))));
}

Tensor SeBlock::forward(const Tensor& u) const {
  return channel_scale(u, excitation(u));
}

void SeBlock::collect(const std::string& prefix, std::vector<NamedTensor>& out) {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

ResBlock1d::ResBlock1d(int64_t in_ch, int64_t out_ch, int kernel, int stride,
                       Rng& rng)
    : conv1(in_ch, out_ch, kernel, stride, kernel / 2, rng),
      conv2(out_ch, out_ch, kernel, 1, kernel / 2, rng),
      bn1(out_ch),
      bn2(out_ch),
      has_proj(stride != 1 || in_ch != out_ch) {
  if (has_proj) {
    proj = Conv1dLayer(in_ch, out_ch, 1, stride, 0, rng);
    bn_proj = BatchNormLayer(out_ch);
  }
}

Tensor ResBlock1d::forward(const Tensor& x, bool training) {
  Tensor y = bn2.forward(conv2.forward(relu(bn1.forward(conv1.forward(x), training))),
                         training);
  Tensor shortcut = has_proj ? bn_proj.forward(proj.forward(x), training) : x;
  return relu(add(y, shortcut));
}

void ResBlock1d::collect(const std::string& prefix,
                         std::vector<NamedTensor>& out) {
  conv1.collect(prefix + ".conv1", out);
  bn1.collect(prefix + ".bn1", out);
  conv2.collect(prefix + ".conv2", out);
  bn2.collect(prefix + ".bn2", out);
  if (has_proj) {
    proj.collect(prefix + ".proj", out);
    bn_proj.collect(prefix + ".bn_proj", out);
  }
}

ResBlock2d::ResBlock2d(int64_t in_ch, int64_t out_ch, int kernel, int stride,
                       int64_t se_reduction, Rng& rng)
    : conv1(in_ch, out_ch, kernel, stride, kernel / 2, rng),
      conv2(out_ch, out_ch, kernel, 1, kernel / 2, rng),
      bn1(out_ch),
      bn2(out_ch),
      se(out_ch, se_reduction, rng),
      has_proj(stride != 1 || in_ch != out_ch) {
  if (has_proj) {
    proj = Conv2dLayer(in_ch, out_ch, 1, stride, 0, rng);
    bn_proj = BatchNormLayer(out_ch);
  }
}

Tensor ResBlock2d::forward(const Tensor& x, bool training) {
  Tensor y = bn2.forward(conv2.forward(relu(bn1.forward(conv1.forward(x), training))),
                         training);
  y = se.forward(y);
  Tensor shortcut = has_proj ? bn_proj.forward(proj.forward(x), training) : x;
  return relu(add(y, shortcut));
}

void ResBlock2d::collect(const std::string& prefix,
                         std::vector<NamedTensor>& out) {
  conv1.collect(prefix + ".conv1", out);
  bn1.collect(prefix + ".bn1", out);
  conv2.collect(prefix + ".conv2", out);
  bn2.collect(prefix + ".bn2", out);
  se.collect(prefix + ".se", out);
  if (has_proj) {
    proj.collect(prefix + ".proj", out);
    bn_proj.collect(prefix + ".bn_proj", out);
  }
}

// ---------------------------------------------------------------------------
// Encoder1d
// ---------------------------------------------------------------------------

Encoder1d::Encoder1d(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  stem_ = Conv1dLayer(cfg.input_channels, cfg.stem_channels, cfg.stem_kernel, 2,
                      cfg.stem_kernel / 2, rng);
  stem_bn_ = BatchNormLayer(cfg.stem_channels);
  int64_t in_ch = cfg.stem_channels;
  for (const StageSpec& st : cfg.stages) {
    for (int b = 0; b < st.blocks; ++b) {
      const int stride = b == 0 ? st.stride : 1;
      blocks_.emplace_back(in_ch, st.channels, cfg.block_kernel, stride, rng);
      in_ch = st.channels;
    }
  }
  feat_ = LinearLayer(in_ch, cfg.feature_dim, rng);
}

Tensor Encoder1d::forward(const Tensor& x, bool training) {
  if (x.rank() != 3)
    throw ShapeError("encode_1d: expected [B,C,L], got " + shape_str(x.shape()));
  if (x.dim(1) != cfg_.input_channels)
    throw ShapeError("encode_1d: expected " + std::to_string(cfg_.input_channels) +
                     " channels, got " + std::to_string(x.dim(1)));
  if (x.dim(2) != cfg_.input_length)
    throw ShapeError("encode_1d: expected input length " +
                     std::to_string(cfg_.input_length) + ", got " +
                     std::to_string(x.dim(2)));
  Tensor h = relu(stem_bn_.forward(stem_.forward(x), training));
  if (cfg_.stem_pool) h = max_pool1d(h, 3, 2, 1);
  for (ResBlock1d& blk : blocks_) h = blk.forward(h, training);
  return feat_.forward(global_avg_pool(h));
}

void Encoder1d::collect_state(const std::string& prefix,
                              std::vector<NamedTensor>& out) {
  stem_.collect(prefix + ".stem", out);
  stem_bn_.collect(prefix + ".stem_bn", out);
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
  feat_.collect(prefix + ".feat", out);
}

// ---------------------------------------------------------------------------
// Encoder2d
// ---------------------------------------------------------------------------

Encoder2d::Encoder2d(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  stem_ = Conv2dLayer(cfg.input_channels, cfg.stem_channels, cfg.block_kernel, 2,
                      cfg.block_kernel / 2, rng);
  stem_bn_ = BatchNormLayer(cfg.stem_channels);
  int64_t in_ch = cfg.stem_channels;
  for (const StageSpec& st : cfg.stages) {
    for (int b = 0; b < st.blocks; ++b) {
      const int stride = b == 0 ? st.stride : 1;
      blocks_.emplace_back(in_ch, st.channels, cfg.block_kernel, stride,
                           cfg.se_reduction, rng);
      in_ch = st.channels;
    }
  }
  feat_ = LinearLayer(in_ch, cfg.feature_dim, rng);
}

Tensor Encoder2d::forward(const Tensor& x, bool training) {
  if (x.rank() != 4)
    throw ShapeError("encode_2d: expected [B,C,F,T], got " + shape_str(x.shape()));
  if (x.dim(1) != cfg_.input_channels)
    throw ShapeError("encode_2d: expected " + std::to_string(cfg_.input_channels) +
                     " channels, got " + std::to_string(x.dim(1)));
  if (x.dim(2) != cfg_.input_freq || x.dim(3) != cfg_.input_frames)
    throw ShapeError("encode_2d: expected input " +
                     std::to_string(cfg_.input_freq) + "x" +
                     std::to_string(cfg_.input_frames) + ", got " +
                     std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)));
  Tensor h = relu(stem_bn_.forward(stem_.forward(x), training));
  for (ResBlock2d& blk : blocks_) h = blk.forward(h, training);
  return feat_.forward(global_avg_pool(h));
}

void Encoder2d::collect_state(const std::string& prefix,
                              std::vector<NamedTensor>& out) {
  stem_.collect(prefix + ".stem", out);
  stem_bn_.collect(prefix + ".stem_bn", out);
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
  feat_.collect(prefix + ".feat", out);
}

std::unique_ptr<Encoder> make_encoder(Modality modality,
                                      const EncoderConfig& cfg, Rng& rng) {
  if (modality == Modality::kTime)
    return std::make_unique<Encoder1d>(cfg, rng);
  return std::make_unique<Encoder2d>(cfg, rng);
}

// ---------------------------------------------------------------------------
// ProjectionHead
// ---------------------------------------------------------------------------

ProjectionHead::ProjectionHead(int64_t in_dim, const ProjectionHeadConfig& cfg,
                               Rng& rng)
    : k_(cfg.prototypes) {
  if (k_ < 2) throw ConfigError("projection head: need at least 2 prototypes");
  int64_t in = in_dim;
  for (int64_t h : cfg.hidden) {
    layers_.emplace_back(in, h, rng);
    in = h;
  }
  layers_.emplace_back(in, k_, rng);
}

Tensor ProjectionHead::forward(const Tensor& f) const {
  Tensor h = f;
  for (size_t i = 0; i + 1 < layers_.size(); ++i)
    h = relu(layers_[i].forward(h));
  return layers_.back().forward(h);
}

void ProjectionHead::collect_state(const std::string& prefix,
                                   std::vector<NamedTensor>& out) {
  for (size_t i = 0; i < layers_.size(); ++i)
    layers_[i].collect(prefix + ".fc" + std::to_string(i), out);
}

// ---------------------------------------------------------------------------
// State dict helpers
// ---------------------------------------------------------------------------

std::vector<Tensor> trainable_params(std::vector<NamedTensor>& state) {
  std::vector<Tensor> out;
  for (auto& nt : state)
    if (nt.trainable) out.push_back(nt.tensor);
  return out;
}

void set_requires_grad(std::vector<NamedTensor>& state, bool rg) {
  for (auto& nt : state)
    if (nt.trainable) nt.tensor.set_requires_grad(rg);
}

}  // namespace ecgssl
