#include "ecgssl/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ecgssl {

Variant variant_from_string(const std::string& s) {
  if (s == "T") return Variant::kT;
  if (s == "S") return Variant::kS;
  if (s == "TSC") return Variant::kTSC;
  if (s == "TSG") return Variant::kTSG;
  throw ConfigError("unknown variant: " + s + " (expected T, S, TSC or TSG)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kT: return "T";
    case Variant::kS: return "S";
    case Variant::kTSC: return "TSC";
    case Variant::kTSG: return "TSG";
  }
  return "?";
}

void FinetuneConfig::validate() const {
  if (n_classes < 1) throw ConfigError("finetune: n_classes must be positive");
  if (steps < 1 || batch_size < 1)
    throw ConfigError("finetune: steps and batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("finetune: lr must be positive");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("finetune: threshold must be in (0, 1)");
  if (!(crop_lo > 0.0 && crop_lo < crop_hi && crop_hi <= 1.0))
    throw ConfigError("finetune: bad crop range");
}

GateFusionParams::GateFusionParams(int64_t feature_dim, int64_t hidden, Rng& rng)
    : fc1(feature_dim, hidden, rng), fc2(hidden, 1, rng) {}

Tensor GateFusionParams::score(const Tensor& f) const {
  return fc2.forward(tanh(fc1.forward(f)));
}

void GateFusionParams::collect(const std::string& prefix,
                               std::vector<NamedTensor>& out) {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

GateFused gate_fuse(const Tensor& f1, const Tensor& f2,
                    const GateFusionParams& params) {
  if (f1.rank() != 2 || f1.shape() != f2.shape()) {
    throw ShapeError("gate_fuse: features must share shape [B,D], got " +
                     shape_str(f1.shape()) + " and " + shape_str(f2.shape()));
  }
  Tensor scores = concat_cols(params.score(f1), params.score(f2));  // [B,2]
  Tensor weights = softmax_t(scores, 1.0);
  Tensor w1 = slice_cols(weights, 0, 1);
  Tensor w2 = slice_cols(weights, 1, 1);
  GateFused out;
  out.fused = concat_cols(row_scale(f1, w1), row_scale(f2, w2));
  out.weights = weights;
  return out;
}

ClassifierHead::ClassifierHead(int64_t in_dim, int64_t hidden,
                               int64_t n_classes, Rng& rng)
    : fc1(in_dim, hidden, rng), fc2(hidden, n_classes, rng) {}

Tensor ClassifierHead::forward(const Tensor& feat) const {
  return fc2.forward(relu(fc1.forward(feat)));
}

void ClassifierHead::collect(const std::string& prefix,
                             std::vector<NamedTensor>& out) {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

Prediction classify(const Tensor& feat, const ClassifierHead& head,
                    real threshold) {
  Prediction pred;
  pred.probabilities = sigmoid(head.forward(feat));
  pred.threshold = threshold;
  pred.decisions.resize(static_cast<size_t>(pred.probabilities.numel()));
  for (int64_t i = 0; i < pred.probabilities.numel(); ++i)
    pred.decisions[static_cast<size_t>(i)] =
        pred.probabilities.data()[static_cast<size_t>(i)] >= threshold ? 1 : 0;
  return pred;
}

// ---------------------------------------------------------------------------
// FinetuneModel
// ---------------------------------------------------------------------------

namespace {

bool uses_time(Variant v) { return v != Variant::kS; }
bool uses_freq(Variant v) { return v != Variant::kT; }

}  // namespace

FinetuneModel::FinetuneModel(const FinetuneConfig& cfg, uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  int64_t feat_dim = 0;
  if (uses_time(cfg.variant)) {
    enc1_ = std::make_unique<Encoder1d>(cfg.encoder1, rng);
    feat_dim = cfg.encoder1.feature_dim;
  }
  if (uses_freq(cfg.variant)) {
    enc2_ = std::make_unique<Encoder2d>(cfg.encoder2, rng);
    feat_dim = cfg.encoder2.feature_dim;
  }
  if (cfg.variant == Variant::kTSC || cfg.variant == Variant::kTSG) {
    if (cfg.encoder1.feature_dim != cfg.encoder2.feature_dim)
      throw ConfigError("finetune: fusion variants need equal feature dims");
    feat_dim = 2 * cfg.encoder1.feature_dim;
  }
  if (cfg.variant == Variant::kTSG)
    gate_ = GateFusionParams(cfg.encoder1.feature_dim, cfg.gate_hidden, rng);
  classifier_ = ClassifierHead(feat_dim, cfg.classifier_hidden, cfg.n_classes, rng);

  if (enc1_) enc1_->collect_state("enc1", state_);
  if (enc2_) enc2_->collect_state("enc2", state_);
  if (cfg.variant == Variant::kTSG) gate_.collect("gate", state_);
  classifier_.collect("classifier", state_);
}

Tensor FinetuneModel::forward_probs(const Tensor& x_time, const Tensor& x_freq,
                                    bool training) {
  last_weights_.reset();
  Tensor feat;
  switch (cfg_.variant) {
    case Variant::kT:
      feat = enc1_->forward(x_time, training);
      break;
    case Variant::kS:
      feat = enc2_->forward(x_freq, training);
      break;
    case Variant::kTSC:
      feat = concat_cols(enc1_->forward(x_time, training),
                         enc2_->forward(x_freq, training));
      break;
    case Variant::kTSG: {
      GateFused gf = gate_fuse(enc1_->forward(x_time, training),
                               enc2_->forward(x_freq, training), gate_);
      feat = gf.fused;
      last_weights_ = gf.weights;
      break;
    }
  }
  return sigmoid(classifier_.forward(feat));
}

void FinetuneModel::load_encoder(const std::vector<CheckpointEntry>& ckpt,
                                 const std::string& branch) {
  std::vector<CheckpointEntry> remapped;
  for (const auto& e : ckpt) {
    if (e.name.rfind("encoder.", 0) == 0) {
      CheckpointEntry r = e;
      r.name = branch + e.name.substr(std::string("encoder").size());
      remapped.push_back(std::move(r));
    }
  }
  if (remapped.empty())
    throw ConfigError("checkpoint holds no encoder tensors");
  std::vector<NamedTensor> branch_state;
  for (auto& nt : state_)
    if (nt.name.rfind(branch + ".", 0) == 0) branch_state.push_back(nt);
  apply_checkpoint(remapped, branch_state, /*strict=*/true);
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

namespace {

// Deterministic full-record input: whole time axis resampled to the
// network length.
Tensor eval_input(const Tensor& x, int64_t out_len) {
  return crop_resample(x, 0, x.dim(x.rank() - 1), out_len);
}

Tensor train_input(const Tensor& x, int64_t out_len, real lo, real hi,
                   Rng& rng) {
  const int64_t n = x.dim(x.rank() - 1);
  const real r = hi - (hi - lo) * rng.uniform();
  int64_t len = std::clamp<int64_t>(
      static_cast<int64_t>(std::llround(r * static_cast<real>(n))), 2, n);
  const int64_t start = rng.uniform_int(0, n - len);
  return crop_resample(x, start, len, out_len);
}

Tensor stack_batch(const std::vector<Tensor>& items) {
  Shape shape = items.front().shape();
  shape.insert(shape.begin(), static_cast<int64_t>(items.size()));
  Tensor out = Tensor::zeros(shape);
  const int64_t per = items.front().numel();
  for (size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != items.front().shape())
      throw ShapeError("stack_batch: inconsistent shapes");
    std::copy(items[i].data().begin(), items[i].data().end(),
              out.mutable_data().begin() + static_cast<int64_t>(i) * per);
  }
  return out;
}

}  // namespace

FinetuneResult finetune(const std::vector<Tensor>& records,
                        const std::vector<std::vector<real>>& labels,
                        const std::vector<int64_t>& train_idx,
                        const std::vector<int64_t>& val_idx,
                        const std::optional<std::vector<CheckpointEntry>>& ckpt_time,
                        const std::optional<std::vector<CheckpointEntry>>& ckpt_freq,
                        const FinetuneConfig& cfg,
                        const std::vector<Tensor>* spec_cache) {
  cfg.validate();
  if (records.size() != labels.size())
    throw ConfigError("finetune: records/labels size mismatch");
  if (train_idx.empty()) throw ConfigError("finetune: empty training split");
  if (uses_time(cfg.variant) && ckpt_time && ckpt_time->empty())
    throw ConfigError("finetune: empty time checkpoint");
  if (uses_freq(cfg.variant) && ckpt_freq && ckpt_freq->empty())
    throw ConfigError("finetune: empty time-frequency checkpoint");

  FinetuneModel model(cfg, derive_seed(cfg.seed, 0x0df1u));
  if (uses_time(cfg.variant) && ckpt_time) model.load_encoder(*ckpt_time, "enc1");
  if (uses_freq(cfg.variant) && ckpt_freq) model.load_encoder(*ckpt_freq, "enc2");

  // Spectrograms for every record the frequency branch will see.
  std::vector<Tensor> specs;
  if (uses_freq(cfg.variant)) {
    if (cfg.encoder2.input_freq != cfg.stft.window_len / 2 + 1)
      throw ConfigError("finetune: encoder2 input_freq must match stft bins");
    if (spec_cache) {
      if (spec_cache->size() != records.size())
        throw ConfigError("finetune: spectrogram cache size mismatch");
      specs = *spec_cache;
    } else {
      specs.resize(records.size());
      auto fill = [&](const std::vector<int64_t>& idx) {
        for (int64_t i : idx) {
          auto& slot = specs[static_cast<size_t>(i)];
          if (!slot.defined())
            slot = spectrogram(records[static_cast<size_t>(i)], cfg.stft).values;
        }
      };
      fill(train_idx);
      fill(val_idx);
    }
  }

  set_requires_grad(model.state(), true);
  std::vector<Tensor> params = trainable_params(model.state());
  Adam opt(cfg.lr);

  Rng data_rng(derive_seed(cfg.seed, 0xd474u));
  std::vector<int64_t> order = train_idx;
  size_t cursor = order.size();
  const int64_t bsz =
      std::min<int64_t>(cfg.batch_size, static_cast<int64_t>(order.size()));

  FinetuneResult result;
  for (int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<Tensor> xt, xf;
    std::vector<real> y;
    for (int64_t i = 0; i < bsz; ++i) {
      if (cursor >= order.size()) {
        for (size_t j = order.size() - 1; j > 0; --j)
          std::swap(order[j], order[static_cast<size_t>(data_rng.uniform_int(
                                  0, static_cast<int64_t>(j)))]);
        cursor = 0;
      }
      const int64_t r = order[cursor++];
      if (uses_time(cfg.variant))
        xt.push_back(train_input(records[static_cast<size_t>(r)],
                                 cfg.encoder1.input_length, cfg.crop_lo,
                                 cfg.crop_hi, data_rng));
      if (uses_freq(cfg.variant))
        xf.push_back(train_input(specs[static_cast<size_t>(r)],
                                 cfg.encoder2.input_frames, cfg.crop_lo,
                                 cfg.crop_hi, data_rng));
      const auto& lab = labels[static_cast<size_t>(r)];
      if (static_cast<int64_t>(lab.size()) != cfg.n_classes)
        throw ConfigError("finetune: label width mismatch");
      y.insert(y.end(), lab.begin(), lab.end());
    }
    Tensor batch_t = xt.empty() ? Tensor() : stack_batch(xt);
    Tensor batch_f = xf.empty() ? Tensor() : stack_batch(xf);
    Tensor target = Tensor::from_data({bsz, cfg.n_classes}, std::move(y));

    Tensor probs = model.forward_probs(batch_t, batch_f, /*training=*/true);
    Tensor loss = bce_loss(probs, target);
    backward(loss);
    opt.step(params);
    opt.zero_grad(params);
    result.loss_trace.push_back(loss.item());
  }

  // Validation pass: deterministic whole-record inputs, eval mode.
  result.val_indices = val_idx;
  if (!val_idx.empty()) {
    NoGradGuard ng;
    std::vector<real> all_probs;
    const int64_t chunk = 32;
    for (size_t off = 0; off < val_idx.size(); off += chunk) {
      const size_t end = std::min(val_idx.size(), off + chunk);
      std::vector<Tensor> xt, xf;
      for (size_t i = off; i < end; ++i) {
        const int64_t r = val_idx[i];
        if (uses_time(cfg.variant))
          xt.push_back(eval_input(records[static_cast<size_t>(r)],
                                  cfg.encoder1.input_length));
        if (uses_freq(cfg.variant))
          xf.push_back(eval_input(specs[static_cast<size_t>(r)],
                                  cfg.encoder2.input_frames));
      }
      Tensor bt = xt.empty() ? Tensor() : stack_batch(xt);
      Tensor bf = xf.empty() ? Tensor() : stack_batch(xf);
      Tensor probs = model.forward_probs(bt, bf, /*training=*/false);
      all_probs.insert(all_probs.end(), probs.data().begin(), probs.data().end());
    }
    result.val_prediction.probabilities = Tensor::from_data(
        {static_cast<int64_t>(val_idx.size()), cfg.n_classes},
        std::move(all_probs));
    result.val_prediction.threshold = cfg.threshold;
    auto& dec = result.val_prediction.decisions;
    const auto& pd = result.val_prediction.probabilities.data();
    dec.resize(pd.size());
    for (size_t i = 0; i < pd.size(); ++i)
      dec[i] = pd[i] >= cfg.threshold ? 1 : 0;
  }

  result.model_state = model.state();
  return result;
}

}  // namespace ecgssl
