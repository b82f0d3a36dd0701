#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "ecgssl/checkpoint.hpp"
#include "ecgssl/encoders.hpp"
#include "ecgssl/selfkd.hpp"

namespace ecgssl {

enum class Variant { kT, kS, kTSC, kTSG };

Variant variant_from_string(const std::string& s);
std::string variant_name(Variant v);

// Shared soft-attention scorer (feature -> hidden tanh -> scalar) applied to
// both modality features with the same weights.
struct GateFusionParams {
  GateFusionParams() = default;
  GateFusionParams(int64_t feature_dim, int64_t hidden, Rng& rng);
  Tensor score(const Tensor& f) const;  // [B,1]
  void collect(const std::string& prefix, std::vector<NamedTensor>& out);
  LinearLayer fc1, fc2;
};

struct GateFused {
  Tensor fused;    // [B, 2D]
  Tensor weights;  // [B, 2], rows sum to 1
};

// Impact-weighted fusion: per record, (w1, w2) = softmax over the two shared
// scorer outputs; fused = [w1*f1, w2*f2].
GateFused gate_fuse(const Tensor& f1, const Tensor& f2,
                    const GateFusionParams& params);

struct ClassifierHead {
  ClassifierHead() = default;
  ClassifierHead(int64_t in_dim, int64_t hidden, int64_t n_classes, Rng& rng);
  Tensor forward(const Tensor& feat) const;  // logits [B,C]
  void collect(const std::string& prefix, std::vector<NamedTensor>& out);
  LinearLayer fc1, fc2;
};

struct Prediction {
  Tensor probabilities;            // [B,C], each in (0,1)
  std::vector<uint8_t> decisions;  // B*C, prob >= threshold
  real threshold = 0.5;
};

// Independent per-class sigmoid probabilities (multi-label; no softmax
// across classes) plus thresholded decisions.
Prediction classify(const Tensor& feat, const ClassifierHead& head,
                    real threshold = 0.5);

struct FinetuneConfig {
  Variant variant = Variant::kTSG;
  EncoderConfig encoder1;  // time branch
  EncoderConfig encoder2;  // time-frequency branch
  StftConfig stft;
  real crop_lo = 0.6, crop_hi = 1.0;  // train-time random crop range
  int64_t n_classes = 25;
  int64_t steps = 200;
  int64_t batch_size = 16;
  real lr = 1e-3;
  real threshold = 0.5;
  int64_t classifier_hidden = 128;
  int64_t gate_hidden = 32;
  uint64_t seed = 1234;

  void validate() const;
};

// Fine-tuning model: one or two encoders plus (for TSG) the gate and the
// classifier head. All parameters train end to end.
class FinetuneModel {
 public:
  FinetuneModel(const FinetuneConfig& cfg, uint64_t seed);

  // Either input may be undefined when the variant does not use that branch.
  Tensor forward_probs(const Tensor& x_time, const Tensor& x_freq,
                       bool training);
  // Gate weights from the most recent TSG forward.
  const std::optional<Tensor>& last_gate_weights() const { return last_weights_; }

  std::vector<NamedTensor>& state() { return state_; }
  const FinetuneConfig& cfg() const { return cfg_; }

  // Copies "encoder.*" entries of a pre-training checkpoint into the given
  // branch ("enc1" or "enc2").
  void load_encoder(const std::vector<CheckpointEntry>& ckpt,
                    const std::string& branch);

 private:
  FinetuneConfig cfg_;
  std::unique_ptr<Encoder> enc1_, enc2_;
  GateFusionParams gate_;
  ClassifierHead classifier_;
  std::vector<NamedTensor> state_;
  std::optional<Tensor> last_weights_;
};

struct FinetuneResult {
  std::vector<NamedTensor> model_state;
  std::vector<real> loss_trace;
  Prediction val_prediction;          // rows follow val_indices order
  std::vector<int64_t> val_indices;
};

// Trains the requested variant on the training split and predicts the
// validation split. Checkpoints, when provided, initialize the encoders;
// otherwise encoders start from random init. `spec_cache`, when given, must
// hold one precomputed spectrogram per record.
FinetuneResult finetune(const std::vector<Tensor>& records,
                        const std::vector<std::vector<real>>& labels,
                        const std::vector<int64_t>& train_idx,
                        const std::vector<int64_t>& val_idx,
                        const std::optional<std::vector<CheckpointEntry>>& ckpt_time,
                        const std::optional<std::vector<CheckpointEntry>>& ckpt_freq,
                        const FinetuneConfig& cfg,
                        const std::vector<Tensor>* spec_cache = nullptr);

}  // namespace ecgssl
