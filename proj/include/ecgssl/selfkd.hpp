#pragma once

#include <memory>
#include <vector>

#include "ecgssl/augment.hpp"
#include "ecgssl/encoders.hpp"
#include "ecgssl/optim.hpp"
#include "ecgssl/stft.hpp"

namespace ecgssl {

struct SelfKdConfig {
  int64_t prototypes = 64;  // K
  real tau_student = 0.1;
  real tau_teacher = 0.04;  // sharper than the student
  real ema_lambda = 0.99;
  real center_momentum = 0.9;
  bool centering = true;  // off: center frozen at zero (collapse ablation)
  int64_t steps = 300;
  int64_t batch_size = 16;
  real lr = 1e-3;

  void validate() const;
};

// Student or teacher tower: encoder plus projection head, with a flat state
// dict collected at construction ("encoder.*", "head.*").
struct SslTower {
  SslTower() = default;
  SslTower(Modality modality, const EncoderConfig& enc_cfg,
           const ProjectionHeadConfig& head_cfg, uint64_t seed);

  Tensor logits(const Tensor& x, bool training);
  void copy_state_from(const SslTower& other);

  std::unique_ptr<Encoder> encoder;
  ProjectionHead head;
  std::vector<NamedTensor> state;
};

struct SelfKdState {
  SslTower student;
  SslTower teacher;
  Tensor center;  // [K]
  int64_t step = 0;
  std::unique_ptr<Adam> optimizer;
  std::vector<Tensor> student_params;
};

// Teacher target distributions softmax((t - center)/tau), rowwise, no
// gradient tracking.
Tensor teacher_targets(const Tensor& teacher_logits, const Tensor& center,
                       real tau);

// Entropy of the average of the given distribution rows. Near ln K when
// targets spread over prototypes; near 0 under collapse.
real mean_distribution_entropy(const Tensor& probs);

// Cross-view distillation loss. Teacher logits hold only the global views
// (blocks of `batch` rows, in the order the global views appear in `kinds`);
// student logits hold every view. The mean runs over all (teacher view g,
// student view v) pairs with v != g. Teacher targets are constants.
Tensor kd_loss(const Tensor& teacher_logits, const Tensor& student_logits,
               const Tensor& center, const SelfKdConfig& cfg,
               const std::vector<ViewKind>& kinds, int64_t batch);

// EMA update over the full tower state (parameters and batch-norm buffers):
// teacher <- lambda * teacher + (1 - lambda) * student.
void update_teacher(SelfKdState& state, real ema_lambda);

// center <- momentum * center + (1 - momentum) * batch mean of teacher rows.
void update_center(Tensor& center, const Tensor& teacher_logits, real momentum);

struct PretrainConfig {
  SelfKdConfig kd;
  AugmentSpec augment;
  EncoderConfig encoder;
  ProjectionHeadConfig head;
  StftConfig stft;  // time-frequency modality only
  uint64_t seed = 1234;
};

struct PretrainResult {
  std::vector<NamedTensor> student_state;
  std::vector<NamedTensor> teacher_state;
  std::vector<real> loss_trace;
  std::vector<real> entropy_trace;
  Tensor center;
};

// Full pre-stream run on unlabeled recordings ([leads, samples] tensors).
// For the time-frequency modality the records are converted to log-power
// spectrograms up front and views are cropped from those; a precomputed
// per-record spectrogram cache may be supplied to skip the conversion.
PretrainResult pretrain_modality(const std::vector<Tensor>& records,
                                 Modality modality, const PretrainConfig& cfg,
                                 const std::vector<Tensor>* spec_cache = nullptr);

}  // namespace ecgssl
