#include "ecgssl/selfkd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ecgssl {

void SelfKdConfig::validate() const {
  if (prototypes < 2) throw ConfigError("selfkd: need at least 2 prototypes");
  if (!(tau_student > 0.0 && tau_teacher > 0.0))
    throw ConfigError("selfkd: temperatures must be positive");
  if (!(tau_teacher < tau_student))
    throw ConfigError("selfkd: teacher temperature must be below student's");
  if (!(ema_lambda >= 0.0 && ema_lambda < 1.0))
    throw ConfigError("selfkd: ema_lambda must be in [0, 1)");
  if (!(center_momentum >= 0.0 && center_momentum < 1.0))
    throw ConfigError("selfkd: center_momentum must be in [0, 1)");
  if (steps < 1 || batch_size < 1)
    throw ConfigError("selfkd: steps and batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("selfkd: lr must be positive");
}

SslTower::SslTower(Modality modality, const EncoderConfig& enc_cfg,
                   const ProjectionHeadConfig& head_cfg, uint64_t seed) {
  Rng rng(seed);
  encoder = make_encoder(modality, enc_cfg, rng);
  head = ProjectionHead(enc_cfg.feature_dim, head_cfg, rng);
  encoder->collect_state("encoder", state);
  head.collect_state("head", state);
}

Tensor SslTower::logits(const Tensor& x, bool training) {
  return head.forward(encoder->forward(x, training));
}

void SslTower::copy_state_from(const SslTower& other) {
  if (state.size() != other.state.size())
    throw ShapeError("tower state mismatch: different entry counts");
  for (size_t i = 0; i < state.size(); ++i) {
    if (state[i].tensor.shape() != other.state[i].tensor.shape())
      throw ShapeError("tower state mismatch at " + state[i].name);
    state[i].tensor.mutable_data() = other.state[i].tensor.data();
  }
}

Tensor teacher_targets(const Tensor& teacher_logits, const Tensor& center,
                       real tau) {
  if (teacher_logits.rank() != 2)
    throw ShapeError("teacher_targets: expected [N,K] logits");
  if (center.numel() != teacher_logits.dim(1))
    throw ShapeError("teacher_targets: center size mismatch");
  NoGradGuard ng;
  Tensor centered = bias_add(teacher_logits, scale(center, -1.0));
  return softmax_t(centered, tau);
}

real mean_distribution_entropy(const Tensor& probs) {
  const int64_t n = probs.dim(0), k = probs.dim(1);
  std::vector<real> pbar(static_cast<size_t>(k), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k; ++j)
      pbar[static_cast<size_t>(j)] += probs.data()[i * k + j];
  real h = 0.0;
  for (real p : pbar) {
    p /= static_cast<real>(n);
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

Tensor kd_loss(const Tensor& teacher_logits, const Tensor& student_logits,
               const Tensor& center, const SelfKdConfig& cfg,
               const std::vector<ViewKind>& kinds, int64_t batch) {
  std::vector<int64_t> global_view_idx;
  for (size_t v = 0; v < kinds.size(); ++v)
    if (kinds[v] == ViewKind::kGlobal)
      global_view_idx.push_back(static_cast<int64_t>(v));
  const int64_t vg = static_cast<int64_t>(global_view_idx.size());
  const int64_t vall = static_cast<int64_t>(kinds.size());
  if (vg < 2)
    throw ConfigError("kd_loss: need at least 2 global views, got " +
                      std::to_string(vg));
  if (teacher_logits.dim(0) != vg * batch)
    throw ShapeError("kd_loss: teacher logits expect " +
                     std::to_string(vg * batch) + " rows, got " +
                     std::to_string(teacher_logits.dim(0)));
  if (student_logits.dim(0) != vall * batch)
    throw ShapeError("kd_loss: student logits expect " +
                     std::to_string(vall * batch) + " rows, got " +
                     std::to_string(student_logits.dim(0)));

  const Tensor targets =
      teacher_targets(teacher_logits, center, cfg.tau_teacher);

  // Log-probabilities per student view block.
  std::vector<Tensor> log_ps;
  log_ps.reserve(static_cast<size_t>(vall));
  for (int64_t v = 0; v < vall; ++v)
    log_ps.push_back(log_softmax_t(slice_rows(student_logits, v * batch, batch),
                                   cfg.tau_student));

  Tensor total;
  int64_t pairs = 0;
  for (int64_t g = 0; g < vg; ++g) {
    Tensor target_block = slice_rows(targets, g * batch, batch);
    for (int64_t v = 0; v < vall; ++v) {
      if (v == global_view_idx[static_cast<size_t>(g)]) continue;
      Tensor ce = sum(mul(target_block, log_ps[static_cast<size_t>(v)]));
      total = total.defined() ? add(total, ce) : ce;
      ++pairs;
    }
  }
  return scale(total, -1.0 / static_cast<real>(pairs * batch));
}

void update_teacher(SelfKdState& state, real ema_lambda) {
  if (!(ema_lambda >= 0.0 && ema_lambda <= 1.0))
    throw ValueError("update_teacher: ema_lambda must be in [0, 1]");
  auto& ts = state.teacher.state;
  auto& ss = state.student.state;
  if (ts.size() != ss.size())
    throw ShapeError("update_teacher: state entry count mismatch");
  for (size_t i = 0; i < ts.size(); ++i) {
    auto& t = ts[i].tensor;
    const auto& s = ss[i].tensor;
    if (t.shape() != s.shape())
      throw ShapeError("update_teacher: shape mismatch at " + ts[i].name);
    real* pt = t.mutable_data().data();
    const real* ps = s.data().data();
    const int64_t n = t.numel();
    for (int64_t j = 0; j < n; ++j)
      pt[j] = ema_lambda * pt[j] + (1.0 - ema_lambda) * ps[j];
  }
}

void update_center(Tensor& center, const Tensor& teacher_logits, real momentum) {
  if (teacher_logits.rank() != 2 || teacher_logits.dim(1) != center.numel())
    throw ShapeError("update_center: logits/center size mismatch");
  const int64_t n = teacher_logits.dim(0), k = center.numel();
  if (n == 0) throw ValueError("update_center: empty batch");
  real* pc = center.mutable_data().data();
  for (int64_t j = 0; j < k; ++j) {
    real m = 0.0;
    for (int64_t i = 0; i < n; ++i) m += teacher_logits.data()[i * k + j];
    m /= static_cast<real>(n);
    pc[j] = momentum * pc[j] + (1.0 - momentum) * m;
  }
}

namespace {

// Stacks view slots row-blockwise into [n_views*B, ...].
Tensor stack_views(const ViewBatch& vb, bool globals_only) {
  std::vector<const ViewBatch::Slot*> slots;
  for (const auto& s : vb.views)
    if (!globals_only || s.kind == ViewKind::kGlobal) slots.push_back(&s);
  Shape shape = slots.front()->stacked.shape();
  const int64_t per_slot = slots.front()->stacked.numel();
  shape[0] *= static_cast<int64_t>(slots.size());
  Tensor out = Tensor::zeros(shape);
  for (size_t i = 0; i < slots.size(); ++i)
    std::copy(slots[i]->stacked.data().begin(), slots[i]->stacked.data().end(),
              out.mutable_data().begin() + static_cast<int64_t>(i) * per_slot);
  return out;
}

}  // namespace

PretrainResult pretrain_modality(const std::vector<Tensor>& records,
                                 Modality modality, const PretrainConfig& cfg,
                                 const std::vector<Tensor>* spec_cache) {
  cfg.kd.validate();
  cfg.augment.validate();
  if (records.empty()) throw ConfigError("pretrain: empty dataset");
  if (cfg.head.prototypes != cfg.kd.prototypes)
    throw ConfigError("pretrain: head prototype count differs from kd config");

  // Modality-side inputs: raw leads, or (cached) spectrograms.
  std::vector<Tensor> inputs;
  if (modality == Modality::kTime) {
    if (cfg.augment.output_len != cfg.encoder.input_length)
      throw ConfigError("pretrain: augment output_len must match encoder input_length");
    inputs = records;
  } else {
    if (cfg.augment.output_len != cfg.encoder.input_frames)
      throw ConfigError("pretrain: augment output_len must match encoder input_frames");
    if (cfg.encoder.input_freq != cfg.stft.window_len / 2 + 1)
      throw ConfigError("pretrain: encoder input_freq must match stft bins");
    if (spec_cache) {
      if (spec_cache->size() != records.size())
        throw ConfigError("pretrain: spectrogram cache size mismatch");
      inputs = *spec_cache;
    } else {
      inputs.reserve(records.size());
      for (const Tensor& r : records)
        inputs.push_back(spectrogram(r, cfg.stft).values);
    }
  }

  SelfKdState st;
  st.student = SslTower(modality, cfg.encoder, cfg.head,
                        derive_seed(cfg.seed, 0x57u));
  st.teacher = SslTower(modality, cfg.encoder, cfg.head,
                        derive_seed(cfg.seed, 0x7eu));
  st.teacher.copy_state_from(st.student);
  st.center = Tensor::zeros({cfg.kd.prototypes});
  st.optimizer = std::make_unique<Adam>(cfg.kd.lr);
  set_requires_grad(st.student.state, true);
  set_requires_grad(st.teacher.state, false);
  st.student_params = trainable_params(st.student.state);

  const int64_t n = static_cast<int64_t>(inputs.size());
  const int64_t bsz = std::min<int64_t>(cfg.kd.batch_size, n);
  Rng shuffle_rng(derive_seed(cfg.seed, 0xba7c4u));
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  int64_t cursor = n;  // force shuffle on first use

  PretrainResult result;
  std::vector<ViewKind> kinds;
  for (int v = 0; v < 2 + cfg.augment.n_local_views; ++v)
    kinds.push_back(v < 2 ? ViewKind::kGlobal : ViewKind::kLocal);

  for (int64_t step = 0; step < cfg.kd.steps; ++step) {
    try {
      std::vector<Tensor> batch;
      batch.reserve(static_cast<size_t>(bsz));
      for (int64_t i = 0; i < bsz; ++i) {
        if (cursor >= n) {
          for (int64_t j = n - 1; j > 0; --j)
            std::swap(order[static_cast<size_t>(j)],
                      order[static_cast<size_t>(shuffle_rng.uniform_int(0, j))]);
          cursor = 0;
        }
        batch.push_back(inputs[static_cast<size_t>(order[static_cast<size_t>(cursor++)])]);
      }

      ViewBatch vb = make_view_batch(
          batch, modality, cfg.augment,
          derive_seed(cfg.seed, 0x71e3u, static_cast<uint64_t>(step)));

      Tensor student_in = stack_views(vb, /*globals_only=*/false);
      Tensor teacher_in = stack_views(vb, /*globals_only=*/true);

      Tensor student_logits = st.student.logits(student_in, /*training=*/true);
      Tensor teacher_logits;
      {
        NoGradGuard ng;
        teacher_logits = st.teacher.logits(teacher_in, /*training=*/false);
      }

      // Entropy of the targets the loss will see (center before its update).
      const real entropy = mean_distribution_entropy(
          teacher_targets(teacher_logits, st.center, cfg.kd.tau_teacher));

      Tensor loss = kd_loss(teacher_logits, student_logits, st.center, cfg.kd,
                            kinds, bsz);
      if (!std::isfinite(loss.item()))
        throw NumericError("pretrain: non-finite loss");
      backward(loss);
      st.optimizer->step(st.student_params);
      st.optimizer->zero_grad(st.student_params);
      update_teacher(st, cfg.kd.ema_lambda);
      if (cfg.kd.centering)
        update_center(st.center, teacher_logits, cfg.kd.center_momentum);

      result.loss_trace.push_back(loss.item());
      result.entropy_trace.push_back(entropy);
      ++st.step;
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " +
                         std::to_string(step));
    }
  }

  result.student_state = st.student.state;
  result.teacher_state = st.teacher.state;
  result.center = st.center;
  return result;
}

}  // namespace ecgssl
