#pragma once

#include <filesystem>
#include <string>

#include "ecgssl/data.hpp"
#include "ecgssl/fusion.hpp"
#include "ecgssl/selfkd.hpp"

namespace ecgssl {

struct FinetuneHyper {
  int64_t steps = 200;
  int64_t batch_size = 16;
  real lr = 1e-3;
  real threshold = 0.5;
  int64_t classifier_hidden = 128;
  int64_t gate_hidden = 32;
  real crop_lo = 0.6, crop_hi = 1.0;
};

// Whole-run configuration; every hyperparameter lives here with its default.
// JSON files may specify any subset of keys, the rest keep defaults.
struct RunConfig {
  uint64_t seed = 1234;
  int64_t folds = 10;
  std::string variant = "TSG";
  std::string dataset_dir;
  std::string out_dir = "out";
  std::string reward_csv;  // empty: <dataset_dir>/reward.csv, else default
  std::string normal_class = "c00";

  SynthConfig synth;
  StftConfig stft;
  AugmentSpec augment;
  EncoderConfig encoder1;  // time branch
  EncoderConfig encoder2;  // time-frequency branch
  SelfKdConfig selfkd;
  ProjectionHeadConfig head;
  FinetuneHyper ft;

  static RunConfig defaults();
  static RunConfig from_json_text(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  std::string to_json_text() const;

  // Derived sub-configs with the cross-module fields kept consistent
  // (view length = encoder input length, prototype counts, stft bins).
  PretrainConfig pretrain_config(Modality modality) const;
  FinetuneConfig finetune_config(Variant v) const;

  RewardMatrix reward_matrix(const std::filesystem::path& dataset_dir_override =
                                 {}) const;
};

}  // namespace ecgssl
