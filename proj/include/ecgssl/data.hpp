#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ecgssl/metrics.hpp"
#include "ecgssl/rng.hpp"
#include "ecgssl/tensor.hpp"

namespace ecgssl {

// One 12-lead recording with a 25-bit multi-hot diagnosis mask. Samples are
// stored lead-major as float32, mirroring the on-disk layout.
struct EcgRecord {
  static constexpr int64_t kLeads = 12;
  static constexpr int64_t kClasses = 25;

  std::string id;
  float fs = 500.0f;
  int64_t n_samples = 0;
  std::vector<float> leads;  // kLeads * n_samples
  uint32_t label_mask = 0;   // low 25 bits

  bool has_label(int64_t c) const { return (label_mask >> c) & 1u; }
  std::vector<real> label_vector() const;
  Tensor leads_tensor() const;  // [12, n_samples] doubles
  void validate() const;
};

// ECGR binary format, all integers little-endian:
//   magic "ECGR" | version u16 | id_len u16 | id bytes | fs f32
//   | n_leads u8 (=12) | n_samples u32 | label mask u32 | samples f32[12*n]
std::string encode_record(const EcgRecord& rec);
EcgRecord decode_record(const std::string& bytes);
void write_record(const std::filesystem::path& path, const EcgRecord& rec);
EcgRecord read_record(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic fixture
// ---------------------------------------------------------------------------

// Beat morphology parameters per class. Multi-label records sum each extra
// class's deviation from the first (normal) profile.
struct ClassProfile {
  real rate_bpm = 60.0;
  real qrs_width_s = 0.08;
  real amplitude = 1.0;
};

std::vector<ClassProfile> default_profiles(int64_t n_classes);

struct SynthConfig {
  int64_t n_records = 400;
  int64_t n_active_classes = 4;  // labels drawn from classes [0, n)
  real fs = 500.0;
  real duration_s = 10.0;
  real noise_sigma = 0.05;
  real p_second_label = 0.0;  // chance of one extra label per record
  std::vector<ClassProfile> profiles;  // empty: default_profiles(n_active)
  uint64_t seed = 1234;

  void validate() const;
};

// Periodic P-QRS-T beat trains (three Gaussian bumps per beat) at
// class-specific heart rate, QRS width and amplitude, plus white noise.
// With zero noise each lead is exactly periodic in the beat period.
std::vector<EcgRecord> gen_synthetic(const SynthConfig& cfg);

// Beat period in samples for a label set under the given profiles.
int64_t synth_period_samples(const SynthConfig& cfg, uint32_t label_mask);

// ---------------------------------------------------------------------------
// Cross-validation folds
// ---------------------------------------------------------------------------

struct FoldPlan {
  std::vector<std::vector<std::string>> folds;  // record ids, disjoint

  // Maps fold -> record indices within `records` order.
  std::vector<std::vector<int64_t>> index_folds(
      const std::vector<EcgRecord>& records) const;
  void validate(const std::vector<EcgRecord>& records) const;
};

// Greedy iterative multi-label stratification: rarest label first, records
// go to the fold with the greatest remaining need for that label; ties break
// by fold size, then a seed-derived fold order.
FoldPlan make_folds(const std::vector<EcgRecord>& records, int64_t k,
                    uint64_t seed);

// ---------------------------------------------------------------------------
// Dataset directory: records/<id>.ecgr + labels.csv + reward.csv
// ---------------------------------------------------------------------------

void save_dataset(const std::filesystem::path& dir,
                  const std::vector<EcgRecord>& records);
std::vector<EcgRecord> load_dataset(const std::filesystem::path& dir);

LabelTable dataset_labels(const std::vector<EcgRecord>& records);

}  // namespace ecgssl
