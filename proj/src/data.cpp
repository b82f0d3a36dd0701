#include "ecgssl/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "ecgssl/io.hpp"

namespace ecgssl {

// ---------------------------------------------------------------------------
// EcgRecord
// ---------------------------------------------------------------------------

std::vector<real> EcgRecord::label_vector() const {
  std::vector<real> v(static_cast<size_t>(kClasses), 0.0);
  for (int64_t c = 0; c < kClasses; ++c)
    if (has_label(c)) v[static_cast<size_t>(c)] = 1.0;
  return v;
}

Tensor EcgRecord::leads_tensor() const {
  std::vector<real> d(leads.size());
  for (size_t i = 0; i < leads.size(); ++i) d[i] = static_cast<real>(leads[i]);
  return Tensor::from_data({kLeads, n_samples}, std::move(d));
}

void EcgRecord::validate() const {
  if (static_cast<int64_t>(leads.size()) != kLeads * n_samples)
    throw ValueError("record " + id + ": sample buffer size mismatch");
  if (static_cast<real>(n_samples) < 2.0 * static_cast<real>(fs))
    throw ValueError("record " + id + ": shorter than 2 seconds");
  if (label_mask >> kClasses)
    throw ValueError("record " + id + ": label mask uses more than 25 bits");
}

namespace {
constexpr uint16_t kRecordVersion = 1;
}

std::string encode_record(const EcgRecord& rec) {
  rec.validate();
  ByteWriter w;
  w.str("ECGR");
  w.u16(kRecordVersion);
  w.u16(static_cast<uint16_t>(rec.id.size()));
  w.str(rec.id);
  w.f32(rec.fs);
  w.u8(static_cast<uint8_t>(EcgRecord::kLeads));
  w.u32(static_cast<uint32_t>(rec.n_samples));
  w.u32(rec.label_mask);
  for (float v : rec.leads) w.f32(v);
  return w.buffer();
}

EcgRecord decode_record(const std::string& bytes) {
  ByteReader r(bytes);
  if (r.str(4) != "ECGR") throw FormatError("bad record magic", 0);
  const uint16_t version = r.u16();
  if (version != kRecordVersion)
    throw FormatError("unsupported record version " + std::to_string(version), 4);
  EcgRecord rec;
  const uint16_t id_len = r.u16();
  rec.id = r.str(id_len);
  rec.fs = r.f32();
  const size_t lead_offset = r.offset();
  const uint8_t n_leads = r.u8();
  if (n_leads != EcgRecord::kLeads)
    throw FormatError("expected 12 leads, got " + std::to_string(n_leads),
                      lead_offset);
  rec.n_samples = r.u32();
  rec.label_mask = r.u32();
  if (rec.label_mask >> EcgRecord::kClasses)
    throw FormatError("label mask uses more than 25 bits", r.offset() - 4);
  rec.leads.resize(static_cast<size_t>(EcgRecord::kLeads * rec.n_samples));
  for (float& v : rec.leads) v = r.f32();
  if (r.remaining() != 0) r.fail("trailing bytes after record payload");
  return rec;
}

void write_record(const std::filesystem::path& path, const EcgRecord& rec) {
  atomic_write_file(path, encode_record(rec));
}

EcgRecord read_record(const std::filesystem::path& path) {
  return decode_record(read_file(path));
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

std::vector<ClassProfile> default_profiles(int64_t n_classes) {
  std::vector<ClassProfile> profiles;
  profiles.reserve(static_cast<size_t>(n_classes));
  for (int64_t c = 0; c < n_classes; ++c) {
    ClassProfile p;
    p.rate_bpm = 55.0 + 20.0 * static_cast<real>(c % 5);
    p.qrs_width_s = 0.05 + 0.025 * static_cast<real>(c / 5);
    p.amplitude = 0.8 + 0.1 * static_cast<real>(c % 3);
    profiles.push_back(p);
  }
  return profiles;
}

void SynthConfig::validate() const {
  if (n_records <= 0) throw ValueError("gen_synthetic: n_records must be > 0");
  if (n_active_classes < 1 || n_active_classes > EcgRecord::kClasses)
    throw ValueError("gen_synthetic: n_active_classes must be in [1, 25]");
  if (!(fs > 0.0) || !(duration_s >= 2.0))
    throw ValueError("gen_synthetic: need fs > 0 and duration >= 2 s");
  if (noise_sigma < 0.0) throw ValueError("gen_synthetic: noise_sigma >= 0");
  if (p_second_label < 0.0 || p_second_label > 1.0)
    throw ValueError("gen_synthetic: p_second_label must be in [0, 1]");
  if (!profiles.empty() &&
      static_cast<int64_t>(profiles.size()) < n_active_classes)
    throw ValueError("gen_synthetic: fewer profiles than active classes");
}

namespace {

ClassProfile combined_profile(const std::vector<ClassProfile>& profiles,
                              uint32_t mask) {
  const ClassProfile& base = profiles[0];
  ClassProfile out = base;
  for (size_t c = 0; c < profiles.size(); ++c) {
    if (!((mask >> c) & 1u)) continue;
    out.rate_bpm += profiles[c].rate_bpm - base.rate_bpm;
    out.qrs_width_s += profiles[c].qrs_width_s - base.qrs_width_s;
    out.amplitude += profiles[c].amplitude - base.amplitude;
  }
  out.rate_bpm = std::clamp<real>(out.rate_bpm, 30.0, 220.0);
  out.qrs_width_s = std::clamp<real>(out.qrs_width_s, 0.02, 0.3);
  out.amplitude = std::clamp<real>(out.amplitude, 0.1, 3.0);
  return out;
}

// One beat period as samples: P, QRS and T bumps, wrapped so the template is
// exactly periodic.
std::vector<real> beat_template(const ClassProfile& p, real fs,
                                int64_t period) {
  struct Bump {
    real center_frac, width_s, amp;
  };
  const Bump bumps[3] = {
      {0.30, 0.05, 0.15 * p.amplitude},
      {0.50, p.qrs_width_s, 1.00 * p.amplitude},
      {0.75, 0.12, 0.30 * p.amplitude},
  };
  std::vector<real> tpl(static_cast<size_t>(period), 0.0);
  for (const Bump& b : bumps) {
    const real center = b.center_frac * static_cast<real>(period);
    const real sigma = std::max(1.0, b.width_s * fs / 2.0);
    for (int64_t i = 0; i < period; ++i) {
      real acc = 0.0;
      for (int wrap = -1; wrap <= 1; ++wrap) {
        const real d =
            (static_cast<real>(i) + static_cast<real>(wrap) * static_cast<real>(period) - center) /
            sigma;
        acc += std::exp(-0.5 * d * d);
      }
      tpl[static_cast<size_t>(i)] += b.amp * acc;
    }
  }
  return tpl;
}

}  // namespace

int64_t synth_period_samples(const SynthConfig& cfg, uint32_t label_mask) {
  const auto profiles =
      cfg.profiles.empty() ? default_profiles(cfg.n_active_classes) : cfg.profiles;
  const ClassProfile p = combined_profile(profiles, label_mask);
  return std::max<int64_t>(4, static_cast<int64_t>(std::llround(
                                  cfg.fs * 60.0 / p.rate_bpm)));
}

std::vector<EcgRecord> gen_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const auto profiles =
      cfg.profiles.empty() ? default_profiles(cfg.n_active_classes) : cfg.profiles;
  const int64_t n_samples =
      static_cast<int64_t>(std::llround(cfg.fs * cfg.duration_s));

  std::vector<EcgRecord> out;
  out.reserve(static_cast<size_t>(cfg.n_records));
  for (int64_t r = 0; r < cfg.n_records; ++r) {
    Rng rng(derive_seed(cfg.seed, 0x5ec0u, static_cast<uint64_t>(r)));
    uint32_t mask = 1u << rng.uniform_int(0, cfg.n_active_classes - 1);
    if (cfg.n_active_classes > 1 && rng.uniform() < cfg.p_second_label) {
      uint32_t extra;
      do {
        extra = 1u << rng.uniform_int(0, cfg.n_active_classes - 1);
      } while (extra == mask);
      mask |= extra;
    }
    const ClassProfile p = combined_profile(profiles, mask);
    const int64_t period = std::max<int64_t>(
        4, static_cast<int64_t>(std::llround(cfg.fs * 60.0 / p.rate_bpm)));
    const std::vector<real> tpl = beat_template(p, cfg.fs, period);

    EcgRecord rec;
    char idbuf[24];
    std::snprintf(idbuf, sizeof(idbuf), "rec%06lld", static_cast<long long>(r));
    rec.id = idbuf;
    rec.fs = static_cast<float>(cfg.fs);
    rec.n_samples = n_samples;
    rec.label_mask = mask;
    rec.leads.resize(static_cast<size_t>(EcgRecord::kLeads * n_samples));
    for (int64_t l = 0; l < EcgRecord::kLeads; ++l) {
      const real lead_gain =
          0.6 + 0.4 * std::cos(2.0 * M_PI * static_cast<real>(l) / 12.0);
      for (int64_t i = 0; i < n_samples; ++i) {
        real v = lead_gain * tpl[static_cast<size_t>(i % period)];
        if (cfg.noise_sigma > 0.0) v += rng.normal(0.0, cfg.noise_sigma);
        rec.leads[static_cast<size_t>(l * n_samples + i)] =
            static_cast<float>(v);
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fold construction
// ---------------------------------------------------------------------------

std::vector<std::vector<int64_t>> FoldPlan::index_folds(
    const std::vector<EcgRecord>& records) const {
  std::map<std::string, int64_t> by_id;
  for (size_t i = 0; i < records.size(); ++i)
    by_id[records[i].id] = static_cast<int64_t>(i);
  std::vector<std::vector<int64_t>> out(folds.size());
  for (size_t f = 0; f < folds.size(); ++f) {
    for (const auto& id : folds[f]) {
      auto it = by_id.find(id);
      if (it == by_id.end())
        throw ValueError("fold plan references unknown record " + id);
      out[f].push_back(it->second);
    }
  }
  return out;
}

void FoldPlan::validate(const std::vector<EcgRecord>& records) const {
  std::set<std::string> seen;
  size_t total = 0;
  for (const auto& fold : folds) {
    for (const auto& id : fold) {
      if (!seen.insert(id).second)
        throw ValueError("fold plan: record " + id + " appears twice");
      ++total;
    }
  }
  if (total != records.size())
    throw ValueError("fold plan: does not cover the dataset");
}

FoldPlan make_folds(const std::vector<EcgRecord>& records, int64_t k,
                    uint64_t seed) {
  if (k < 2) throw ValueError("make_folds: k must be >= 2");
  if (records.empty()) throw ValueError("make_folds: empty dataset");
  const int64_t n = static_cast<int64_t>(records.size());
  const int64_t C = EcgRecord::kClasses;

  Rng rng(derive_seed(seed, 0xf01d5u));
  std::vector<int64_t> visit(static_cast<size_t>(n));
  std::iota(visit.begin(), visit.end(), 0);
  for (int64_t j = n - 1; j > 0; --j)
    std::swap(visit[static_cast<size_t>(j)],
              visit[static_cast<size_t>(rng.uniform_int(0, j))]);
  std::vector<int64_t> fold_priority(static_cast<size_t>(k));
  std::iota(fold_priority.begin(), fold_priority.end(), 0);
  for (int64_t j = k - 1; j > 0; --j)
    std::swap(fold_priority[static_cast<size_t>(j)],
              fold_priority[static_cast<size_t>(rng.uniform_int(0, j))]);

  // Remaining per-fold need per class, seeded with the proportional share.
  std::vector<std::vector<real>> need(static_cast<size_t>(k),
                                      std::vector<real>(static_cast<size_t>(C), 0.0));
  for (int64_t c = 0; c < C; ++c) {
    int64_t pos = 0;
    for (const auto& r : records) pos += r.has_label(c) ? 1 : 0;
    for (int64_t f = 0; f < k; ++f)
      need[static_cast<size_t>(f)][static_cast<size_t>(c)] =
          static_cast<real>(pos) / static_cast<real>(k);
  }
  std::vector<int64_t> fold_size(static_cast<size_t>(k), 0);
  std::vector<int> assigned(static_cast<size_t>(n), -1);

  auto pick_fold = [&](int64_t cls) {
    int64_t best = -1;
    for (int64_t pf = 0; pf < k; ++pf) {
      const int64_t f = fold_priority[static_cast<size_t>(pf)];
      if (best < 0) {
        best = f;
        continue;
      }
      const real nf = cls >= 0 ? need[static_cast<size_t>(f)][static_cast<size_t>(cls)] : 0.0;
      const real nb = cls >= 0 ? need[static_cast<size_t>(best)][static_cast<size_t>(cls)] : 0.0;
      if (nf > nb ||
          (nf == nb && fold_size[static_cast<size_t>(f)] <
                           fold_size[static_cast<size_t>(best)]))
        best = f;
    }
    return best;
  };

  auto assign = [&](int64_t rec_idx, int64_t fold) {
    assigned[static_cast<size_t>(rec_idx)] = static_cast<int>(fold);
    ++fold_size[static_cast<size_t>(fold)];
    for (int64_t c = 0; c < C; ++c)
      if (records[static_cast<size_t>(rec_idx)].has_label(c))
        need[static_cast<size_t>(fold)][static_cast<size_t>(c)] -= 1.0;
  };

  int64_t remaining = n;
  while (remaining > 0) {
    // Rarest label among unassigned records.
    std::vector<int64_t> count(static_cast<size_t>(C), 0);
    for (int64_t i = 0; i < n; ++i) {
      if (assigned[static_cast<size_t>(i)] >= 0) continue;
      for (int64_t c = 0; c < C; ++c)
        if (records[static_cast<size_t>(i)].has_label(c))
          ++count[static_cast<size_t>(c)];
    }
    int64_t rare = -1;
    for (int64_t c = 0; c < C; ++c) {
      if (count[static_cast<size_t>(c)] == 0) continue;
      if (rare < 0 || count[static_cast<size_t>(c)] < count[static_cast<size_t>(rare)])
        rare = c;
    }
    if (rare < 0) {
      // Only unlabeled records remain: balance by fold size.
      for (int64_t i : visit) {
        if (assigned[static_cast<size_t>(i)] >= 0) continue;
        int64_t best = fold_priority[0];
        for (int64_t pf = 0; pf < k; ++pf) {
          const int64_t f = fold_priority[static_cast<size_t>(pf)];
          if (fold_size[static_cast<size_t>(f)] <
              fold_size[static_cast<size_t>(best)])
            best = f;
        }
        assign(i, best);
        --remaining;
      }
      break;
    }
    for (int64_t i : visit) {
      if (assigned[static_cast<size_t>(i)] >= 0) continue;
      if (!records[static_cast<size_t>(i)].has_label(rare)) continue;
      assign(i, pick_fold(rare));
      --remaining;
    }
  }

  FoldPlan plan;
  plan.folds.assign(static_cast<size_t>(k), {});
  for (int64_t i = 0; i < n; ++i)
    plan.folds[static_cast<size_t>(assigned[static_cast<size_t>(i)])].push_back(
        records[static_cast<size_t>(i)].id);
  plan.validate(records);
  return plan;
}

// ---------------------------------------------------------------------------
// Dataset directory
// ---------------------------------------------------------------------------

void save_dataset(const std::filesystem::path& dir,
                  const std::vector<EcgRecord>& records) {
  std::filesystem::create_directories(dir / "records");
  for (const auto& rec : records)
    write_record(dir / "records" / (rec.id + ".ecgr"), rec);
  write_labels_csv(dir / "labels.csv", dataset_labels(records));
  write_reward_csv(dir / "reward.csv",
                   RewardMatrix::synthetic_default(EcgRecord::kClasses));
}

std::vector<EcgRecord> load_dataset(const std::filesystem::path& dir) {
  const auto rec_dir = dir / "records";
  if (!std::filesystem::is_directory(rec_dir))
    throw ConfigError("dataset directory missing: " + rec_dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(rec_dir))
    if (e.path().extension() == ".ecgr") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .ecgr records in " + rec_dir.string());
  std::vector<EcgRecord> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_record(f));
  return out;
}

LabelTable dataset_labels(const std::vector<EcgRecord>& records) {
  LabelTable t;
  t.labels.rows = static_cast<int64_t>(records.size());
  t.labels.cols = EcgRecord::kClasses;
  for (const auto& rec : records) {
    t.ids.push_back(rec.id);
    for (int64_t c = 0; c < EcgRecord::kClasses; ++c)
      t.labels.v.push_back(rec.has_label(c) ? 1 : 0);
  }
  return t;
}

}  // namespace ecgssl
