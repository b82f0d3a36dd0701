#include "ecgssl/grid.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "ecgssl/io.hpp"

namespace ecgssl {

int grid_threads() {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("ECGSSL_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1 && static_cast<unsigned>(cap) < hw) hw = static_cast<unsigned>(cap);
  }
  return static_cast<int>(hw);
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& body) {
  const int workers = std::min<int64_t>(grid_threads(), n);
  if (workers <= 1) {
    for (int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int64_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      while (true) {
        const int64_t i = next.fetch_add(1);
        if (i >= n || failed.load()) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(error_mutex);
          if (!first_error) first_error = std::current_exception();
          failed.store(true);
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

namespace {

std::vector<CheckpointEntry> state_to_entries(
    const std::vector<NamedTensor>& state) {
  std::vector<CheckpointEntry> out;
  out.reserve(state.size());
  for (const auto& nt : state) {
    CheckpointEntry e;
    e.name = nt.name;
    e.shape = nt.tensor.shape();
    // Round through float32 exactly as checkpoint serialization would.
    e.values.reserve(nt.tensor.data().size());
    for (real v : nt.tensor.data())
      e.values.push_back(static_cast<real>(static_cast<float>(v)));
    out.push_back(std::move(e));
  }
  return out;
}

MetricReport mean_report(const std::vector<MetricReport>& reports) {
  MetricReport m;
  if (reports.empty()) return m;
  for (const auto& r : reports) {
    m.auroc += r.auroc;
    m.auprc += r.auprc;
    m.acc += r.acc;
    m.f1 += r.f1;
    m.f2 += r.f2;
    m.g2 += r.g2;
    m.chm += r.chm;
    m.auroc_excluded += r.auroc_excluded;
    m.auprc_excluded += r.auprc_excluded;
  }
  const real n = static_cast<real>(reports.size());
  m.auroc /= n;
  m.auprc /= n;
  m.acc /= n;
  m.f1 /= n;
  m.f2 /= n;
  m.g2 /= n;
  m.chm /= n;
  return m;
}

struct PretrainJob {
  std::string tag;       // checkpoint key
  Modality modality;
  bool cutout, noise, freq_cutout;
};

struct FinetuneCell {
  std::string name;
  Variant variant;
  std::string ckpt_time;  // pretrain tag, empty: random init
  std::string ckpt_freq;
  bool fig3 = false;
};

MetricReport nan_report() {
  MetricReport m;
  const real q = std::nan("");
  m.auroc = m.auprc = m.acc = m.f1 = m.f2 = m.g2 = m.chm = q;
  return m;
}

}  // namespace

GridResult run_grid(const RunConfig& cfg, const std::vector<EcgRecord>& records,
                    const std::filesystem::path& out_dir, bool run_fig3) {
  if (records.empty()) throw ConfigError("grid: empty dataset");
  std::filesystem::create_directories(out_dir);
  const RewardMatrix rw = cfg.reward_matrix();

  FoldPlan plan = make_folds(records, cfg.folds, cfg.seed);
  const auto fold_idx = plan.index_folds(records);

  std::vector<Tensor> leads;
  std::vector<std::vector<real>> labels;
  leads.reserve(records.size());
  for (const auto& r : records) {
    leads.push_back(r.leads_tensor());
    labels.push_back(r.label_vector());
  }
  const LabelTable label_table = dataset_labels(records);

  // Shared spectrogram cache for every frequency-branch consumer.
  std::vector<Tensor> specs(records.size());
  {
    StftConfig stft_cfg = cfg.stft;
    parallel_for(static_cast<int64_t>(records.size()), [&](int64_t i) {
      specs[static_cast<size_t>(i)] =
          spectrogram(leads[static_cast<size_t>(i)], stft_cfg).values;
    });
  }

  // ---- phase 1: pre-training ----------------------------------------------
  std::vector<PretrainJob> pjobs = {
      {"time-composed", Modality::kTime, true, true, true},
      {"timefreq-composed", Modality::kTimeFreq, true, true, true},
  };
  if (run_fig3) {
    pjobs.push_back({"time-baseline", Modality::kTime, false, false, false});
    pjobs.push_back({"time-tc", Modality::kTime, true, false, false});
    pjobs.push_back({"time-gn", Modality::kTime, false, true, false});
    pjobs.push_back({"timefreq-baseline", Modality::kTimeFreq, false, false, false});
    pjobs.push_back({"timefreq-tc", Modality::kTimeFreq, true, false, false});
    pjobs.push_back({"timefreq-fc", Modality::kTimeFreq, false, false, true});
  }

  std::map<std::string, std::vector<CheckpointEntry>> checkpoints;
  for (const auto& j : pjobs) checkpoints[j.tag] = {};
  parallel_for(static_cast<int64_t>(pjobs.size()), [&](int64_t i) {
    const PretrainJob& job = pjobs[static_cast<size_t>(i)];
    PretrainConfig pc = cfg.pretrain_config(job.modality);
    pc.augment.enable_time_cutout = job.cutout;
    pc.augment.enable_noise = job.noise;
    pc.augment.enable_freq_cutout = job.freq_cutout;
    PretrainResult res = pretrain_modality(
        leads, job.modality, pc,
        job.modality == Modality::kTimeFreq ? &specs : nullptr);
    checkpoints[job.tag] = state_to_entries(res.student_state);
    save_checkpoint(out_dir / ("ssl_" + job.tag + ".etck"), res.student_state);
  });

  // ---- phase 2: fine-tuning cells -----------------------------------------
  std::vector<FinetuneCell> cells = {
      {"T", Variant::kT, "", "", false},
      {"S", Variant::kS, "", "", false},
      {"TSC", Variant::kTSC, "", "", false},
      {"TSG", Variant::kTSG, "", "", false},
      {"SSL-T", Variant::kT, "time-composed", "", false},
      {"SSL-S", Variant::kS, "", "timefreq-composed", false},
      {"SSL-TSC", Variant::kTSC, "time-composed", "timefreq-composed", false},
      {"SSL-TSG", Variant::kTSG, "time-composed", "timefreq-composed", false},
  };
  if (run_fig3) {
    for (const char* t : {"baseline", "tc", "gn", "composed"})
      cells.push_back({std::string("fig3-time-") + t, Variant::kT,
                       std::string("time-") + t, "", true});
    for (const char* t : {"baseline", "tc", "fc", "composed"})
      cells.push_back({std::string("fig3-timefreq-") + t, Variant::kS, "",
                       std::string("timefreq-") + t, true});
  }

  const int64_t k = static_cast<int64_t>(fold_idx.size());
  struct JobOut {
    MetricReport report;
    bool failed = false;
    std::string error;
  };
  std::vector<JobOut> outputs(static_cast<size_t>(cells.size()) *
                              static_cast<size_t>(k));

  parallel_for(static_cast<int64_t>(cells.size()) * k, [&](int64_t jid) {
    const int64_t cell_id = jid / k;
    const int64_t fold = jid % k;
    const FinetuneCell& cell = cells[static_cast<size_t>(cell_id)];
    JobOut& out = outputs[static_cast<size_t>(jid)];
    try {
      FinetuneConfig fc = cfg.finetune_config(cell.variant);
      fc.seed = derive_seed(cfg.seed, 0xce11u + static_cast<uint64_t>(cell_id),
                            static_cast<uint64_t>(fold));
      std::vector<int64_t> train_idx, val_idx = fold_idx[static_cast<size_t>(fold)];
      for (int64_t f = 0; f < k; ++f)
        if (f != fold)
          train_idx.insert(train_idx.end(), fold_idx[static_cast<size_t>(f)].begin(),
                           fold_idx[static_cast<size_t>(f)].end());

      std::optional<std::vector<CheckpointEntry>> ck_t, ck_f;
      if (!cell.ckpt_time.empty()) ck_t = checkpoints.at(cell.ckpt_time);
      if (!cell.ckpt_freq.empty()) ck_f = checkpoints.at(cell.ckpt_freq);

      FinetuneResult res = finetune(leads, labels, train_idx, val_idx, ck_t,
                                    ck_f, fc, &specs);

      PredictionTable table;
      for (int64_t i : res.val_indices)
        table.ids.push_back(records[static_cast<size_t>(i)].id);
      table.probs.rows = static_cast<int64_t>(res.val_indices.size());
      table.probs.cols = fc.n_classes;
      table.probs.v = res.val_prediction.probabilities.data();
      table.decisions.rows = table.probs.rows;
      table.decisions.cols = fc.n_classes;
      table.decisions.v = res.val_prediction.decisions;
      write_predictions_csv(out_dir / "cells" / cell.name /
                                ("fold" + std::to_string(fold) + "_preds.csv"),
                            table);

      const LabelMatrix fold_labels = align_labels(table, label_table);
      out.report = compute_metrics(table.probs, table.decisions, fold_labels, rw);
    } catch (const std::exception& e) {
      out.failed = true;
      out.error = e.what();
    }
  });

  GridResult result;
  for (size_t c = 0; c < cells.size(); ++c) {
    CellResult cr;
    cr.name = cells[c].name;
    for (int64_t f = 0; f < k; ++f) {
      const JobOut& o = outputs[c * static_cast<size_t>(k) + static_cast<size_t>(f)];
      if (o.failed) {
        cr.failed = true;
        if (!cr.error.empty()) cr.error += "; ";
        cr.error += "fold " + std::to_string(f) + ": " + o.error;
      } else {
        cr.per_fold.push_back(o.report);
      }
    }
    cr.mean = cr.failed && cr.per_fold.empty() ? nan_report()
                                               : mean_report(cr.per_fold);
    if (cr.failed) {
      atomic_write_file(out_dir / "cells" / cr.name / "error.txt", cr.error + "\n");
      cr.mean = nan_report();
    }
    if (cells[c].fig3)
      result.fig3.push_back(std::move(cr));
    else
      result.table2.push_back(std::move(cr));
  }

  write_table2_csv(out_dir / "table2.csv", result.table2);
  if (run_fig3) write_fig3_csv(out_dir / "fig3.csv", result.fig3);
  return result;
}

namespace {

std::string metric_cols(const MetricReport& m) {
  std::ostringstream out;
  out << format_metric(m.auroc) << "," << format_metric(m.auprc) << ","
      << format_metric(m.acc) << "," << format_metric(m.f1) << ","
      << format_metric(m.f2) << "," << format_metric(m.g2) << ","
      << format_metric(m.chm);
  return out.str();
}

}  // namespace

void write_table2_csv(const std::filesystem::path& path,
                      const std::vector<CellResult>& cells) {
  std::ostringstream out;
  out << "model,AUROC,AUPRC,Acc,F1,F2,G2,ChM\n";
  for (const auto& c : cells) out << c.name << "," << metric_cols(c.mean) << "\n";
  atomic_write_file(path, out.str());
}

void write_fig3_csv(const std::filesystem::path& path,
                    const std::vector<CellResult>& cells) {
  std::ostringstream out;
  out << "modality,transform,AUROC,AUPRC,Acc,F1,F2,G2,ChM\n";
  for (const auto& c : cells) {
    // names look like fig3-time-baseline
    std::string rest = c.name.substr(5);
    const size_t dash = rest.find('-');
    out << rest.substr(0, dash) << "," << rest.substr(dash + 1) << ","
        << metric_cols(c.mean) << "\n";
  }
  atomic_write_file(path, out.str());
}

}  // namespace ecgssl
