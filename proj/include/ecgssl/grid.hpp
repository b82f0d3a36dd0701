#pragma once

#include <filesystem>
#include <functional>

#include "ecgssl/config.hpp"

namespace ecgssl {

struct CellResult {
  std::string name;
  MetricReport mean;  // averaged over folds
  std::vector<MetricReport> per_fold;
  bool failed = false;
  std::string error;
};

struct GridResult {
  // Rows T, S, TSC, TSG, SSL-T, SSL-S, SSL-TSC, SSL-TSG.
  std::vector<CellResult> table2;
  // Per-modality pre-training transformation sweep:
  // time x {baseline, tc, gn, composed}, timefreq x {baseline, tc, fc, composed}.
  std::vector<CellResult> fig3;
};

// Number of worker threads: hardware concurrency capped by ECGSSL_THREADS.
int grid_threads();

// Runs body(0..n-1) on the worker pool; exceptions propagate after joining.
void parallel_for(int64_t n, const std::function<void(int64_t)>& body);

// Executes the full ablation grid with shared pre-training checkpoints and
// ten-fold cross-validation per cell. Emits table2.csv, fig3.csv, the SSL
// checkpoints and per-fold prediction CSVs under out_dir. A failing cell is
// recorded (NaN row) and the grid continues.
GridResult run_grid(const RunConfig& cfg, const std::vector<EcgRecord>& records,
                    const std::filesystem::path& out_dir, bool run_fig3 = true);

void write_table2_csv(const std::filesystem::path& path,
                      const std::vector<CellResult>& cells);
void write_fig3_csv(const std::filesystem::path& path,
                    const std::vector<CellResult>& cells);

}  // namespace ecgssl
