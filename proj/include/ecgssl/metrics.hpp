#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ecgssl/common.hpp"

namespace ecgssl {

struct ScoreMatrix {
  int64_t rows = 0, cols = 0;
  std::vector<real> v;  // row-major
  real at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }
};

struct LabelMatrix {
  int64_t rows = 0, cols = 0;
  std::vector<uint8_t> v;  // row-major, 0/1
  uint8_t at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }
};

// Pairwise class reward weights for the challenge metric. Diagonal is 1 and
// the matrix is symmetric; off-diagonal entries give partial credit for
// clinically similar classes.
struct RewardMatrix {
  std::vector<std::string> classes;
  std::vector<real> w;  // n x n, row-major
  int64_t normal_index = 0;

  int64_t size() const { return static_cast<int64_t>(classes.size()); }
  real at(int64_t i, int64_t j) const { return w[static_cast<size_t>(i * size() + j)]; }
  void validate() const;

  // Identity rewards plus 0.5 for consecutive sibling pairs (1,2), (3,4), ...
  // Ships as the test-time default; real deployments load a CSV.
  static RewardMatrix synthetic_default(int64_t n_classes, int64_t normal_index = 0);
};

RewardMatrix load_reward_csv(const std::filesystem::path& path,
                             const std::string& normal_code);
void write_reward_csv(const std::filesystem::path& path, const RewardMatrix& rw);

struct MetricReport {
  real auroc = 0, auprc = 0, acc = 0, f1 = 0, f2 = 0, g2 = 0, chm = 0;
  int64_t auroc_excluded = 0;  // classes without both label values
  int64_t auprc_excluded = 0;  // classes without a positive
};

// Macro AUROC via the Mann-Whitney statistic, ties counted 1/2. Classes
// missing a positive or a negative are excluded from the mean; if every
// class is excluded the metric is undefined.
real auroc_macro(const ScoreMatrix& scores, const LabelMatrix& labels,
                 int64_t* excluded = nullptr);

// Macro area under the precision-recall curve: step-wise sum of precision
// at each recall increment over descending score thresholds. Classes with
// no positive are excluded.
real auprc_macro(const ScoreMatrix& scores, const LabelMatrix& labels,
                 int64_t* excluded = nullptr);

// Macro F-beta / G-beta from per-class counts; a class with an empty
// denominator contributes 0.
real fbeta_macro(const LabelMatrix& decisions, const LabelMatrix& labels, real beta);
real gbeta_macro(const LabelMatrix& decisions, const LabelMatrix& labels, real beta);

// Exact-match (subset) accuracy: a record counts only when every decision
// bit equals the label bit.
real subset_accuracy(const LabelMatrix& decisions, const LabelMatrix& labels);

// Challenge score: reward-weighted generalized confusion, normalized so
// that an always-normal classifier scores 0 and a perfect one scores 1.
real challenge_metric(const LabelMatrix& decisions, const LabelMatrix& labels,
                      const RewardMatrix& rw);

MetricReport compute_metrics(const ScoreMatrix& scores,
                             const LabelMatrix& decisions,
                             const LabelMatrix& labels, const RewardMatrix& rw);

// --- CSV interfaces ---------------------------------------------------------

std::string class_code(int64_t i);  // c00, c01, ...

struct PredictionTable {
  std::vector<std::string> ids;
  ScoreMatrix probs;
  LabelMatrix decisions;
};

struct LabelTable {
  std::vector<std::string> ids;
  LabelMatrix labels;
};

void write_predictions_csv(const std::filesystem::path& path,
                           const PredictionTable& table);
PredictionTable read_predictions_csv(const std::filesystem::path& path);
void write_labels_csv(const std::filesystem::path& path, const LabelTable& table);
LabelTable read_labels_csv(const std::filesystem::path& path);

// Reorders `labels` rows to match the prediction ids; throws when an id is
// missing from the label table.
LabelMatrix align_labels(const PredictionTable& preds, const LabelTable& labels);

std::string metric_report_header();
std::string metric_report_row(const MetricReport& r);
void write_report_csv(const std::filesystem::path& path, const MetricReport& r);

}  // namespace ecgssl
