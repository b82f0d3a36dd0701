#include "ecgssl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "ecgssl/io.hpp"

namespace ecgssl {

namespace {

void require_aligned(const LabelMatrix& a, const LabelMatrix& b,
                     const char* op) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw ShapeError(std::string(op) + ": matrix dimensions disagree");
}

}  // namespace

// ---------------------------------------------------------------------------
// RewardMatrix
// ---------------------------------------------------------------------------

void RewardMatrix::validate() const {
  const int64_t n = size();
  if (n < 1) throw ValueError("reward matrix: empty");
  if (static_cast<int64_t>(w.size()) != n * n)
    throw ValueError("reward matrix: not square");
  if (normal_index < 0 || normal_index >= n)
    throw ValueError("reward matrix: normal class index out of range");
  for (int64_t i = 0; i < n; ++i) {
    if (at(i, i) != 1.0)
      throw ValueError("reward matrix: diagonal must be 1 at " + classes[static_cast<size_t>(i)]);
    for (int64_t j = 0; j < n; ++j) {
      if (at(i, j) != at(j, i))
        throw ValueError("reward matrix: not symmetric at (" + std::to_string(i) +
                         "," + std::to_string(j) + ")");
      if (at(i, j) < 0.0 || at(i, j) > 1.0)
        throw ValueError("reward matrix: entries must lie in [0,1]");
    }
  }
}

RewardMatrix RewardMatrix::synthetic_default(int64_t n_classes,
                                             int64_t normal_index) {
  RewardMatrix rw;
  rw.normal_index = normal_index;
  for (int64_t i = 0; i < n_classes; ++i) rw.classes.push_back(class_code(i));
  rw.w.assign(static_cast<size_t>(n_classes * n_classes), 0.0);
  for (int64_t i = 0; i < n_classes; ++i)
    rw.w[static_cast<size_t>(i * n_classes + i)] = 1.0;
  for (int64_t a = 1; a + 1 < n_classes; a += 2) {
    rw.w[static_cast<size_t>(a * n_classes + a + 1)] = 0.5;
    rw.w[static_cast<size_t>((a + 1) * n_classes + a)] = 0.5;
  }
  rw.validate();
  return rw;
}

RewardMatrix load_reward_csv(const std::filesystem::path& path,
                             const std::string& normal_code) {
  auto rows = read_csv(path);
  if (rows.size() < 2) throw FormatError("reward csv: too few rows", 0);
  RewardMatrix rw;
  const auto& header = rows[0];
  for (size_t j = 1; j < header.size(); ++j) rw.classes.push_back(header[j]);
  const int64_t n = rw.size();
  if (static_cast<int64_t>(rows.size()) != n + 1)
    throw FormatError("reward csv: expected " + std::to_string(n) + " data rows", 0);
  rw.w.assign(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<size_t>(i + 1)];
    if (static_cast<int64_t>(row.size()) != n + 1)
      throw FormatError("reward csv: ragged row " + std::to_string(i + 1), 0);
    if (row[0] != rw.classes[static_cast<size_t>(i)])
      throw FormatError("reward csv: row/column class order differs", 0);
    for (int64_t j = 0; j < n; ++j)
      rw.w[static_cast<size_t>(i * n + j)] = std::stod(row[static_cast<size_t>(j + 1)]);
  }
  auto it = std::find(rw.classes.begin(), rw.classes.end(), normal_code);
  if (it == rw.classes.end())
    throw ValueError("reward csv: normal class " + normal_code + " not present");
  rw.normal_index = it - rw.classes.begin();
  rw.validate();
  return rw;
}

void write_reward_csv(const std::filesystem::path& path, const RewardMatrix& rw) {
  std::ostringstream out;
  out << "class";
  for (const auto& c : rw.classes) out << "," << c;
  out << "\n";
  const int64_t n = rw.size();
  for (int64_t i = 0; i < n; ++i) {
    out << rw.classes[static_cast<size_t>(i)];
    for (int64_t j = 0; j < n; ++j) out << "," << rw.at(i, j);
    out << "\n";
  }
  atomic_write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Ranking metrics
// ---------------------------------------------------------------------------

real auroc_macro(const ScoreMatrix& scores, const LabelMatrix& labels,
                 int64_t* excluded) {
  if (scores.rows != labels.rows || scores.cols != labels.cols)
    throw ShapeError("auroc: scores/labels dimensions disagree");
  const int64_t n = scores.rows, c = scores.cols;
  real total = 0.0;
  int64_t included = 0, skipped = 0;
  std::vector<std::pair<real, uint8_t>> col(static_cast<size_t>(n));
  for (int64_t j = 0; j < c; ++j) {
    int64_t pos = 0;
    for (int64_t i = 0; i < n; ++i) {
      col[static_cast<size_t>(i)] = {scores.at(i, j), labels.at(i, j)};
      pos += labels.at(i, j);
    }
    const int64_t neg = n - pos;
    if (pos == 0 || neg == 0) {
      ++skipped;
      continue;
    }
    std::sort(col.begin(), col.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    // 2U = sum over positives of (2*start_rank + tie_size - 1) - P(P+1),
    // with ascending 1-based ranks; integer arithmetic keeps ties exact.
    long long two_u = 0;
    int64_t i = 0;
    while (i < n) {
      int64_t k = i;
      while (k < n && col[static_cast<size_t>(k)].first == col[static_cast<size_t>(i)].first)
        ++k;
      const long long start_rank = i + 1;
      const long long tie = k - i;
      long long p_in_group = 0;
      for (int64_t t = i; t < k; ++t) p_in_group += col[static_cast<size_t>(t)].second;
      two_u += p_in_group * (2 * start_rank + tie - 1);
      i = k;
    }
    two_u -= static_cast<long long>(pos) * (pos + 1);
    total += static_cast<real>(two_u) / static_cast<real>(2 * pos * neg);
    ++included;
  }
  if (excluded) *excluded = skipped;
  if (included == 0)
    throw MetricError("auroc: no class has both a positive and a negative");
  return total / static_cast<real>(included);
}

real auprc_macro(const ScoreMatrix& scores, const LabelMatrix& labels,
                 int64_t* excluded) {
  if (scores.rows != labels.rows || scores.cols != labels.cols)
    throw ShapeError("auprc: scores/labels dimensions disagree");
  const int64_t n = scores.rows, c = scores.cols;
  real total = 0.0;
  int64_t included = 0, skipped = 0;
  std::vector<std::pair<real, uint8_t>> col(static_cast<size_t>(n));
  for (int64_t j = 0; j < c; ++j) {
    int64_t pos = 0;
    for (int64_t i = 0; i < n; ++i) {
      col[static_cast<size_t>(i)] = {scores.at(i, j), labels.at(i, j)};
      pos += labels.at(i, j);
    }
    if (pos == 0) {
      ++skipped;
      continue;
    }
    std::sort(col.begin(), col.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    real ap = 0.0, prev_recall = 0.0;
    int64_t tp = 0, fp = 0;
    int64_t i = 0;
    while (i < n) {
      int64_t k = i;
      while (k < n && col[static_cast<size_t>(k)].first == col[static_cast<size_t>(i)].first)
        ++k;
      for (int64_t t = i; t < k; ++t) {
        if (col[static_cast<size_t>(t)].second)
          ++tp;
        else
          ++fp;
      }
      const real recall = static_cast<real>(tp) / static_cast<real>(pos);
      const real precision = static_cast<real>(tp) / static_cast<real>(tp + fp);
      ap += (recall - prev_recall) * precision;
      prev_recall = recall;
      i = k;
    }
    total += ap;
    ++included;
  }
  if (excluded) *excluded = skipped;
  if (included == 0) throw MetricError("auprc: no class has a positive");
  return total / static_cast<real>(included);
}

// ---------------------------------------------------------------------------
// Count-based metrics
// ---------------------------------------------------------------------------

namespace {

struct Counts {
  int64_t tp = 0, fp = 0, fn = 0;
};

std::vector<Counts> per_class_counts(const LabelMatrix& decisions,
                                     const LabelMatrix& labels) {
  std::vector<Counts> counts(static_cast<size_t>(labels.cols));
  for (int64_t i = 0; i < labels.rows; ++i)
    for (int64_t j = 0; j < labels.cols; ++j) {
      const bool d = decisions.at(i, j) != 0;
      const bool y = labels.at(i, j) != 0;
      auto& c = counts[static_cast<size_t>(j)];
      if (d && y)
        ++c.tp;
      else if (d && !y)
        ++c.fp;
      else if (!d && y)
        ++c.fn;
    }
  return counts;
}

}  // namespace

real fbeta_macro(const LabelMatrix& decisions, const LabelMatrix& labels,
                 real beta) {
  require_aligned(decisions, labels, "fbeta");
  const real b2 = beta * beta;
  real total = 0.0;
  for (const Counts& c : per_class_counts(decisions, labels)) {
    const real denom = (1.0 + b2) * static_cast<real>(c.tp) +
                       static_cast<real>(c.fp) + b2 * static_cast<real>(c.fn);
    total += denom > 0.0 ? (1.0 + b2) * static_cast<real>(c.tp) / denom : 0.0;
  }
  return total / static_cast<real>(labels.cols);
}

real gbeta_macro(const LabelMatrix& decisions, const LabelMatrix& labels,
                 real beta) {
  require_aligned(decisions, labels, "gbeta");
  real total = 0.0;
  for (const Counts& c : per_class_counts(decisions, labels)) {
    const real denom = static_cast<real>(c.tp) + static_cast<real>(c.fp) +
                       beta * static_cast<real>(c.fn);
    total += denom > 0.0 ? static_cast<real>(c.tp) / denom : 0.0;
  }
  return total / static_cast<real>(labels.cols);
}

real subset_accuracy(const LabelMatrix& decisions, const LabelMatrix& labels) {
  require_aligned(decisions, labels, "accuracy");
  if (labels.rows == 0) throw MetricError("accuracy: no records");
  int64_t exact = 0;
  for (int64_t i = 0; i < labels.rows; ++i) {
    bool all = true;
    for (int64_t j = 0; j < labels.cols && all; ++j)
      all = decisions.at(i, j) == labels.at(i, j);
    exact += all ? 1 : 0;
  }
  return static_cast<real>(exact) / static_cast<real>(labels.rows);
}

// ---------------------------------------------------------------------------
// Challenge metric
// ---------------------------------------------------------------------------

namespace {

// Reward-weighted score of the generalized confusion matrix: each record
// contributes 1/N to every (true label, decided label) pair, with N the size
// of the union of its label and decision sets (at least 1).
real weighted_confusion_score(const LabelMatrix& decisions,
                              const LabelMatrix& labels, const RewardMatrix& rw) {
  const int64_t c = labels.cols;
  std::vector<real> a(static_cast<size_t>(c * c), 0.0);
  for (int64_t r = 0; r < labels.rows; ++r) {
    int64_t n_union = 0;
    for (int64_t j = 0; j < c; ++j)
      n_union += (labels.at(r, j) || decisions.at(r, j)) ? 1 : 0;
    const real inv = 1.0 / static_cast<real>(std::max<int64_t>(n_union, 1));
    for (int64_t i = 0; i < c; ++i) {
      if (!labels.at(r, i)) continue;
      for (int64_t j = 0; j < c; ++j)
        if (decisions.at(r, j)) a[static_cast<size_t>(i * c + j)] += inv;
    }
  }
  real s = 0.0;
  for (int64_t i = 0; i < c; ++i)
    for (int64_t j = 0; j < c; ++j)
      s += rw.at(i, j) * a[static_cast<size_t>(i * c + j)];
  return s;
}

}  // namespace

real challenge_metric(const LabelMatrix& decisions, const LabelMatrix& labels,
                      const RewardMatrix& rw) {
  require_aligned(decisions, labels, "challenge_metric");
  rw.validate();
  if (labels.cols != rw.size())
    throw ShapeError("challenge_metric: class count differs from reward matrix");

  LabelMatrix inactive;
  inactive.rows = labels.rows;
  inactive.cols = labels.cols;
  inactive.v.assign(labels.v.size(), 0);
  for (int64_t r = 0; r < labels.rows; ++r)
    inactive.v[static_cast<size_t>(r * labels.cols + rw.normal_index)] = 1;

  const real observed = weighted_confusion_score(decisions, labels, rw);
  const real s_true = weighted_confusion_score(labels, labels, rw);
  const real s_inactive = weighted_confusion_score(inactive, labels, rw);
  if (s_true == s_inactive)
    throw MetricError("challenge_metric: degenerate normalization");
  return (observed - s_inactive) / (s_true - s_inactive);
}

MetricReport compute_metrics(const ScoreMatrix& scores,
                             const LabelMatrix& decisions,
                             const LabelMatrix& labels, const RewardMatrix& rw) {
  MetricReport r;
  r.auroc = auroc_macro(scores, labels, &r.auroc_excluded);
  r.auprc = auprc_macro(scores, labels, &r.auprc_excluded);
  r.acc = subset_accuracy(decisions, labels);
  r.f1 = fbeta_macro(decisions, labels, 1.0);
  r.f2 = fbeta_macro(decisions, labels, 2.0);
  r.g2 = gbeta_macro(decisions, labels, 2.0);
  r.chm = challenge_metric(decisions, labels, rw);
  return r;
}

// ---------------------------------------------------------------------------
// CSV interfaces
// ---------------------------------------------------------------------------

std::string class_code(int64_t i) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "c%02d", static_cast<int>(i));
  return buf;
}

void write_predictions_csv(const std::filesystem::path& path,
                           const PredictionTable& table) {
  const int64_t c = table.probs.cols;
  std::ostringstream out;
  out << "record_id";
  for (int64_t j = 0; j < c; ++j) out << ",p_" << class_code(j);
  for (int64_t j = 0; j < c; ++j) out << ",d_" << class_code(j);
  out << "\n";
  for (size_t i = 0; i < table.ids.size(); ++i) {
    out << table.ids[i];
    for (int64_t j = 0; j < c; ++j)
      out << "," << format_metric(table.probs.at(static_cast<int64_t>(i), j));
    for (int64_t j = 0; j < c; ++j)
      out << "," << static_cast<int>(table.decisions.at(static_cast<int64_t>(i), j));
    out << "\n";
  }
  atomic_write_file(path, out.str());
}

PredictionTable read_predictions_csv(const std::filesystem::path& path) {
  auto rows = read_csv(path);
  if (rows.empty()) throw FormatError("predictions csv: empty", 0);
  const size_t width = rows[0].size();
  if (width < 3 || (width - 1) % 2 != 0)
    throw FormatError("predictions csv: bad column count", 0);
  const int64_t c = static_cast<int64_t>((width - 1) / 2);
  PredictionTable t;
  t.probs.cols = c;
  t.decisions.cols = c;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != width)
      throw FormatError("predictions csv: ragged row " + std::to_string(i), 0);
    t.ids.push_back(row[0]);
    for (int64_t j = 0; j < c; ++j)
      t.probs.v.push_back(std::stod(row[static_cast<size_t>(1 + j)]));
    for (int64_t j = 0; j < c; ++j) {
      const std::string& s = row[static_cast<size_t>(1 + c + j)];
      if (s != "0" && s != "1")
        throw FormatError("predictions csv: decision must be 0/1 in row " +
                          std::to_string(i), 0);
      t.decisions.v.push_back(s == "1" ? 1 : 0);
    }
  }
  t.probs.rows = static_cast<int64_t>(t.ids.size());
  t.decisions.rows = t.probs.rows;
  return t;
}

void write_labels_csv(const std::filesystem::path& path, const LabelTable& table) {
  const int64_t c = table.labels.cols;
  std::ostringstream out;
  out << "record_id";
  for (int64_t j = 0; j < c; ++j) out << "," << class_code(j);
  out << "\n";
  for (size_t i = 0; i < table.ids.size(); ++i) {
    out << table.ids[i];
    for (int64_t j = 0; j < c; ++j)
      out << "," << static_cast<int>(table.labels.at(static_cast<int64_t>(i), j));
    out << "\n";
  }
  atomic_write_file(path, out.str());
}

LabelTable read_labels_csv(const std::filesystem::path& path) {
  auto rows = read_csv(path);
  if (rows.empty()) throw FormatError("labels csv: empty", 0);
  const size_t width = rows[0].size();
  if (width < 2) throw FormatError("labels csv: bad column count", 0);
  LabelTable t;
  t.labels.cols = static_cast<int64_t>(width - 1);
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != width)
      throw FormatError("labels csv: ragged row " + std::to_string(i), 0);
    t.ids.push_back(row[0]);
    for (size_t j = 1; j < width; ++j) {
      if (row[j] != "0" && row[j] != "1")
        throw FormatError("labels csv: label must be 0/1 in row " +
                          std::to_string(i), 0);
      t.labels.v.push_back(row[j] == "1" ? 1 : 0);
    }
  }
  t.labels.rows = static_cast<int64_t>(t.ids.size());
  return t;
}

LabelMatrix align_labels(const PredictionTable& preds, const LabelTable& labels) {
  std::map<std::string, int64_t> index;
  for (size_t i = 0; i < labels.ids.size(); ++i)
    index[labels.ids[i]] = static_cast<int64_t>(i);
  LabelMatrix out;
  out.rows = static_cast<int64_t>(preds.ids.size());
  out.cols = labels.labels.cols;
  out.v.reserve(static_cast<size_t>(out.rows * out.cols));
  for (const auto& id : preds.ids) {
    auto it = index.find(id);
    if (it == index.end())
      throw ValueError("labels csv is missing record id: " + id);
    for (int64_t j = 0; j < out.cols; ++j)
      out.v.push_back(labels.labels.at(it->second, j));
  }
  return out;
}

std::string metric_report_header() {
  return "AUROC,AUPRC,Acc,F1,F2,G2,ChM,auroc_excluded,auprc_excluded";
}

std::string metric_report_row(const MetricReport& r) {
  std::ostringstream out;
  out << format_metric(r.auroc) << "," << format_metric(r.auprc) << ","
      << format_metric(r.acc) << "," << format_metric(r.f1) << ","
      << format_metric(r.f2) << "," << format_metric(r.g2) << ","
      << format_metric(r.chm) << "," << r.auroc_excluded << ","
      << r.auprc_excluded;
  return out.str();
}

void write_report_csv(const std::filesystem::path& path, const MetricReport& r) {
  atomic_write_file(path, metric_report_header() + "\n" + metric_report_row(r) + "\n");
}

}  // namespace ecgssl
