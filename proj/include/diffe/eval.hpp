#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "diffe/common.hpp"

namespace diffe {

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw MetricError("accuracy: prediction and truth lengths must match and be nonempty");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == truth[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

inline std::vector<std::vector<std::size_t>> confusion_matrix(const std::vector<int>& pred,
                                                              const std::vector<int>& truth,
                                                              std::size_t n_classes) {
  if (pred.size() != truth.size()) throw MetricError("confusion_matrix: length mismatch");
  std::vector<std::vector<std::size_t>> m(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= static_cast<int>(n_classes) || pred[i] < 0 ||
        pred[i] >= static_cast<int>(n_classes)) {
      throw MetricError("confusion_matrix: label outside [0, " + std::to_string(n_classes) + ")");
    }
    ++m[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
  }
  return m;
}

// Binary ROC AUC by the rank statistic; tied scores contribute 0.5.
inline double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based average rank
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (positive[k]) {
      rank_sum += rank[k];
      ++n_pos;
    }
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw MetricError("binary_auc: both classes must be present");
  return (rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Macro one-vs-rest AUC over raw score columns; every class must appear in
// the truth labels.
inline double multiclass_auc(const std::vector<std::vector<double>>& scores,
                             const std::vector<int>& truth, std::size_t n_classes) {
  if (scores.size() != truth.size() || scores.empty()) {
    throw MetricError("multiclass_auc: scores and truth lengths must match and be nonempty");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != n_classes) {
      throw MetricError("multiclass_auc: row " + std::to_string(i) + " has " +
                        std::to_string(scores[i].size()) + " columns, expected " +
                        std::to_string(n_classes));
    }
  }
  double sum = 0.0;
  std::vector<double> col(scores.size());
  std::vector<bool> pos(scores.size());
  for (std::size_t k = 0; k < n_classes; ++k) {
    bool present = false;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      col[i] = scores[i][k];
      pos[i] = truth[i] == static_cast<int>(k);
      present = present || pos[i];
    }
    if (!present) {
      throw MetricError("multiclass_auc: class " + std::to_string(k) + " is absent from truth");
    }
    sum += binary_auc(col, pos);
  }
  return sum / static_cast<double>(n_classes);
}

inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline double mean_of(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  return v.empty() ? 0.0 : mean / static_cast<double>(v.size());
}

// One evaluated run: accuracy/AUC as percentages plus the confusion matrix.
struct RunMetrics {
  std::string mode;
  double accuracy_pct = 0.0;
  double auc_pct = 0.0;
  std::vector<std::vector<std::size_t>> confusion;
};

struct ReportRow {
  std::string mode;
  double acc_mean = 0.0, acc_std = 0.0;
  double auc_mean = 0.0, auc_std = 0.0;
  std::size_t runs = 0;
};

inline ReportRow aggregate_runs(const std::string& mode, const std::vector<RunMetrics>& runs) {
  std::vector<double> acc, auc;
  for (const auto& r : runs) {
    if (r.mode == mode) {
      acc.push_back(r.accuracy_pct);
      auc.push_back(r.auc_pct);
    }
  }
  if (acc.empty()) throw MetricError("report: no runs for mode '" + mode + "'");
  return ReportRow{mode, mean_of(acc), sample_std(acc), mean_of(auc), sample_std(auc), acc.size()};
}

inline std::string format_report(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  char buf[96];
  os << "Components                 Accuracy (%)     AUC (%)\n";
  os << "---------------------------------------------------\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-24s %6.2f ± %-5.2f  %6.2f ± %-5.2f\n", r.mode.c_str(),
                  r.acc_mean, r.acc_std, r.auc_mean, r.auc_std);
    os << buf;
  }
  return os.str();
}

inline std::string format_mean_std(double mean, double std_dev) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", mean, std_dev);
  return buf;
}

inline void write_metrics_csv(const std::string& path, const std::vector<ReportRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "mode,runs,accuracy_mean,accuracy_std,auc_mean,auc_std\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%.6f,%.6f,%.6f,%.6f\n", r.mode.c_str(), r.runs, r.acc_mean,
                  r.acc_std, r.auc_mean, r.auc_std);
    out << buf;
  }
}

}  // namespace diffe
