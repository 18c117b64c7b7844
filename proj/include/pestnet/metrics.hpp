#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace pestnet {

/// Per-class TP / FP / FN plus totals.
struct ConfusionCounts {
  std::vector<std::int64_t> tp, fp, fn;
  std::int64_t total = 0;  // N
  std::int64_t total_tp = 0;

  int classes() const { return static_cast<int>(tp.size()); }
};

ConfusionCounts confusion(std::span<const int> y_true, std::span<const int> y_pred,
                          int num_classes);

struct ClassScore {
  int label = 0;
  double accuracy = 0.0;
  bool operator==(const ClassScore&) const = default;
};

struct MetricsReport {
  std::vector<double> precision;    // Pre_c
  std::vector<double> recall;       // Rec_c
  std::vector<double> sensitivity;  // S_c (= Rec_c)
  double mpre = 0.0;
  double mrec = 0.0;
  double mf1 = 0.0;
  double acc = 0.0;
  double gm = 0.0;
  std::vector<ClassScore> worst_k;  // the min(10, C) lowest-recall classes
};

/// Sensitivity that stands in for a zero S_c in the geometric mean.
inline constexpr double kZeroSensitivitySubstitute = 0.001;

/// Throws EmptyClass when some class never appears in the ground truth.
MetricsReport macro_report(const ConfusionCounts& counts);

/// k lowest per-class accuracies (recall), ascending; ties by class index.
std::vector<ClassScore> worst_classes(const MetricsReport& report, int k);

/// "key = value" lines; values printed with 9 significant digits.
std::string format_report(const MetricsReport& report);

/// "dataset,model,Acc,MPre,MRec,MF1,GM" data row (no trailing newline).
std::string report_row(const std::string& dataset, const std::string& model,
                       const MetricsReport& report);

}  // namespace pestnet
