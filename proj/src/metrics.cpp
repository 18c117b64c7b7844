#include "pestnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "pestnet/error.hpp"

namespace pestnet {

ConfusionCounts confusion(std::span<const int> y_true, std::span<const int> y_pred,
                          int num_classes) {
  if (y_true.size() != y_pred.size()) {
    throw Error(ErrorCode::LengthMismatch, "confusion",
                fmt::format("{} labels vs {} predictions", y_true.size(), y_pred.size()));
  }
  ConfusionCounts c;
  c.tp.assign(num_classes, 0);
  c.fp.assign(num_classes, 0);
  c.fn.assign(num_classes, 0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i];
    const int p = y_pred[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes) {
      throw Error(ErrorCode::LabelOutOfRange, "confusion",
                  fmt::format("sample {}: ({}, {}) with {} classes", i, t, p, num_classes));
    }
    if (t == p) {
      ++c.tp[t];
      ++c.total_tp;
    } else {
      ++c.fn[t];
      ++c.fp[p];
    }
  }
  c.total = static_cast<std::int64_t>(y_true.size());
  return c;
}

MetricsReport macro_report(const ConfusionCounts& counts) {
  const int classes = counts.classes();
  MetricsReport r;
  r.precision.resize(classes);
  r.recall.resize(classes);
  r.sensitivity.resize(classes);
  double log_gm = 0.0;
  for (int c = 0; c < classes; ++c) {
    const auto support = counts.tp[c] + counts.fn[c];
    if (support == 0) {
      throw Error(ErrorCode::EmptyClass, "macro_report",
                  fmt::format("class {} is absent from the ground truth", c));
    }
    r.recall[c] = static_cast<double>(counts.tp[c]) / static_cast<double>(support);
    const auto predicted = counts.tp[c] + counts.fp[c];
    r.precision[c] =
        predicted > 0 ? static_cast<double>(counts.tp[c]) / static_cast<double>(predicted) : 0.0;
    r.sensitivity[c] = r.recall[c];
    const double s = r.sensitivity[c] > 0.0 ? r.sensitivity[c] : kZeroSensitivitySubstitute;
    log_gm += std::log(s);
  }
  r.mpre = std::accumulate(r.precision.begin(), r.precision.end(), 0.0) / classes;
  r.mrec = std::accumulate(r.recall.begin(), r.recall.end(), 0.0) / classes;
  r.mf1 = (r.mpre + r.mrec) > 0.0 ? 2.0 * r.mpre * r.mrec / (r.mpre + r.mrec) : 0.0;
  r.acc = counts.total > 0 ? static_cast<double>(counts.total_tp) / static_cast<double>(counts.total)
                           : 0.0;
  // Product of many small fractions underflows; average the logs instead.
  r.gm = std::exp(log_gm / classes);
  r.worst_k = worst_classes(r, std::min(10, classes));
  return r;
}

std::vector<ClassScore> worst_classes(const MetricsReport& report, int k) {
  std::vector<ClassScore> all;
  all.reserve(report.recall.size());
  for (std::size_t c = 0; c < report.recall.size(); ++c) {
    all.push_back({static_cast<int>(c), report.recall[c]});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const ClassScore& a, const ClassScore& b) { return a.accuracy < b.accuracy; });
  all.resize(std::min<std::size_t>(all.size(), static_cast<std::size_t>(std::max(k, 0))));
  return all;
}

std::string format_report(const MetricsReport& r) {
  std::string out;
  out += fmt::format("Acc = {:.9g}\n", r.acc);
  out += fmt::format("MPre = {:.9g}\n", r.mpre);
  out += fmt::format("MRec = {:.9g}\n", r.mrec);
  out += fmt::format("MF1 = {:.9g}\n", r.mf1);
  out += fmt::format("GM = {:.9g}\n", r.gm);
  for (const auto& w : r.worst_k) {
    out += fmt::format("worst.{} = {:.9g}\n", w.label, w.accuracy);
  }
  return out;
}

std::string report_row(const std::string& dataset, const std::string& model,
                       const MetricsReport& r) {
  return fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}", dataset, model, r.acc, r.mpre,
                     r.mrec, r.mf1, r.gm);
}

}  // namespace pestnet
