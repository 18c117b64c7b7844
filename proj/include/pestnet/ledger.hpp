#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pestnet/data_io.hpp"
#include "pestnet/metrics.hpp"

namespace pestnet {

inline constexpr const char* kLedgerHeader = "dataset,model,Acc,MPre,MRec,MF1,GM,timestamp,config_hash";

struct LedgerRow {
  std::string dataset;
  std::string model;
  double acc = 0.0;
  double mpre = 0.0;
  double mrec = 0.0;
  double mf1 = 0.0;
  double gm = 0.0;
  std::string timestamp;
  std::string config_hash;
};

/// Appends one row; writes the header first when the file is new or empty.
void append_ledger_row(const std::filesystem::path& ledger, const std::string& dataset,
                       const std::string& model, const MetricsReport& report,
                       std::uint64_t config_hash);

std::vector<LedgerRow> read_ledger(const std::filesystem::path& ledger);

/// Comparison table: the latest row per (dataset, model), filtered by
/// dataset when given, sorted by Acc descending (model name on ties).
/// Values are percentages with two decimals. Throws EmptyLedger when no
/// row survives the filter.
std::string format_comparison(const std::vector<LedgerRow>& rows,
                              const std::optional<std::string>& dataset);

/// Lowest per-class accuracies, one line per class.
std::string format_worst_classes(const std::vector<ClassScore>& worst, const LabelSpace* labels);

}  // namespace pestnet
