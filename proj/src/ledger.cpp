#include "pestnet/ledger.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "pestnet/error.hpp"

namespace pestnet {

void append_ledger_row(const std::filesystem::path& ledger, const std::string& dataset,
                       const std::string& model, const MetricsReport& report,
                       std::uint64_t config_hash) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(ledger, ec) || std::filesystem::file_size(ledger, ec) == 0;
  std::ofstream out(ledger, std::ios::app);
  if (!out) throw Error(ErrorCode::WriteFailure, "ledger", ledger.string());
  if (fresh) out << kLedgerHeader << '\n';
  const auto now = std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
  out << report_row(dataset, model, report)
      << fmt::format(",{:%Y-%m-%dT%H:%M:%SZ},{:016x}\n", now, config_hash);
  if (!out) throw Error(ErrorCode::WriteFailure, "ledger", ledger.string());
}

std::vector<LedgerRow> read_ledger(const std::filesystem::path& ledger) {
  std::ifstream in(ledger);
  if (!in) throw Error(ErrorCode::EmptyLedger, "report", "cannot open " + ledger.string());
  std::vector<LedgerRow> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line == kLedgerHeader) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() < 7) {
      throw Error(ErrorCode::MalformedLine, "report", fmt::format("{}:{}", ledger.string(), line_no));
    }
    LedgerRow r;
    r.dataset = f[0];
    r.model = f[1];
    try {
      r.acc = std::stod(f[2]);
      r.mpre = std::stod(f[3]);
      r.mrec = std::stod(f[4]);
      r.mf1 = std::stod(f[5]);
      r.gm = std::stod(f[6]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedLine, "report", fmt::format("{}:{}", ledger.string(), line_no));
    }
    if (f.size() > 7) r.timestamp = f[7];
    if (f.size() > 8) r.config_hash = f[8];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string format_comparison(const std::vector<LedgerRow>& rows,
                              const std::optional<std::string>& dataset) {
  // Later rows replace earlier ones for the same (dataset, model).
  std::map<std::pair<std::string, std::string>, LedgerRow> latest;
  for (const auto& r : rows) {
    if (dataset && r.dataset != *dataset) continue;
    latest[{r.dataset, r.model}] = r;
  }
  if (latest.empty()) {
    throw Error(ErrorCode::EmptyLedger, "report",
                dataset ? "no rows for dataset '" + *dataset + "'" : "no rows");
  }
  std::vector<LedgerRow> table;
  for (auto& [key, r] : latest) table.push_back(r);
  std::stable_sort(table.begin(), table.end(), [](const LedgerRow& a, const LedgerRow& b) {
    if (a.acc != b.acc) return a.acc > b.acc;
    return std::tie(a.dataset, a.model) < std::tie(b.dataset, b.model);
  });
  std::string out = fmt::format("{:<12} {:<12} {:>7} {:>7} {:>7} {:>7} {:>7}\n", "dataset", "model",
                                "Acc", "MPre", "MRec", "MF1", "GM");
  for (const auto& r : table) {
    out += fmt::format("{:<12} {:<12} {:>7.2f} {:>7.2f} {:>7.2f} {:>7.2f} {:>7.2f}\n", r.dataset,
                       r.model, 100 * r.acc, 100 * r.mpre, 100 * r.mrec, 100 * r.mf1, 100 * r.gm);
  }
  return out;
}

std::string format_worst_classes(const std::vector<ClassScore>& worst, const LabelSpace* labels) {
  std::string out = fmt::format("{:>4}  {:<24} {:>8}\n", "rank", "class", "accuracy");
  int rank = 1;
  for (const auto& w : worst) {
    const std::string name = labels && w.label < labels->count() ? labels->name(w.label)
                                                                 : std::to_string(w.label);
    out += fmt::format("{:>4}  {:<24} {:>8.2f}\n", rank++, name, 100 * w.accuracy);
  }
  return out;
}

}  // namespace pestnet
