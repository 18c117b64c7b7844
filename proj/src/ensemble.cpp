#include "pestnet/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "pestnet/error.hpp"

namespace pestnet {

void ProbMatrix::validate(double tolerance) const {
  if (values.size() != rows() * static_cast<std::size_t>(classes)) {
    throw Error(ErrorCode::ShapeMismatch, "ProbMatrix", "value count does not match rows x classes");
  }
  for (std::size_t r = 0; r < rows(); ++r) {
    double sum = 0.0;
    for (int c = 0; c < classes; ++c) {
      const double p = at(r, c);
      if (!(p >= 0.0 && p <= 1.0)) {
        throw Error(ErrorCode::InvalidConfig, "ProbMatrix",
                    fmt::format("{}: row {} has entry {} outside [0,1]", model_id, r, p));
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > tolerance) {
      throw Error(ErrorCode::InvalidConfig, "ProbMatrix",
                  fmt::format("{}: row {} sums to {}", model_id, r, sum));
    }
  }
}

ProbMatrix soft_vote(const std::vector<ProbMatrix>& members, const std::string& model_id) {
  if (members.empty()) {
    throw Error(ErrorCode::MemberMismatch, "soft_vote", "no members");
  }
  const auto& first = members.front();
  for (const auto& m : members) {
    if (m.classes != first.classes || m.sample_ids != first.sample_ids) {
      throw Error(ErrorCode::MemberMismatch, "soft_vote",
                  fmt::format("'{}' and '{}' differ in samples or classes", first.model_id, m.model_id));
    }
  }
  ProbMatrix out;
  out.model_id = model_id;
  out.sample_ids = first.sample_ids;
  out.true_labels = first.true_labels;
  out.classes = first.classes;
  out.values.resize(first.values.size());

  // Each cell's member values are sorted before averaging, so the result
  // does not depend on member order; the running mean returns x exactly
  // when every member holds x.
  std::vector<double> cell(members.size());
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    for (std::size_t m = 0; m < members.size(); ++m) cell[m] = members[m].values[i];
    std::sort(cell.begin(), cell.end());
    double mean = 0.0;
    for (std::size_t k = 0; k < cell.size(); ++k) {
      mean += (cell[k] - mean) / static_cast<double>(k + 1);
    }
    out.values[i] = mean;
  }
  return out;
}

std::vector<int> decide(const ProbMatrix& probs) {
  std::vector<int> labels(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    int best = 0;
    for (int c = 1; c < probs.classes; ++c) {
      if (probs.at(r, c) > probs.at(r, best)) best = c;
    }
    labels[r] = best;
  }
  return labels;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + '"';
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

void write_prob_csv(const ProbMatrix& probs, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw Error(ErrorCode::WriteFailure, "write_prob_csv", file.string());
  out << "sample_id,true_label";
  for (int c = 0; c < probs.classes; ++c) out << ",p_" << c;
  out << '\n';
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const int label = r < probs.true_labels.size() ? probs.true_labels[r] : -1;
    std::string line = csv_field(probs.sample_ids[r]) + "," + std::to_string(label);
    for (int c = 0; c < probs.classes; ++c) line += fmt::format(",{:.9g}", probs.at(r, c));
    out << line << '\n';
  }
  if (!out) throw Error(ErrorCode::WriteFailure, "write_prob_csv", file.string());
}

ProbMatrix read_prob_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::Io, "read_prob_csv", "cannot open " + file.string());
  ProbMatrix pm;
  pm.model_id = file.stem().string();
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorCode::MalformedLine, "read_prob_csv", file.string() + ": missing header");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  if (header.size() < 3 || header[0] != "sample_id" || header[1] != "true_label") {
    throw Error(ErrorCode::MalformedLine, "read_prob_csv", file.string() + ":1 bad header");
  }
  pm.classes = static_cast<int>(header.size() - 2);
  for (int c = 0; c < pm.classes; ++c) {
    if (header[c + 2] != "p_" + std::to_string(c)) {
      throw Error(ErrorCode::MalformedLine, "read_prob_csv", file.string() + ":1 bad column name");
    }
  }
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::MalformedLine, "read_prob_csv",
                  fmt::format("{}:{} has {} fields", file.string(), line_no, fields.size()));
    }
    try {
      pm.sample_ids.push_back(fields[0]);
      pm.true_labels.push_back(std::stoi(fields[1]));
      for (int c = 0; c < pm.classes; ++c) pm.values.push_back(std::stod(fields[c + 2]));
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedLine, "read_prob_csv",
                  fmt::format("{}:{} is not numeric", file.string(), line_no));
    }
  }
  return pm;
}

}  // namespace pestnet
