#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace pestnet {

/// Class-probability rows of one model over an ordered sample set.
struct ProbMatrix {
  std::string model_id;
  std::vector<std::string> sample_ids;
  std::vector<int> true_labels;  // -1 when unknown
  int classes = 0;
  std::vector<double> values;    // row-major, sample_ids.size() x classes

  std::size_t rows() const { return sample_ids.size(); }
  double at(std::size_t row, int cls) const { return values[row * classes + cls]; }
  double& at(std::size_t row, int cls) { return values[row * classes + cls]; }

  /// Entries in [0, 1], rows summing to 1 within `tolerance`.
  void validate(double tolerance = 1e-5) const;
};

/// Per-sample mean of member probabilities. Members must share sample ids
/// (same order) and class count, else MemberMismatch.
ProbMatrix soft_vote(const std::vector<ProbMatrix>& members, const std::string& model_id = "ensemble");

/// Row-wise argmax; ties go to the lowest class index.
std::vector<int> decide(const ProbMatrix& probs);

/// CSV exchange format: header "sample_id,true_label,p_0,...,p_{n-1}",
/// probabilities with 9 significant digits. The model id is taken from the
/// file stem on read.
void write_prob_csv(const ProbMatrix& probs, const std::filesystem::path& file);
ProbMatrix read_prob_csv(const std::filesystem::path& file);

}  // namespace pestnet
