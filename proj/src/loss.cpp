#include "pestnet/loss.hpp"

#include <algorithm>
#include <cmath>

#include <torch/torch.h>

namespace pestnet {

namespace {

double log_sum_exp(std::span<const double> v) {
  const double peak = *std::max_element(v.begin(), v.end());
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - peak);
  return peak + std::log(acc);
}

}  // namespace

double cross_entropy(std::span<const double> logits, int label) {
  return log_sum_exp(logits) - logits[label];
}

std::vector<double> softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
  return p;
}

std::vector<double> cross_entropy_grad(std::span<const double> logits, int label) {
  auto g = softmax(logits);
  g[label] -= 1.0;
  return g;
}

torch::Tensor batch_cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels) {
  return torch::nll_loss(torch::log_softmax(logits, 1), labels);
}

}  // namespace pestnet
