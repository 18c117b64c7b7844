#pragma once

#include <span>
#include <vector>

#include <torch/types.h>

namespace pestnet {

/// -log softmax(logits)[label], evaluated through log-sum-exp.
double cross_entropy(std::span<const double> logits, int label);

/// d cross_entropy / d logits = softmax(logits) - onehot(label).
std::vector<double> cross_entropy_grad(std::span<const double> logits, int label);

/// Batch mean cross-entropy; logits N x C, labels N (int64).
torch::Tensor batch_cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels);

std::vector<double> softmax(std::span<const double> logits);

}  // namespace pestnet
