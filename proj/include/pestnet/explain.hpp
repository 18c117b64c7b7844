#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/types.h>

#include "pestnet/model.hpp"

namespace pestnet {

/// Non-negative class activation map, max-normalized to 1 (or all zero).
struct Heatmap {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
  std::string source_layer;
  int target_class = 0;

  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

/// Grad-CAM from an activation (K x h x w) and the gradient of the target
/// score with respect to it: weight_k = spatial mean of the gradient,
/// map = relu(sum_k weight_k * activation_k), then max-normalized.
Heatmap grad_cam_from(const torch::Tensor& activation, const torch::Tensor& gradient);

/// Runs the model on one normalized 3 x H x W image and backpropagates the
/// target logit to the last extractor block. Throws UnsupportedLayer when
/// the model does not expose that block.
Heatmap grad_cam(ClassifierImpl& model, const torch::Tensor& image, int target_class);

/// Colormap and blend weight used by overlay().
inline constexpr int kOverlayColormap = 2;  // cv::COLORMAP_JET
inline constexpr double kOverlayAlpha = 0.4;

/// Heatmap upsampled bilinearly to the image size, JET-colorized and
/// blended: out = (1 - alpha) * image + alpha * color.
cv::Mat render_overlay(const Heatmap& heatmap, const cv::Mat& image);

/// render_overlay written to `out` (format from the extension).
void overlay(const Heatmap& heatmap, const cv::Mat& image, const std::filesystem::path& out);

}  // namespace pestnet
