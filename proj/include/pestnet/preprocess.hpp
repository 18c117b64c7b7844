#pragma once

#include <array>
#include <cstdint>
#include <random>

#include <opencv2/core.hpp>
#include <torch/types.h>

namespace pestnet {

enum class Mode { Train, Eval };

/// Resize / crop / normalize settings. Images are 8-bit BGR cv::Mat
/// (OpenCV order); `channel_mean` and `channel_std` are given in RGB
/// order, matching the published backbone statistics.
struct PreprocessSpec {
  int short_side = 256;
  int crop = 224;
  Mode mode = Mode::Eval;
  std::array<double, 3> channel_mean{0.485, 0.456, 0.406};
  std::array<double, 3> channel_std{0.229, 0.224, 0.225};

  /// Throws InvalidConfig when crop > short_side or any std <= 0.
  void validate() const;
};

struct CropOrigin {
  int row = 0;
  int col = 0;
  bool operator==(const CropOrigin&) const = default;
};

/// Long side after resizing so that the short side equals `short_side`,
/// rounded half-up.
int scaled_long_side(int long_side, int short_side_in, int short_side_out);

cv::Mat aspect_resize(const cv::Mat& image, int short_side);

/// Top-left corner drawn uniformly over all valid placements.
CropOrigin random_crop_origin(int rows, int cols, int window, std::mt19937_64& rng);
CropOrigin center_crop_origin(int rows, int cols, int window);

cv::Mat random_crop(const cv::Mat& image, int window, std::mt19937_64& rng);
cv::Mat center_crop(const cv::Mat& image, int window);

/// (pixel / 255 - mean_c) / std_c, returned as a float 3xHxW tensor in RGB
/// channel order.
torch::Tensor normalize(const cv::Mat& image, const PreprocessSpec& spec);

/// Full chain: aspect_resize -> (random|center) crop -> normalize.
/// `rng` is only consulted in train mode.
torch::Tensor preprocess(const cv::Mat& image, const PreprocessSpec& spec,
                         std::mt19937_64& rng);

}  // namespace pestnet
