#include "pestnet/preprocess.hpp"

#include <algorithm>
#include <string>

#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "pestnet/error.hpp"

namespace pestnet {

void PreprocessSpec::validate() const {
  if (short_side < 1 || crop < 1 || crop > short_side) {
    throw Error(ErrorCode::InvalidConfig, "preprocess",
                "crop " + std::to_string(crop) + " must be in [1, short_side=" +
                    std::to_string(short_side) + "]");
  }
  for (double s : channel_std) {
    if (!(s > 0.0)) {
      throw Error(ErrorCode::InvalidConfig, "preprocess", "channel_std must be positive");
    }
  }
}

int scaled_long_side(int long_side, int short_side_in, int short_side_out) {
  // floor(long * out / in + 1/2) in exact integer arithmetic.
  const std::int64_t num = 2LL * long_side * short_side_out + short_side_in;
  return static_cast<int>(num / (2LL * short_side_in));
}

cv::Mat aspect_resize(const cv::Mat& image, int short_side) {
  const int rows = image.rows;
  const int cols = image.cols;
  int out_rows = short_side;
  int out_cols = short_side;
  if (rows < cols) {
    out_cols = scaled_long_side(cols, rows, short_side);
  } else if (cols < rows) {
    out_rows = scaled_long_side(rows, cols, short_side);
  }
  if (out_rows == rows && out_cols == cols) return image.clone();
  cv::Mat out;
  const int interp = (out_rows < rows) ? cv::INTER_AREA : cv::INTER_LINEAR;
  cv::resize(image, out, cv::Size(out_cols, out_rows), 0, 0, interp);
  return out;
}

namespace {

void require_fits(int rows, int cols, int window, const char* op) {
  if (rows < window || cols < window) {
    throw Error(ErrorCode::ImageTooSmall, op,
                std::to_string(rows) + "x" + std::to_string(cols) + " image, window " +
                    std::to_string(window));
  }
}

}  // namespace

CropOrigin random_crop_origin(int rows, int cols, int window, std::mt19937_64& rng) {
  require_fits(rows, cols, window, "random_crop");
  std::uniform_int_distribution<int> row_dist(0, rows - window);
  std::uniform_int_distribution<int> col_dist(0, cols - window);
  CropOrigin origin;
  origin.row = row_dist(rng);
  origin.col = col_dist(rng);
  return origin;
}

CropOrigin center_crop_origin(int rows, int cols, int window) {
  require_fits(rows, cols, window, "center_crop");
  return {(rows - window) / 2, (cols - window) / 2};
}

cv::Mat random_crop(const cv::Mat& image, int window, std::mt19937_64& rng) {
  const CropOrigin o = random_crop_origin(image.rows, image.cols, window, rng);
  return image(cv::Rect(o.col, o.row, window, window)).clone();
}

cv::Mat center_crop(const cv::Mat& image, int window) {
  const CropOrigin o = center_crop_origin(image.rows, image.cols, window);
  return image(cv::Rect(o.col, o.row, window, window)).clone();
}

torch::Tensor normalize(const cv::Mat& image, const PreprocessSpec& spec) {
  CV_Assert(image.type() == CV_8UC3);
  const int rows = image.rows;
  const int cols = image.cols;
  auto out = torch::empty({3, rows, cols}, torch::kFloat32);
  auto acc = out.accessor<float, 3>();
  // BGR storage -> RGB planes.
  for (int rgb = 0; rgb < 3; ++rgb) {
    const int bgr = 2 - rgb;
    const double mean = spec.channel_mean[rgb];
    const double inv_std = 1.0 / spec.channel_std[rgb];
    for (int r = 0; r < rows; ++r) {
      const auto* px = image.ptr<cv::Vec3b>(r);
      for (int c = 0; c < cols; ++c) {
        acc[rgb][r][c] = static_cast<float>((px[c][bgr] / 255.0 - mean) * inv_std);
      }
    }
  }
  return out;
}

torch::Tensor preprocess(const cv::Mat& image, const PreprocessSpec& spec,
                         std::mt19937_64& rng) {
  cv::Mat resized = aspect_resize(image, spec.short_side);
  cv::Mat cropped = spec.mode == Mode::Train ? random_crop(resized, spec.crop, rng)
                                             : center_crop(resized, spec.crop);
  return normalize(cropped, spec);
}

}  // namespace pestnet
