#include "pestnet/synthetic.hpp"

#include <random>
#include <vector>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "pestnet/data_io.hpp"
#include "pestnet/error.hpp"

namespace pestnet {

void generate_shapes_dataset(const std::filesystem::path& root, const SyntheticSpec& spec) {
  // BGR
  static const std::vector<cv::Scalar> kColors{{40, 40, 220}, {40, 200, 40}, {220, 60, 40},
                                               {30, 200, 230}, {200, 40, 200}, {200, 200, 40}};
  for (int k = 0; k < spec.classes; ++k) {
    const auto dir = root / fmt::format("class_{}", k);
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(mix_seed(spec.seed, static_cast<std::uint64_t>(k)));
    std::uniform_int_distribution<int> side(spec.min_side, spec.max_side);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> gray(70, 180);
    for (int i = 0; i < spec.images_per_class; ++i) {
      const int rows = side(rng);
      const int cols = side(rng);
      cv::Mat img(rows, cols, CV_8UC3, cv::Scalar::all(gray(rng)));
      cv::Mat noise(rows, cols, CV_16SC3);
      cv::RNG noise_rng(rng());
      noise_rng.fill(noise, cv::RNG::NORMAL, cv::Scalar::all(0), cv::Scalar::all(spec.noise_sigma));
      cv::Mat base;
      img.convertTo(base, CV_16SC3);
      base += noise;
      base.convertTo(img, CV_8UC3);

      const int extent = std::min(rows, cols);
      const int size = static_cast<int>(extent * (0.35 + 0.2 * unit(rng)));
      const int cy = size / 2 + static_cast<int>(unit(rng) * (rows - size));
      const int cx = size / 2 + static_cast<int>(unit(rng) * (cols - size));
      const cv::Scalar color = kColors[k % kColors.size()];
      switch (k % 3) {
        case 0:
          cv::circle(img, {cx, cy}, size / 2, color, cv::FILLED, cv::LINE_AA);
          break;
        case 1:
          cv::rectangle(img, {cx - size / 2, cy - size / 2}, {cx + size / 2, cy + size / 2}, color,
                        cv::FILLED);
          break;
        default: {
          std::vector<cv::Point> tri{{cx, cy - size / 2}, {cx - size / 2, cy + size / 2},
                                     {cx + size / 2, cy + size / 2}};
          cv::fillConvexPoly(img, tri, color, cv::LINE_AA);
          break;
        }
      }
      const auto file = dir / fmt::format("img_{:04d}.png", i);
      if (!cv::imwrite(file.string(), img)) {
        throw Error(ErrorCode::WriteFailure, "generate_shapes_dataset", file.string());
      }
    }
  }
}

}  // namespace pestnet
