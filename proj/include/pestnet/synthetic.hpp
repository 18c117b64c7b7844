#pragma once

#include <cstdint>
#include <filesystem>

namespace pestnet {

struct SyntheticSpec {
  int classes = 3;
  int images_per_class = 100;
  int min_side = 72;
  int max_side = 104;
  double noise_sigma = 24.0;
  std::uint64_t seed = 0;
};

/// Writes root/class_<k>/img_<i>.png: one colored shape per image (circle,
/// square, triangle, cycling with distinct hues) at a random position and
/// scale on a noisy gray background.
void generate_shapes_dataset(const std::filesystem::path& root, const SyntheticSpec& spec);

}  // namespace pestnet
