#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/types.h>

#include "pestnet/preprocess.hpp"

namespace pestnet {

namespace fs = std::filesystem;

/// Ordered class names. Index i is the label of names[i].
class LabelSpace {
 public:
  LabelSpace() = default;
  explicit LabelSpace(std::vector<std::string> names);

  const std::vector<std::string>& names() const { return names_; }
  int count() const { return static_cast<int>(names_.size()); }
  const std::string& name(int index) const { return names_.at(index); }
  std::optional<int> index_of(const std::string& name) const;

  bool operator==(const LabelSpace&) const = default;

 private:
  std::vector<std::string> names_;
};

struct ImageRecord {
  std::string path;  // relative to the dataset root
  int label = 0;
  bool operator==(const ImageRecord&) const = default;
};

struct SplitManifest {
  std::string split_name;
  std::vector<ImageRecord> records;

  std::size_t size() const { return records.size(); }
};

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;

  void validate() const;
  static SplitRatios parse(const std::string& csv);  // "0.7,0.1,0.2"
};

struct SplitSet {
  SplitManifest train;
  SplitManifest val;
  SplitManifest test;
};

bool is_image_file(const fs::path& path);

/// One class per subdirectory of `root`, in lexicographic order. A class
/// folder counts only if it holds at least one decodable image.
LabelSpace scan_label_space(const fs::path& root);

/// Every image under root/<class>/, labelled by `labels`, sorted by path.
std::vector<ImageRecord> scan_records(const fs::path& root, const LabelSpace& labels);

/// Stratified split. Per class of size n: val = floor(n*val), test =
/// floor(n*test), train takes the remainder. Throws ClassTooSmall when a
/// class would leave any split empty.
SplitSet make_random_split(const std::vector<ImageRecord>& records,
                           const SplitRatios& ratios, std::uint64_t seed);

/// Reads "relative/path<SP>label" lines. Blank lines are ignored.
SplitManifest load_fixed_split(const fs::path& manifest_file, const LabelSpace& labels,
                               std::string split_name = {});

void save_manifest(const SplitManifest& manifest, const fs::path& file);

void save_label_space(const LabelSpace& labels, const fs::path& file);
LabelSpace load_label_space(const fs::path& file);

/// Decodes to 8-bit BGR; returns an empty Mat when the file cannot be read.
cv::Mat decode_image(const fs::path& file);

struct Batch {
  torch::Tensor images;        // N x 3 x crop x crop, float32
  torch::Tensor labels;        // N, int64
  std::vector<int> positions;  // manifest positions of the rows
};

/// Iterates one epoch of a manifest in batches.
///
/// Train mode visits records in a permutation derived from (seed, epoch)
/// and random-crops each image with its own generator seeded from
/// (seed, epoch, position); eval mode keeps manifest order and center
/// crops. The crop generator is per record, so the output does not depend
/// on `workers`. Undecodable images are skipped with a warning.
class BatchStream {
 public:
  BatchStream(SplitManifest manifest, fs::path root, PreprocessSpec prep, int batch_size,
              Mode mode, std::uint64_t seed, int epoch = 0, int workers = 1);

  std::optional<Batch> next();

  /// Number of batches the stream will emit if nothing fails to decode.
  std::size_t batch_count() const;
  const std::vector<int>& order() const { return order_; }
  const std::vector<std::string>& skipped() const { return skipped_; }

 private:
  SplitManifest manifest_;
  fs::path root_;
  PreprocessSpec prep_;
  int batch_size_;
  Mode mode_;
  std::uint64_t seed_;
  int epoch_;
  int workers_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
  std::vector<std::string> skipped_;
};

/// Seed mixer shared by everything that derives sub-seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace pestnet
