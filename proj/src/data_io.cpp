#include "pestnet/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include <opencv2/imgcodecs.hpp>
#include <torch/torch.h>

#include "pestnet/error.hpp"
#include "pestnet/log.hpp"

namespace pestnet {

LabelSpace::LabelSpace(std::vector<std::string> names) : names_(std::move(names)) {
  std::set<std::string> unique(names_.begin(), names_.end());
  if (unique.size() != names_.size()) {
    throw Error(ErrorCode::InvalidConfig, "LabelSpace", "duplicate class names");
  }
}

std::optional<int> LabelSpace::index_of(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<int>(it - names_.begin());
}

void SplitRatios::validate() const {
  for (double r : {train, val, test}) {
    if (!(r > 0.0 && r < 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "SplitRatios", "each ratio must lie in (0,1)");
    }
  }
  if (std::abs(train + val + test - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidConfig, "SplitRatios", "ratios must sum to 1");
  }
}

SplitRatios SplitRatios::parse(const std::string& csv) {
  std::vector<double> parts;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      parts.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidConfig, "SplitRatios", "not a number: '" + item + "'");
    }
  }
  if (parts.size() != 3) {
    throw Error(ErrorCode::InvalidConfig, "SplitRatios", "expected three comma-separated ratios");
  }
  SplitRatios r{parts[0], parts[1], parts[2]};
  r.validate();
  return r;
}

bool is_image_file(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  static const std::set<std::string> kExt{".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff", ".ppm", ".webp"};
  return kExt.count(ext) > 0;
}

cv::Mat decode_image(const fs::path& file) {
  cv::Mat img = cv::imread(file.string(), cv::IMREAD_COLOR);
  return img;
}

namespace {

std::vector<fs::path> sorted_images(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

LabelSpace scan_label_space(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw Error(ErrorCode::UnreadableRoot, "scan_label_space", root.string());
  }
  std::vector<std::string> names;
  try {
    for (const auto& entry : fs::directory_iterator(root)) {
      if (!entry.is_directory()) continue;
      bool has_image = false;
      for (const auto& file : sorted_images(entry.path())) {
        if (!decode_image(file).empty()) {
          has_image = true;
          break;
        }
      }
      if (has_image) names.push_back(entry.path().filename().string());
    }
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorCode::UnreadableRoot, "scan_label_space", e.what());
  }
  std::sort(names.begin(), names.end());
  if (names.size() < 2) {
    throw Error(ErrorCode::EmptyDataset, "scan_label_space",
                std::to_string(names.size()) + " class folder(s) with images under " + root.string());
  }
  return LabelSpace(std::move(names));
}

std::vector<ImageRecord> scan_records(const fs::path& root, const LabelSpace& labels) {
  std::vector<ImageRecord> records;
  for (int c = 0; c < labels.count(); ++c) {
    const fs::path dir = root / labels.name(c);
    if (!fs::is_directory(dir)) {
      throw Error(ErrorCode::UnreadableRoot, "scan_records", dir.string());
    }
    for (const auto& file : sorted_images(dir)) {
      records.push_back({fs::relative(file, root).generic_string(), c});
    }
  }
  return records;
}

SplitSet make_random_split(const std::vector<ImageRecord>& records, const SplitRatios& ratios,
                           std::uint64_t seed) {
  ratios.validate();
  if (records.empty()) {
    throw Error(ErrorCode::EmptyDataset, "make_random_split", "no records");
  }
  std::map<int, std::vector<ImageRecord>> by_class;
  for (const auto& r : records) by_class[r.label].push_back(r);

  SplitSet out{{"train", {}}, {"val", {}}, {"test", {}}};
  for (auto& [label, members] : by_class) {
    const std::size_t n = members.size();
    if (n < 3) {
      throw Error(ErrorCode::ClassTooSmall, "make_random_split",
                  "class " + std::to_string(label) + " has " + std::to_string(n) + " sample(s)");
    }
    // The epsilon absorbs representation error such as 10 * 0.1.
    auto n_val = static_cast<std::size_t>(std::floor(n * ratios.val + 1e-9));
    auto n_test = static_cast<std::size_t>(std::floor(n * ratios.test + 1e-9));
    n_val = std::max<std::size_t>(n_val, 1);
    n_test = std::max<std::size_t>(n_test, 1);
    if (n_val + n_test >= n) {
      throw Error(ErrorCode::ClassTooSmall, "make_random_split",
                  "class " + std::to_string(label) + " cannot populate all three splits");
    }
    std::sort(members.begin(), members.end(),
              [](const ImageRecord& a, const ImageRecord& b) { return a.path < b.path; });
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(label)));
    std::shuffle(members.begin(), members.end(), rng);
    auto it = members.begin();
    out.val.records.insert(out.val.records.end(), it, it + n_val);
    it += n_val;
    out.test.records.insert(out.test.records.end(), it, it + n_test);
    it += n_test;
    out.train.records.insert(out.train.records.end(), it, members.end());
  }
  auto by_label_path = [](const ImageRecord& a, const ImageRecord& b) {
    return std::tie(a.label, a.path) < std::tie(b.label, b.path);
  };
  for (auto* m : {&out.train, &out.val, &out.test}) {
    std::sort(m->records.begin(), m->records.end(), by_label_path);
  }
  return out;
}

SplitManifest load_fixed_split(const fs::path& manifest_file, const LabelSpace& labels,
                               std::string split_name) {
  std::ifstream in(manifest_file);
  if (!in) {
    throw Error(ErrorCode::Io, "load_fixed_split", "cannot open " + manifest_file.string());
  }
  SplitManifest manifest;
  manifest.split_name = std::move(split_name);
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto sep = line.rfind(' ');
    if (sep == std::string::npos || sep == 0 || sep + 1 == line.size()) {
      throw Error(ErrorCode::MalformedLine, "load_fixed_split",
                  manifest_file.string() + ":" + std::to_string(line_no));
    }
    const std::string path = line.substr(0, sep);
    const std::string label_text = line.substr(sep + 1);
    long label = 0;
    try {
      std::size_t used = 0;
      label = std::stol(label_text, &used);
      if (used != label_text.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedLine, "load_fixed_split",
                  manifest_file.string() + ":" + std::to_string(line_no));
    }
    if (label < 0 || label >= labels.count()) {
      throw Error(ErrorCode::LabelOutOfRange, "load_fixed_split",
                  manifest_file.string() + ":" + std::to_string(line_no) + " label " +
                      std::to_string(label) + " with " + std::to_string(labels.count()) +
                      " classes");
    }
    if (!seen.insert(path).second) {
      throw Error(ErrorCode::MalformedLine, "load_fixed_split",
                  manifest_file.string() + ":" + std::to_string(line_no) + " duplicate path " + path);
    }
    manifest.records.push_back({path, static_cast<int>(label)});
  }
  return manifest;
}

void save_manifest(const SplitManifest& manifest, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw Error(ErrorCode::WriteFailure, "save_manifest", file.string());
  for (const auto& r : manifest.records) out << r.path << ' ' << r.label << '\n';
  if (!out) throw Error(ErrorCode::WriteFailure, "save_manifest", file.string());
}

void save_label_space(const LabelSpace& labels, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw Error(ErrorCode::WriteFailure, "save_label_space", file.string());
  for (const auto& n : labels.names()) out << n << '\n';
}

LabelSpace load_label_space(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::Io, "load_label_space", "cannot open " + file.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  return LabelSpace(std::move(names));
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word.
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

BatchStream::BatchStream(SplitManifest manifest, fs::path root, PreprocessSpec prep,
                         int batch_size, Mode mode, std::uint64_t seed, int epoch, int workers)
    : manifest_(std::move(manifest)),
      root_(std::move(root)),
      prep_(prep),
      batch_size_(batch_size),
      mode_(mode),
      seed_(seed),
      epoch_(epoch),
      workers_(std::max(1, workers)) {
  if (batch_size_ < 1) {
    throw Error(ErrorCode::InvalidConfig, "stream_batches", "batch_size must be >= 1");
  }
  prep_.mode = mode_;
  prep_.validate();
  order_.resize(manifest_.records.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (mode_ == Mode::Train) {
    std::mt19937_64 rng(mix_seed(seed_, static_cast<std::uint64_t>(epoch_)));
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

std::size_t BatchStream::batch_count() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchStream::next() {
  while (cursor_ < order_.size()) {
    const std::size_t begin = cursor_;
    const std::size_t end = std::min(order_.size(), begin + batch_size_);
    cursor_ = end;
    const std::size_t n = end - begin;

    // Each slot is owned by exactly one worker; assembly below walks slots
    // in order, so the result is independent of scheduling.
    std::vector<torch::Tensor> slots(n);
    auto work = [&](std::size_t first) {
      for (std::size_t i = first; i < n; i += workers_) {
        const int pos = order_[begin + i];
        const auto& rec = manifest_.records[pos];
        cv::Mat img = decode_image(root_ / rec.path);
        if (img.empty()) continue;
        std::mt19937_64 rng(mix_seed(mix_seed(seed_, static_cast<std::uint64_t>(epoch_)),
                                     static_cast<std::uint64_t>(pos)));
        slots[i] = preprocess(img, prep_, rng);
      }
    };
    if (workers_ == 1 || n == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < workers_ && static_cast<std::size_t>(w) < n; ++w) pool.emplace_back([&work, w] { work(static_cast<std::size_t>(w)); });
      for (auto& t : pool) t.join();
    }

    Batch batch;
    std::vector<torch::Tensor> images;
    std::vector<std::int64_t> labels;
    for (std::size_t i = 0; i < n; ++i) {
      const int pos = order_[begin + i];
      if (!slots[i].defined()) {
        const std::string path = manifest_.records[pos].path;
        log::warn("stream_batches: DecodeFailure: skipping {}", path);
        skipped_.push_back(path);
        continue;
      }
      images.push_back(slots[i]);
      labels.push_back(manifest_.records[pos].label);
      batch.positions.push_back(pos);
    }
    if (images.empty()) continue;
    batch.images = torch::stack(images);
    batch.labels = torch::tensor(labels, torch::kInt64);
    return batch;
  }
  return std::nullopt;
}

}  // namespace pestnet
