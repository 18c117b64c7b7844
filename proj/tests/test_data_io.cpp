#include <doctest.h>

#include <map>
#include <set>

#include <fmt/format.h>

#include <torch/torch.h>

#include "pestnet/data_io.hpp"
#include "pestnet/error.hpp"
#include "pestnet/trainer.hpp"
#include "test_util.hpp"

namespace pestnet {
inline std::ostream& operator<<(std::ostream& os, const ImageRecord& r) { return os << r.path << " " << r.label; }
}  // namespace pestnet

using namespace pestnet;
using testutil::TempDir;

namespace {

std::vector<ImageRecord> synthetic_records(const std::vector<int>& per_class) {
  std::vector<ImageRecord> out;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    for (int i = 0; i < per_class[c]; ++i) {
      out.push_back({"c" + std::to_string(c) + "/" + std::to_string(i) + ".png", static_cast<int>(c)});
    }
  }
  return out;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("label space comes from folder names in lexicographic order") {
  TempDir dir("labels");
  testutil::write_png(dir / "bees/a.png", 8, 8, 10);
  testutil::write_png(dir / "ants/b.png", 8, 8, 20);
  testutil::write_file(dir / "empty_class/notes.txt", "nothing here");
  auto labels = scan_label_space(dir.path());
  CHECK(labels.names() == std::vector<std::string>{"ants", "bees"});
  CHECK(labels.count() == 2);
  CHECK(labels.index_of("bees") == 1);
  CHECK_FALSE(labels.index_of("wasps").has_value());
}

TEST_CASE("label space errors") {
  TempDir dir("labels_err");
  testutil::write_png(dir / "only/a.png", 8, 8, 10);
  CHECK(code_of([&] { scan_label_space(dir.path()); }) == ErrorCode::EmptyDataset);
  CHECK(code_of([&] { scan_label_space(dir / "missing"); }) == ErrorCode::UnreadableRoot);
  CHECK_THROWS_AS(LabelSpace({"a", "a"}), Error);
}

TEST_CASE("102 class folders give 102 labels") {
  TempDir dir("labels102");
  for (int c = 0; c < 102; ++c) {
    testutil::write_png(dir / (fmt::format("{:03d}", c) + "/x.png"), 4, 4, c);
  }
  CHECK(scan_label_space(dir.path()).count() == 102);
}

TEST_CASE("split of 10 records is 7/1/2") {
  auto s = make_random_split(synthetic_records({10}), SplitRatios{}, 0);
  CHECK(s.train.size() == 7);
  CHECK(s.val.size() == 1);
  CHECK(s.test.size() == 2);
}

TEST_CASE("stratified split covers every record once") {
  // 4508 records over 40 classes of 113 or 112 images
  std::vector<int> sizes;
  for (int c = 0; c < 40; ++c) sizes.push_back(c < 28 ? 113 : 112);
  auto records = synthetic_records(sizes);
  REQUIRE(records.size() == 4508);
  auto s = make_random_split(records, SplitRatios{}, 5);
  CHECK(s.train.size() + s.val.size() + s.test.size() == 4508);

  std::map<int, std::set<std::string>> seen;
  std::map<int, int> counts;
  for (const auto* m : {&s.train, &s.val, &s.test}) {
    for (const auto& r : m->records) {
      CHECK(seen[r.label].insert(r.path).second);  // disjoint
      ++counts[r.label];
    }
  }
  for (int c = 0; c < 40; ++c) CHECK(counts[c] == sizes[c]);
}

TEST_CASE("per-class counts are floor(n * ratio) with the rest in train") {
  auto s = make_random_split(synthetic_records({100, 37, 3}), SplitRatios{}, 1);
  std::map<std::pair<std::string, int>, int> n;
  for (const auto* m : {&s.train, &s.val, &s.test}) {
    for (const auto& r : m->records) ++n[{m->split_name, r.label}];
  }
  CHECK(n[{"val", 0}] == 10);
  CHECK(n[{"test", 0}] == 20);
  CHECK(n[{"train", 0}] == 70);
  CHECK(n[{"val", 1}] == 3);
  CHECK(n[{"test", 1}] == 7);
  CHECK(n[{"train", 1}] == 27);
  // three samples still reach all three splits
  CHECK(n[{"val", 2}] == 1);
  CHECK(n[{"test", 2}] == 1);
  CHECK(n[{"train", 2}] == 1);
}

TEST_CASE("split determinism and seed sensitivity") {
  auto records = synthetic_records({30, 30, 30});
  auto a = make_random_split(records, SplitRatios{}, 1);
  auto b = make_random_split(records, SplitRatios{}, 1);
  auto c = make_random_split(records, SplitRatios{}, 2);
  CHECK(a.test.records == b.test.records);
  CHECK(a.train.records == b.train.records);
  CHECK(a.test.size() == c.test.size());
  CHECK(a.test.records != c.test.records);
}

TEST_CASE("split rejects tiny classes and bad ratios") {
  CHECK(code_of([] { make_random_split(synthetic_records({10, 2}), SplitRatios{}, 0); }) ==
        ErrorCode::ClassTooSmall);
  CHECK_THROWS_AS(SplitRatios::parse("0.5,0.5,0.5").validate(), Error);
  CHECK_THROWS_AS(SplitRatios::parse("0.7,0.3"), Error);
  auto r = SplitRatios::parse("0.6,0.2,0.2");
  CHECK(r.train == doctest::Approx(0.6));
}

TEST_CASE("fixed split lists") {
  TempDir dir("fixed");
  LabelSpace labels(std::vector<std::string>{"a", "b", "c"});
  testutil::write_file(dir / "ok.txt", "x/1.jpg 0\nfolder with space/2.jpg 2\n\ny/3.jpg 1\n");
  auto m = load_fixed_split(dir / "ok.txt", labels, "train");
  REQUIRE(m.size() == 3);
  CHECK(m.records[0] == ImageRecord{"x/1.jpg", 0});
  CHECK(m.records[1] == ImageRecord{"folder with space/2.jpg", 2});
  CHECK(m.records[2] == ImageRecord{"y/3.jpg", 1});

  testutil::write_file(dir / "empty.txt", "");
  CHECK(load_fixed_split(dir / "empty.txt", labels).size() == 0);

  testutil::write_file(dir / "range.txt", "img.jpg 999\n");
  CHECK(code_of([&] { load_fixed_split(dir / "range.txt", labels); }) == ErrorCode::LabelOutOfRange);

  testutil::write_file(dir / "bad.txt", "a.jpg 0\nno_label_here\n");
  try {
    load_fixed_split(dir / "bad.txt", labels);
    FAIL("expected MalformedLine");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MalformedLine);
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("manifest and label files round trip") {
  TempDir dir("manifest");
  SplitManifest m{"val", {{"a/1.png", 0}, {"b/2.png", 1}}};
  LabelSpace labels(std::vector<std::string>{"a", "b"});
  save_manifest(m, dir / "val.txt");
  save_label_space(labels, dir / "labels.txt");
  CHECK(load_fixed_split(dir / "val.txt", labels).records == m.records);
  CHECK(load_label_space(dir / "labels.txt") == labels);
}

TEST_CASE("batch stream sizes, order and determinism") {
  TempDir dir("stream");
  SplitManifest m;
  m.split_name = "train";
  for (int i = 0; i < 100; ++i) {
    const std::string rel = "c" + std::to_string(i % 2) + "/" + std::to_string(i) + ".png";
    testutil::write_png(dir / rel, 20 + i % 5, 24, i);
    m.records.push_back({rel, i % 2});
  }
  PreprocessSpec prep;
  prep.short_side = 16;
  prep.crop = 12;

  SUBCASE("eval keeps manifest order with a partial last batch") {
    BatchStream s(m, dir.path(), prep, 32, Mode::Eval, 0);
    CHECK(s.batch_count() == 4);
    std::vector<long> sizes;
    std::vector<std::int64_t> labels;
    while (auto b = s.next()) {
      sizes.push_back(b->images.size(0));
      CHECK(b->images.sizes() == torch::IntArrayRef({b->images.size(0), 3, 12, 12}));
      for (int i = 0; i < b->labels.size(0); ++i) labels.push_back(b->labels[i].item<std::int64_t>());
    }
    CHECK(sizes == std::vector<long>{32, 32, 32, 4});
    for (int i = 0; i < 100; ++i) CHECK(labels[i] == m.records[i].label);
  }

  SUBCASE("train mode repeats for a fixed seed and epoch") {
    auto trace = [&](std::uint64_t seed, int epoch, int workers) {
      BatchStream s(m, dir.path(), prep, 16, Mode::Train, seed, epoch, workers);
      std::vector<torch::Tensor> images;
      while (auto b = s.next()) images.push_back(b->images);
      return std::make_pair(s.order(), torch::cat(images));
    };
    auto [o1, x1] = trace(3, 0, 1);
    auto [o2, x2] = trace(3, 0, 1);
    auto [o3, x3] = trace(3, 1, 1);
    auto [o4, x4] = trace(3, 0, 3);
    CHECK(o1 == o2);
    CHECK(torch::equal(x1, x2));
    CHECK(o1 != o3);
    CHECK(o1 == o4);
    CHECK(torch::equal(x1, x4));  // worker count does not change the stream
  }
}

TEST_CASE("undecodable images are skipped") {
  TempDir dir("skip");
  testutil::write_png(dir / "a/ok.png", 16, 16, 1);
  testutil::write_file(dir / "a/broken.png", "not an image");
  SplitManifest m{"test", {{"a/ok.png", 0}, {"a/broken.png", 0}, {"a/ok.png", 1}}};
  PreprocessSpec prep;
  prep.short_side = 16;
  prep.crop = 16;
  BatchStream s(m, dir.path(), prep, 8, Mode::Eval, 0);
  auto b = s.next();
  REQUIRE(b.has_value());
  CHECK(b->images.size(0) == 2);
  CHECK(b->positions == std::vector<int>{0, 2});
  CHECK(s.skipped().size() == 1);
}

TEST_CASE("split directory round trip") {
  TempDir dir("splitdir");
  DatasetSplits d;
  d.root = "/data/pests";
  d.labels = LabelSpace(std::vector<std::string>{"x", "y"});
  d.train = {"train", {{"x/1.png", 0}}};
  d.val = {"val", {{"y/2.png", 1}}};
  d.test = {"test", {{"x/3.png", 0}, {"y/4.png", 1}}};
  d.save(dir.path());
  auto back = DatasetSplits::load(dir.path());
  CHECK(back.root == d.root);
  CHECK(back.labels == d.labels);
  CHECK(back.test.records == d.test.records);
}
