#include <doctest.h>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "pestnet/error.hpp"
#include "pestnet/explain.hpp"
#include "pestnet/mmal.hpp"
#include "test_util.hpp"

using namespace pestnet;

namespace {

// Exposes no extractor activation.
class Opaque : public ClassifierImpl {
 public:
  torch::Tensor forward(const torch::Tensor& x) override { return x.mean({2, 3}); }
  CamCapture forward_with_activation(const torch::Tensor& x) override { return {forward(x), {}}; }
  ModelKind kind() const override { return ModelKind::ResNet50; }
};

ModelSpec tiny(ModelKind kind, int classes) {
  ModelSpec s;
  s.kind = kind;
  s.num_classes = classes;
  s.base_width = 4;
  s.resnet_blocks = {1, 1, 1, 1};
  s.fpn_channels = 8;
  s.input_size = 64;
  s.mmal_part_size = 64;
  s.appm_windows = {{1, 1}};
  s.appm_top_k = {1};
  return s;
}

}  // namespace

TEST_CASE("single positive channel gives a map proportional to it") {
  auto a = torch::zeros({3, 4, 5}, torch::kFloat64);
  a[1] = torch::rand({4, 5}, torch::kFloat64);
  auto g = torch::zeros_like(a);
  g[1].fill_(0.3);
  auto h = grad_cam_from(a, g);
  const double peak = a[1].max().item<double>();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 5; ++c) CHECK(h.at(r, c) == doctest::Approx(a[1][r][c].item<double>() / peak));
  }
}

TEST_CASE("negative-only evidence gives an all-zero map") {
  auto a = torch::rand({4, 6, 6}, torch::kFloat64);
  auto g = -torch::rand({4, 6, 6}, torch::kFloat64);
  auto h = grad_cam_from(a, g);
  for (double v : h.values) CHECK(v == 0.0);
}

TEST_CASE("map values and gradient scaling") {
  torch::manual_seed(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = torch::relu(torch::randn({8, 7, 7}, torch::kFloat64));
    auto g = torch::randn({8, 7, 7}, torch::kFloat64);
    auto h = grad_cam_from(a, g);
    double mx = 0;
    for (double v : h.values) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      mx = std::max(mx, v);
    }
    CHECK((mx == 1.0 || mx == 0.0));
    auto scaled = grad_cam_from(a, g * 17.5);
    for (std::size_t i = 0; i < h.values.size(); ++i) CHECK(std::abs(scaled.values[i] - h.values[i]) < 1e-12);
  }
}

TEST_CASE("model heatmap matches the last block grid") {
  torch::manual_seed(1);
  for (ModelKind kind : {ModelKind::ResNet50, ModelKind::Ran, ModelKind::Fpn, ModelKind::Mmal}) {
    CAPTURE(model_tag(kind));
    auto model = make_model(tiny(kind, 4));
    auto h = grad_cam(*model, torch::randn({3, 64, 64}), 2);
    CHECK(h.target_class == 2);
    CHECK(h.values.size() == static_cast<std::size_t>(h.rows * h.cols));
    if (kind != ModelKind::Ran) CHECK(h.rows == 2);
    CHECK(h.rows > 0);
    for (double v : h.values) CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("full-size MMAL heatmap is 14 x 14 at 448") {
  ModelSpec s;
  s.kind = ModelKind::Mmal;
  s.num_classes = 102;
  s.input_size = 448;
  auto model = make_model(s);
  auto h = grad_cam(*model, torch::randn({3, 448, 448}), 5);
  CHECK(h.rows == 14);
  CHECK(h.cols == 14);
  CHECK(h.source_layer == "backbone.layer4");
}

TEST_CASE("grad_cam errors") {
  Opaque opaque;
  try {
    grad_cam(opaque, torch::randn({3, 8, 8}), 0);
    FAIL("expected UnsupportedLayer");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnsupportedLayer);
  }
  auto model = make_model(tiny(ModelKind::ResNet50, 3));
  for (int bad : {-1, 3}) {
    try {
      grad_cam(*model, torch::randn({3, 64, 64}), bad);
      FAIL("expected LabelOutOfRange");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::LabelOutOfRange);
    }
  }
}

TEST_CASE("zero heatmap overlay follows the blend formula") {
  Heatmap h;
  h.rows = 3;
  h.cols = 3;
  h.values.assign(9, 0.0);
  cv::Mat image(20, 30, CV_8UC3, cv::Scalar(10, 120, 250));
  cv::Mat gray(1, 1, CV_8U, cv::Scalar(0));
  cv::Mat color;
  cv::applyColorMap(gray, color, kOverlayColormap);
  const auto jet0 = color.at<cv::Vec3b>(0, 0);
  auto out = render_overlay(h, image);
  REQUIRE(out.size() == image.size());
  for (int ch = 0; ch < 3; ++ch) {
    const double want = (1 - kOverlayAlpha) * image.at<cv::Vec3b>(0, 0)[ch] + kOverlayAlpha * jet0[ch];
    for (int r = 0; r < 20; ++r) {
      for (int c = 0; c < 30; ++c) CHECK(std::abs(out.at<cv::Vec3b>(r, c)[ch] - want) <= 0.5 + 1e-9);
    }
  }
}

TEST_CASE("overlay file output") {
  testutil::TempDir dir("overlay");
  Heatmap h;
  h.rows = 14;
  h.cols = 14;
  for (int i = 0; i < 196; ++i) h.values.push_back((i % 14) / 13.0);
  cv::Mat image(448, 448, CV_8UC3, cv::Scalar(40, 80, 160));
  overlay(h, image, dir / "a.png");
  overlay(h, image, dir / "b.png");
  auto back = cv::imread((dir / "a.png").string());
  CHECK(back.rows == 448);
  CHECK(back.cols == 448);
  CHECK(testutil::slurp(dir / "a.png") == testutil::slurp(dir / "b.png"));
  try {
    overlay(h, image, dir / "missing" / "x.png");
    FAIL("expected WriteFailure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::WriteFailure);
  }
}
