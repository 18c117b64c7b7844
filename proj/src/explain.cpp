#include "pestnet/explain.hpp"

#include <algorithm>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "pestnet/error.hpp"

namespace pestnet {

Heatmap grad_cam_from(const torch::Tensor& activation, const torch::Tensor& gradient) {
  if (activation.dim() != 3 || !activation.sizes().equals(gradient.sizes())) {
    throw Error(ErrorCode::UnsupportedLayer, "grad_cam", "expected matching K x h x w tensors");
  }
  auto a = activation.detach().to(torch::kFloat64);
  auto g = gradient.detach().to(torch::kFloat64);
  auto weights = g.mean({1, 2}, /*keepdim=*/true);
  auto cam = torch::relu((weights * a).sum(0)).contiguous();
  const double peak = cam.max().item<double>();
  if (peak > 0.0) cam = cam / peak;
  cam = cam.contiguous();

  Heatmap h;
  h.rows = static_cast<int>(cam.size(0));
  h.cols = static_cast<int>(cam.size(1));
  h.values.assign(cam.data_ptr<double>(), cam.data_ptr<double>() + cam.numel());
  return h;
}

Heatmap grad_cam(ClassifierImpl& model, const torch::Tensor& image, int target_class) {
  const bool was_training = model.is_training();
  model.eval();
  torch::Tensor x = image.dim() == 3 ? image.unsqueeze(0) : image;
  CamCapture cap = model.forward_with_activation(x);
  if (!cap.activation.defined() || cap.activation.dim() != 4 || !cap.activation.requires_grad()) {
    model.train(was_training);
    throw Error(ErrorCode::UnsupportedLayer, "grad_cam",
                model_tag(model.kind()) + " does not expose its last extractor block");
  }
  if (target_class < 0 || target_class >= cap.logits.size(1)) {
    model.train(was_training);
    throw Error(ErrorCode::LabelOutOfRange, "grad_cam", "target class " + std::to_string(target_class));
  }
  auto score = cap.logits.select(0, 0).select(0, target_class);
  auto grads = torch::autograd::grad({score}, {cap.activation});
  model.train(was_training);
  Heatmap h = grad_cam_from(cap.activation[0], grads[0][0]);
  h.source_layer = model.kind() == ModelKind::Ran ? "tail" : "backbone.layer4";
  h.target_class = target_class;
  return h;
}

cv::Mat render_overlay(const Heatmap& heatmap, const cv::Mat& image) {
  CV_Assert(image.type() == CV_8UC3);
  cv::Mat small(heatmap.rows, heatmap.cols, CV_32F);
  for (int r = 0; r < heatmap.rows; ++r) {
    for (int c = 0; c < heatmap.cols; ++c) small.at<float>(r, c) = static_cast<float>(heatmap.at(r, c));
  }
  cv::Mat up;
  cv::resize(small, up, image.size(), 0, 0, cv::INTER_LINEAR);
  cv::Mat gray;
  up.convertTo(gray, CV_8U, 255.0);
  cv::Mat color;
  cv::applyColorMap(gray, color, kOverlayColormap);
  cv::Mat out;
  cv::addWeighted(image, 1.0 - kOverlayAlpha, color, kOverlayAlpha, 0.0, out);
  return out;
}

void overlay(const Heatmap& heatmap, const cv::Mat& image, const std::filesystem::path& out) {
  cv::Mat blended = render_overlay(heatmap, image);
  bool ok = false;
  try {
    ok = cv::imwrite(out.string(), blended);
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::WriteFailure, "overlay", out.string() + ": " + e.what());
  }
  if (!ok) throw Error(ErrorCode::WriteFailure, "overlay", out.string());
}

}  // namespace pestnet
