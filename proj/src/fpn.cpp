#include "pestnet/fpn.hpp"

#include <string>

#include <torch/torch.h>

#include "pestnet/error.hpp"

namespace pestnet {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

torch::Tensor upsample_nearest(const torch::Tensor& top_down, const torch::Tensor& like) {
  return F::interpolate(top_down,
                        F::InterpolateFuncOptions()
                            .size(std::vector<int64_t>{like.size(2), like.size(3)})
                            .mode(torch::kNearest));
}

torch::Tensor lateral_merge(const torch::Tensor& c_level, const torch::Tensor& top_down,
                            nn::Conv2d& lateral) {
  if (c_level.dim() != 4 || c_level.size(1) != lateral->options.in_channels()) {
    throw Error(ErrorCode::ShapeMismatch, "lateral_merge", "bottom-up channel count");
  }
  if (top_down.dim() != 4 || top_down.size(1) != lateral->options.out_channels() ||
      top_down.size(0) != c_level.size(0) || (c_level.size(2) + 1) / 2 != top_down.size(2) ||
      (c_level.size(3) + 1) / 2 != top_down.size(3)) {
    throw Error(ErrorCode::ShapeMismatch, "lateral_merge", "top-down map shape");
  }
  return lateral(c_level) + upsample_nearest(top_down, c_level);
}

torch::Tensor smooth(const torch::Tensor& merged, nn::Conv2d& smoother) {
  return smoother(merged);
}

FpnClassifierImpl::FpnClassifierImpl(ResNetConfig config, int num_classes, int channels,
                                     FpnHead head, double drop_rate)
    : channels_(channels), head_(head) {
  backbone_ = register_module("backbone", ResNetBackbone(config));
  for (int l = 0; l < 4; ++l) {
    lateral_[l] = register_module("lateral" + std::to_string(l + 2),
                                  nn::Conv2d(nn::Conv2dOptions(config.stage_channels(l), channels, 1)));
    smooth_[l] = register_module("smooth" + std::to_string(l + 2),
                                 nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
  }
  dropout_ = register_module("dropout", nn::Dropout(drop_rate));
  fc_ = register_module("fc", nn::Linear(4 * channels, num_classes));
  level_fc_ = register_module("level_fc", nn::ModuleList());
  if (head_ == FpnHead::PerLevelMean) {
    for (int l = 0; l < 4; ++l) level_fc_->push_back(nn::Linear(channels, num_classes));
  }
  init_weights(*this);
}

PyramidStack FpnClassifierImpl::build_pyramid(const FeatureStack& stack) {
  const auto c = stack.levels();
  PyramidStack p;
  auto top = lateral_[3](c[3]);
  p.levels[3] = smooth(top, smooth_[3]);
  for (int l = 2; l >= 0; --l) {
    top = lateral_merge(c[l], top, lateral_[l]);
    p.levels[l] = smooth(top, smooth_[l]);
  }
  return p;
}

torch::Tensor FpnClassifierImpl::pooled_features(const PyramidStack& pyramid) {
  std::vector<torch::Tensor> pooled;
  for (const auto& level : pyramid.levels) pooled.push_back(level.mean({2, 3}));
  return torch::cat(pooled, 1);
}

torch::Tensor FpnClassifierImpl::classify(const FeatureStack& stack) {
  auto pooled = dropout_(pooled_features(build_pyramid(stack)));
  if (head_ == FpnHead::Concat) return fc_(pooled);
  torch::Tensor sum;
  for (int l = 0; l < 4; ++l) {
    auto logits = level_fc_[l]->as<nn::Linear>()->forward(
        pooled.narrow(1, static_cast<int64_t>(l) * channels_, channels_));
    sum = sum.defined() ? sum + logits : logits;
  }
  return sum / 4.0;
}

torch::Tensor FpnClassifierImpl::forward(const torch::Tensor& x) {
  return classify(extract_features(backbone_, x));
}

CamCapture FpnClassifierImpl::forward_with_activation(const torch::Tensor& x) {
  auto stack = extract_features(backbone_, x);
  return {classify(stack), stack.c5};
}

}  // namespace pestnet
