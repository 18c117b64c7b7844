#pragma once

#include <array>

#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/dropout.h>
#include <torch/nn/modules/linear.h>

#include "pestnet/backbone.hpp"
#include "pestnet/model.hpp"

namespace pestnet {

/// P2..P5, all with the same channel width.
struct PyramidStack {
  std::array<torch::Tensor, 4> levels;
};

/// Nearest-neighbour upsampling of `top_down` to the spatial size of `like`.
torch::Tensor upsample_nearest(const torch::Tensor& top_down, const torch::Tensor& like);

/// conv1x1(c_level) + upsample(top_down). Throws ShapeMismatch when the
/// projected lateral and the top-down map disagree in channels, or when the
/// top-down map is not half the lateral's size (rounded up).
torch::Tensor lateral_merge(const torch::Tensor& c_level, const torch::Tensor& top_down,
                            torch::nn::Conv2d& lateral);

/// 3x3, padding 1, channel preserving.
torch::Tensor smooth(const torch::Tensor& merged, torch::nn::Conv2d& smoother);

class FpnClassifierImpl : public ClassifierImpl {
 public:
  FpnClassifierImpl(ResNetConfig config, int num_classes, int channels = 256,
                    FpnHead head = FpnHead::Concat, double drop_rate = 0.0);

  torch::Tensor forward(const torch::Tensor& x) override;
  CamCapture forward_with_activation(const torch::Tensor& x) override;
  ModelKind kind() const override { return ModelKind::Fpn; }

  PyramidStack build_pyramid(const FeatureStack& stack);
  /// Pooled level vectors concatenated: N x 4d.
  torch::Tensor pooled_features(const PyramidStack& pyramid);
  /// Pyramid -> pooled -> classifier logits.
  torch::Tensor classify(const FeatureStack& stack);

  int channels() const { return channels_; }
  ResNetBackbone& backbone() { return backbone_; }
  torch::nn::Conv2d& lateral(int level) { return lateral_[level]; }
  torch::nn::Conv2d& smoother(int level) { return smooth_[level]; }
  torch::nn::Linear& fc() { return fc_; }
  torch::nn::ModuleList& level_heads() { return level_fc_; }

 private:
  int channels_;
  FpnHead head_;
  ResNetBackbone backbone_{nullptr};
  std::array<torch::nn::Conv2d, 4> lateral_{nullptr, nullptr, nullptr, nullptr};
  std::array<torch::nn::Conv2d, 4> smooth_{nullptr, nullptr, nullptr, nullptr};
  torch::nn::Dropout dropout_{nullptr};
  torch::nn::Linear fc_{nullptr};
  torch::nn::ModuleList level_fc_{nullptr};
};

}  // namespace pestnet
