#pragma once

#include <array>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/batchnorm.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/dropout.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/pimpl.h>

#include "pestnet/model.hpp"

namespace pestnet {

struct ResidualBlockSpec {
  int in_channels = 64;
  int mid_channels = 64;
  int out_channels = 256;
  int stride = 1;
};

/// Bottleneck residual block: relu(transform(x) + skip(x)), where
/// transform is 1x1 -> 3x3 (strided) -> 1x1 with batch norm, and skip is the
/// identity when shapes agree and a strided 1x1 projection otherwise.
class BottleneckImpl : public torch::nn::Module {
 public:
  explicit BottleneckImpl(const ResidualBlockSpec& spec);

  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor transform(const torch::Tensor& x);
  torch::Tensor skip(const torch::Tensor& x);

  const ResidualBlockSpec& spec() const { return spec_; }
  bool has_projection() const { return !projection_.is_empty(); }

 private:
  ResidualBlockSpec spec_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, bn3_{nullptr};
  torch::nn::Sequential projection_{nullptr};
};
TORCH_MODULE(Bottleneck);

/// Applies one bottleneck block; throws ShapeMismatch when x does not carry
/// spec.in_channels channels.
torch::Tensor residual_block(const torch::Tensor& x, Bottleneck& block);

/// C2..C5 at strides 4, 8, 16, 32.
struct FeatureStack {
  torch::Tensor c2, c3, c4, c5;

  static constexpr std::array<int, 4> kStrides{4, 8, 16, 32};
  std::array<torch::Tensor, 4> levels() const { return {c2, c3, c4, c5}; }
};

struct ResNetConfig {
  int base_width = 64;
  std::vector<int> blocks{3, 4, 6, 3};

  /// Output channels of stage k (0-based): base_width * 4 * 2^k.
  int stage_channels(int stage) const { return base_width * 4 * (1 << stage); }
};

class ResNetBackboneImpl : public torch::nn::Module {
 public:
  explicit ResNetBackboneImpl(ResNetConfig config = {});

  FeatureStack forward(const torch::Tensor& x);

  const ResNetConfig& config() const { return config_; }

 private:
  ResNetConfig config_;
  torch::nn::Sequential stem_{nullptr};
  std::array<torch::nn::Sequential, 4> stages_{nullptr, nullptr, nullptr, nullptr};
};
TORCH_MODULE(ResNetBackbone);

/// Validates the input shape (N x 3 x H x W or 3 x H x W, H, W >= 64) and
/// runs the extractor. A 3-D input yields batch size 1.
FeatureStack extract_features(ResNetBackbone& backbone, const torch::Tensor& image);

/// Baseline classifier: GAP(C5) -> dropout -> linear.
class ResNetClassifierImpl : public ClassifierImpl {
 public:
  ResNetClassifierImpl(ResNetConfig config, int num_classes, double drop_rate);

  torch::Tensor forward(const torch::Tensor& x) override;
  CamCapture forward_with_activation(const torch::Tensor& x) override;
  ModelKind kind() const override { return ModelKind::ResNet50; }

  /// Head only, on a precomputed stack.
  torch::Tensor classify(const FeatureStack& stack);

  ResNetBackbone& backbone() { return backbone_; }
  torch::nn::Linear& fc() { return fc_; }

 private:
  ResNetBackbone backbone_{nullptr};
  torch::nn::Dropout dropout_{nullptr};
  torch::nn::Linear fc_{nullptr};
};

/// He-normal convolutions, unit/zero batch norm, zero-bias linear layers.
void init_weights(torch::nn::Module& module);

}  // namespace pestnet
