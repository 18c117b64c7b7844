#pragma once

#include <array>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/batchnorm.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/dropout.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/pimpl.h>

#include "pestnet/model.hpp"

namespace pestnet {

/// Pre-activation bottleneck: x + conv1x1(BR(conv3x3(BR(conv1x1(BR(x)))))),
/// BR = batch norm + ReLU. A strided 1x1 projection of BR(x) replaces the
/// identity when the shape changes.
class PreActUnitImpl : public torch::nn::Module {
 public:
  PreActUnitImpl(int in_channels, int out_channels, int stride = 1);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, bn3_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
  torch::nn::Conv2d projection_{nullptr};
};
TORCH_MODULE(PreActUnit);

struct AttentionModuleSpec {
  int channels = 256;
  int trunk_depth = 2;       // pre-activation units in the trunk
  int mask_downsamples = 1;  // max-pool steps in the mask hourglass
  int pre_post_units = 1;    // units before the split and after the merge
};

/// Intermediates of one attention module evaluation.
struct AttentionTrace {
  torch::Tensor trunk;     // F
  torch::Tensor mask;      // M, same shape as F, values in [0, 1]
  torch::Tensor combined;  // H = (1 + M) * F
};

class AttentionModuleImpl : public torch::nn::Module {
 public:
  explicit AttentionModuleImpl(AttentionModuleSpec spec);

  torch::Tensor forward(const torch::Tensor& x);
  /// Same as forward(); `trace` receives F, M and H when non-null.
  torch::Tensor forward_traced(const torch::Tensor& x, AttentionTrace* trace);

  /// Mask branch on an already pre-processed input (the trunk's input).
  torch::Tensor mask_branch(const torch::Tensor& x);
  torch::Tensor trunk_branch(const torch::Tensor& x);

  const AttentionModuleSpec& spec() const { return spec_; }

 private:
  AttentionModuleSpec spec_;
  torch::nn::Sequential pre_{nullptr}, trunk_{nullptr}, post_{nullptr};
  torch::nn::ModuleList down_{nullptr}, skip_{nullptr}, up_{nullptr};
  torch::nn::Sequential mask_head_{nullptr};
};
TORCH_MODULE(AttentionModule);

/// Pure form of the residual attention merge: (1 + mask) * trunk.
torch::Tensor attention_merge(const torch::Tensor& mask, const torch::Tensor& trunk);

/// mask_branch / attention_module with the channel contract enforced
/// (ShapeMismatch otherwise). attention_module returns H.
torch::Tensor mask_branch(AttentionModule& module, const torch::Tensor& x);
torch::Tensor attention_module(AttentionModule& module, const torch::Tensor& x);

struct RanConfig {
  int base_width = 64;
  int modules_per_stage = 1;
};

/// Attention-56 layout: stem, then three (residual unit, attention modules)
/// stages with 3, 2 and 1 mask downsamplings, then three residual units at
/// stride 32 and a pooled linear head.
class RanClassifierImpl : public ClassifierImpl {
 public:
  RanClassifierImpl(RanConfig config, int num_classes, double drop_rate = 0.0);

  torch::Tensor forward(const torch::Tensor& x) override;
  CamCapture forward_with_activation(const torch::Tensor& x) override;
  ModelKind kind() const override { return ModelKind::Ran; }

  /// Forward that records every attention module's intermediates.
  torch::Tensor forward_traced(const torch::Tensor& x, std::vector<AttentionTrace>* traces);

 private:
  torch::Tensor features(const torch::Tensor& x, std::vector<AttentionTrace>* traces);

  RanConfig config_;
  torch::nn::Sequential stem_{nullptr};
  std::array<PreActUnit, 3> stage_entry_{nullptr, nullptr, nullptr};
  std::array<torch::nn::ModuleList, 3> attention_{nullptr, nullptr, nullptr};
  torch::nn::Sequential tail_{nullptr};
  torch::nn::Dropout dropout_{nullptr};
  torch::nn::Linear fc_{nullptr};
};

}  // namespace pestnet
