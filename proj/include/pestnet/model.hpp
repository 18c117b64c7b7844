#pragma once

#include <memory>
#include <string>
#include <vector>

#include <torch/nn/module.h>
#include <torch/types.h>

namespace pestnet {

enum class ModelKind { ResNet50, Ran, Fpn, Mmal };

std::string model_tag(ModelKind kind);
ModelKind parse_model_tag(const std::string& tag);

enum class FpnHead { Concat, PerLevelMean };

struct WindowSize {
  int rows = 1;
  int cols = 1;
  bool operator==(const WindowSize&) const = default;
};

/// Everything needed to rebuild a network's parameter layout. Stored in
/// checkpoints next to the weights.
struct ModelSpec {
  ModelKind kind = ModelKind::ResNet50;
  int num_classes = 2;
  int base_width = 64;                       // ResNet stem width; 64 is ResNet-50
  std::vector<int> resnet_blocks{3, 4, 6, 3};
  double drop_rate = 0.0;
  int input_size = 224;

  int ran_modules_per_stage = 1;             // 1 is Attention-56

  int fpn_channels = 256;
  FpnHead fpn_head = FpnHead::Concat;

  int mmal_part_size = 224;
  std::vector<WindowSize> appm_windows{{2, 2}, {3, 3}, {4, 4}};
  std::vector<int> appm_top_k{3, 2, 2};
  double appm_nms_iou = 0.25;
  bool mmal_parts_at_test = false;
};

struct TrainStep {
  torch::Tensor loss;    // scalar, summed over branches
  torch::Tensor logits;  // N x C, used for running train accuracy
};

struct CamCapture {
  torch::Tensor logits;      // N x C
  torch::Tensor activation;  // N x K x h x w, output of the last extractor block
};

/// Common surface of the four classifiers.
class ClassifierImpl : public torch::nn::Module {
 public:
  ~ClassifierImpl() override = default;

  /// Inference logits (N x C).
  virtual torch::Tensor forward(const torch::Tensor& x) = 0;

  /// Forward in training mode plus the loss to minimize. Default: mean
  /// cross-entropy of forward().
  virtual TrainStep train_step(const torch::Tensor& x, const torch::Tensor& labels);

  /// Logits together with the last feature-extractor block activation,
  /// which stays attached to the autograd graph.
  virtual CamCapture forward_with_activation(const torch::Tensor& x) = 0;

  virtual ModelKind kind() const = 0;
};

using Classifier = std::shared_ptr<ClassifierImpl>;

Classifier make_model(const ModelSpec& spec);

}  // namespace pestnet
