#pragma once

#include <vector>

#include <torch/nn/modules/linear.h>

#include "pestnet/backbone.hpp"
#include "pestnet/model.hpp"

namespace pestnet {

/// Half-open pixel rectangle [row0, row1) x [col0, col1).
struct BoundingBox {
  int row0 = 0;
  int col0 = 0;
  int row1 = 0;
  int col1 = 0;

  int height() const { return row1 - row0; }
  int width() const { return col1 - col0; }
  long area() const { return static_cast<long>(height()) * width(); }
  bool operator==(const BoundingBox&) const = default;
};

double iou(const BoundingBox& a, const BoundingBox& b);

/// Dense 2-D activation map, row-major.
struct ActivationMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
  /// Channel sum of a K x h x w tensor.
  static ActivationMap channel_sum(const torch::Tensor& chw);
};

struct AolmResult {
  BoundingBox box;
  bool fallback = false;  // empty mask: box is the whole image
};

/// Cell-level mask helpers, exposed for inspection and tests.
std::vector<unsigned char> mean_threshold_mask(const ActivationMap& map);

/// Object box from two activation maps: each map is thresholded strictly
/// above its own mean, the coarse mask is nearest-upsampled to the fine
/// grid, the masks are intersected, and the bounds of the largest
/// 4-connected component (first in row-major order on ties) are scaled to
/// pixels by the fine grid's stride.
AolmResult aolm_locate(const ActivationMap& fine, const ActivationMap& coarse, int input_rows,
                       int input_cols);

/// Tensor front end: c4 and c5 are K x h x w maps of one image.
AolmResult aolm_locate(const torch::Tensor& c4, const torch::Tensor& c5, int input_rows,
                       int input_cols);

struct PartProposal {
  BoundingBox box;  // pixels
  double score = 0.0;
  int scale_id = 0;
  BoundingBox cells;  // window position on the activation grid
};

/// For each window size: score every placement by mean activation, sort by
/// score (row-major order breaks ties), greedily keep windows whose IoU
/// with all kept windows of that scale is <= nms_iou, stop at top_k[s].
/// Throws WindowTooLarge when a window does not fit the map.
std::vector<PartProposal> appm_propose(const ActivationMap& map,
                                       const std::vector<WindowSize>& windows,
                                       const std::vector<int>& top_k, double nms_iou,
                                       int input_rows, int input_cols);

enum class Phase { Train, Test };

struct MmalOutputs {
  torch::Tensor raw_logits;     // N x C
  torch::Tensor object_logits;  // N x C
  torch::Tensor part_logits;    // (N * parts) x C, undefined in test phase
  int parts_per_image = 0;
  std::vector<AolmResult> object_boxes;
  std::vector<std::vector<PartProposal>> parts;
};

/// Mean of raw and object logits followed by softmax (row-wise).
torch::Tensor mmal_predict(const MmalOutputs& outputs, bool include_parts = false);

/// Crops `box` out of a normalized N x 3 x H x W batch element and resizes
/// it bilinearly to size x size.
torch::Tensor crop_and_resize(const torch::Tensor& image, const BoundingBox& box, int size);

struct BranchWeights {
  double raw = 1.0;
  double object = 1.0;
  double parts = 1.0;
};

class MmalNetImpl : public ClassifierImpl {
 public:
  MmalNetImpl(ResNetConfig config, const ModelSpec& spec);

  /// Inference logits: mean of raw and object logits (plus parts when
  /// configured).
  torch::Tensor forward(const torch::Tensor& x) override;
  TrainStep train_step(const torch::Tensor& x, const torch::Tensor& labels) override;
  /// Raw branch logits and its C5 activation.
  CamCapture forward_with_activation(const torch::Tensor& x) override;
  ModelKind kind() const override { return ModelKind::Mmal; }

  MmalOutputs run(const torch::Tensor& x, Phase phase);

  void set_branch_weights(BranchWeights w) { weights_ = w; }
  ResNetBackbone& backbone() { return backbone_; }
  torch::nn::Linear& fc() { return fc_; }

 private:
  torch::Tensor classify(const torch::Tensor& x, FeatureStack* stack_out);

  ModelSpec spec_;
  BranchWeights weights_;
  ResNetBackbone backbone_{nullptr};
  torch::nn::Linear fc_{nullptr};
};

}  // namespace pestnet
