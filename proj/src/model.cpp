#include "pestnet/model.hpp"

#include <torch/torch.h>

#include "pestnet/backbone.hpp"
#include "pestnet/error.hpp"
#include "pestnet/fpn.hpp"
#include "pestnet/loss.hpp"
#include "pestnet/mmal.hpp"
#include "pestnet/ran.hpp"

namespace pestnet {

std::string model_tag(ModelKind kind) {
  switch (kind) {
    case ModelKind::ResNet50: return "resnet50";
    case ModelKind::Ran: return "ran";
    case ModelKind::Fpn: return "fpn";
    case ModelKind::Mmal: return "mmal";
  }
  return "unknown";
}

ModelKind parse_model_tag(const std::string& tag) {
  if (tag == "resnet50") return ModelKind::ResNet50;
  if (tag == "ran") return ModelKind::Ran;
  if (tag == "fpn") return ModelKind::Fpn;
  if (tag == "mmal") return ModelKind::Mmal;
  throw Error(ErrorCode::InvalidConfig, "parse_model_tag", "unknown model '" + tag + "'");
}

TrainStep ClassifierImpl::train_step(const torch::Tensor& x, const torch::Tensor& labels) {
  auto logits = forward(x);
  return {batch_cross_entropy(logits, labels), logits.detach()};
}

Classifier make_model(const ModelSpec& spec) {
  if (spec.num_classes < 2) {
    throw Error(ErrorCode::InvalidConfig, "make_model", "need at least two classes");
  }
  ResNetConfig resnet{spec.base_width, spec.resnet_blocks};
  switch (spec.kind) {
    case ModelKind::ResNet50:
      return std::make_shared<ResNetClassifierImpl>(resnet, spec.num_classes, spec.drop_rate);
    case ModelKind::Ran:
      return std::make_shared<RanClassifierImpl>(
          RanConfig{spec.base_width, spec.ran_modules_per_stage}, spec.num_classes, spec.drop_rate);
    case ModelKind::Fpn:
      return std::make_shared<FpnClassifierImpl>(resnet, spec.num_classes, spec.fpn_channels,
                                                 spec.fpn_head, spec.drop_rate);
    case ModelKind::Mmal:
      return std::make_shared<MmalNetImpl>(resnet, spec);
  }
  throw Error(ErrorCode::InvalidConfig, "make_model", "unknown model kind");
}

}  // namespace pestnet
