#include "pestnet/backbone.hpp"

#include <string>

#include <torch/torch.h>

#include "pestnet/error.hpp"

namespace pestnet {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv(int in, int out, int kernel, int stride = 1, int padding = 0) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(false));
}

std::string shape_str(const torch::Tensor& t) {
  std::string s;
  for (auto d : t.sizes()) s += (s.empty() ? "" : "x") + std::to_string(d);
  return s;
}

}  // namespace

BottleneckImpl::BottleneckImpl(const ResidualBlockSpec& spec) : spec_(spec) {
  conv1_ = register_module("conv1", conv(spec.in_channels, spec.mid_channels, 1));
  bn1_ = register_module("bn1", nn::BatchNorm2d(spec.mid_channels));
  conv2_ = register_module("conv2", conv(spec.mid_channels, spec.mid_channels, 3, spec.stride, 1));
  bn2_ = register_module("bn2", nn::BatchNorm2d(spec.mid_channels));
  conv3_ = register_module("conv3", conv(spec.mid_channels, spec.out_channels, 1));
  bn3_ = register_module("bn3", nn::BatchNorm2d(spec.out_channels));
  if (spec.stride != 1 || spec.in_channels != spec.out_channels) {
    projection_ = register_module(
        "projection",
        nn::Sequential(conv(spec.in_channels, spec.out_channels, 1, spec.stride),
                       nn::BatchNorm2d(spec.out_channels)));
  }
}

torch::Tensor BottleneckImpl::transform(const torch::Tensor& x) {
  auto h = torch::relu(bn1_(conv1_(x)));
  h = torch::relu(bn2_(conv2_(h)));
  return bn3_(conv3_(h));
}

torch::Tensor BottleneckImpl::skip(const torch::Tensor& x) {
  return projection_.is_empty() ? x : projection_->forward(x);
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
  return torch::relu(transform(x) + skip(x));
}

torch::Tensor residual_block(const torch::Tensor& x, Bottleneck& block) {
  if (x.dim() != 4 || x.size(1) != block->spec().in_channels) {
    throw Error(ErrorCode::ShapeMismatch, "residual_block",
                "input " + shape_str(x) + ", expected " +
                    std::to_string(block->spec().in_channels) + " channels");
  }
  return block->forward(x);
}

ResNetBackboneImpl::ResNetBackboneImpl(ResNetConfig config) : config_(std::move(config)) {
  if (config_.blocks.size() != 4) {
    throw Error(ErrorCode::InvalidConfig, "ResNetBackbone", "resnet_blocks needs four stages");
  }
  const int w = config_.base_width;
  stem_ = register_module(
      "stem", nn::Sequential(conv(3, w, 7, 2, 3), nn::BatchNorm2d(w), nn::ReLU(),
                             nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1))));
  int in = w;
  for (int s = 0; s < 4; ++s) {
    nn::Sequential stage;
    const int out = config_.stage_channels(s);
    const int mid = out / 4;
    for (int b = 0; b < config_.blocks[s]; ++b) {
      ResidualBlockSpec spec{in, mid, out, (b == 0 && s > 0) ? 2 : 1};
      stage->push_back(Bottleneck(spec));
      in = out;
    }
    stages_[s] = register_module("layer" + std::to_string(s + 1), stage);
  }
}

FeatureStack ResNetBackboneImpl::forward(const torch::Tensor& x) {
  FeatureStack fs;
  auto h = stem_->forward(x);
  fs.c2 = stages_[0]->forward(h);
  fs.c3 = stages_[1]->forward(fs.c2);
  fs.c4 = stages_[2]->forward(fs.c3);
  fs.c5 = stages_[3]->forward(fs.c4);
  return fs;
}

FeatureStack extract_features(ResNetBackbone& backbone, const torch::Tensor& image) {
  torch::Tensor x = image.dim() == 3 ? image.unsqueeze(0) : image;
  if (x.dim() != 4 || x.size(1) != 3) {
    throw Error(ErrorCode::ShapeMismatch, "extract_features", "input " + shape_str(image));
  }
  if (x.size(2) < 64 || x.size(3) < 64) {
    throw Error(ErrorCode::InputTooSmall, "extract_features",
                "input " + shape_str(image) + ", need H, W >= 64");
  }
  return backbone->forward(x);
}

ResNetClassifierImpl::ResNetClassifierImpl(ResNetConfig config, int num_classes,
                                           double drop_rate) {
  const int feat = config.stage_channels(3);
  backbone_ = register_module("backbone", ResNetBackbone(std::move(config)));
  dropout_ = register_module("dropout", nn::Dropout(drop_rate));
  fc_ = register_module("fc", nn::Linear(feat, num_classes));
  init_weights(*this);
}

torch::Tensor ResNetClassifierImpl::classify(const FeatureStack& stack) {
  auto pooled = stack.c5.mean({2, 3});
  return fc_(dropout_(pooled));
}

torch::Tensor ResNetClassifierImpl::forward(const torch::Tensor& x) {
  return classify(extract_features(backbone_, x));
}

CamCapture ResNetClassifierImpl::forward_with_activation(const torch::Tensor& x) {
  auto stack = extract_features(backbone_, x);
  return {classify(stack), stack.c5};
}

void init_weights(torch::nn::Module& module) {
  torch::NoGradGuard guard;
  for (auto& m : module.modules(/*include_self=*/false)) {
    if (auto* c = m->as<nn::Conv2d>()) {
      nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanOut, torch::kReLU);
      if (c->bias.defined()) c->bias.zero_();
    } else if (auto* bn = m->as<nn::BatchNorm2d>()) {
      bn->weight.fill_(1.0);
      bn->bias.zero_();
    } else if (auto* fc = m->as<nn::Linear>()) {
      nn::init::normal_(fc->weight, 0.0, 0.01);
      fc->bias.zero_();
    }
  }
}

}  // namespace pestnet
