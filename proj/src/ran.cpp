#include "pestnet/ran.hpp"

#include <string>

#include <torch/torch.h>

#include "pestnet/backbone.hpp"
#include "pestnet/error.hpp"

namespace pestnet {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

nn::Conv2d conv(int in, int out, int kernel, int stride = 1, int padding = 0) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(false));
}

nn::Sequential units(int channels, int count) {
  nn::Sequential seq;
  for (int i = 0; i < count; ++i) seq->push_back(PreActUnit(channels, channels));
  return seq;
}

torch::Tensor resize_to(const torch::Tensor& x, const torch::Tensor& like) {
  if (x.sizes().slice(2) == like.sizes().slice(2)) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{like.size(2), like.size(3)})
                               .mode(torch::kBilinear)
                               .align_corners(true));
}

void require_channels(const torch::Tensor& x, int channels, const char* op) {
  if (x.dim() != 4 || x.size(1) != channels) {
    throw Error(ErrorCode::ShapeMismatch, op,
                "expected " + std::to_string(channels) + " input channels");
  }
}

}  // namespace

PreActUnitImpl::PreActUnitImpl(int in_channels, int out_channels, int stride) {
  const int mid = std::max(1, out_channels / 4);
  bn1_ = register_module("bn1", nn::BatchNorm2d(in_channels));
  conv1_ = register_module("conv1", conv(in_channels, mid, 1));
  bn2_ = register_module("bn2", nn::BatchNorm2d(mid));
  conv2_ = register_module("conv2", conv(mid, mid, 3, stride, 1));
  bn3_ = register_module("bn3", nn::BatchNorm2d(mid));
  conv3_ = register_module("conv3", conv(mid, out_channels, 1));
  if (stride != 1 || in_channels != out_channels) {
    projection_ = register_module("projection", conv(in_channels, out_channels, 1, stride));
  }
}

torch::Tensor PreActUnitImpl::forward(const torch::Tensor& x) {
  auto pre = torch::relu(bn1_(x));
  auto h = conv1_(pre);
  h = conv2_(torch::relu(bn2_(h)));
  h = conv3_(torch::relu(bn3_(h)));
  return h + (projection_.is_empty() ? x : projection_(pre));
}

AttentionModuleImpl::AttentionModuleImpl(AttentionModuleSpec spec) : spec_(spec) {
  const int c = spec_.channels;
  if (spec_.mask_downsamples < 1) {
    throw Error(ErrorCode::InvalidConfig, "AttentionModule", "mask_downsamples must be >= 1");
  }
  pre_ = register_module("pre", units(c, spec_.pre_post_units));
  trunk_ = register_module("trunk", units(c, spec_.trunk_depth));
  post_ = register_module("post", units(c, spec_.pre_post_units));
  down_ = register_module("down", nn::ModuleList());
  skip_ = register_module("skip", nn::ModuleList());
  up_ = register_module("up", nn::ModuleList());
  for (int k = 0; k < spec_.mask_downsamples; ++k) {
    down_->push_back(PreActUnit(c, c));
    if (k + 1 < spec_.mask_downsamples) {
      skip_->push_back(PreActUnit(c, c));
      up_->push_back(PreActUnit(c, c));
    }
  }
  mask_head_ = register_module(
      "mask_head", nn::Sequential(nn::BatchNorm2d(c), nn::ReLU(), conv(c, c, 1), nn::BatchNorm2d(c),
                                  nn::ReLU(), conv(c, c, 1), nn::Sigmoid()));
}

torch::Tensor AttentionModuleImpl::trunk_branch(const torch::Tensor& x) {
  return trunk_->forward(x);
}

torch::Tensor AttentionModuleImpl::mask_branch(const torch::Tensor& x) {
  const int depth = spec_.mask_downsamples;
  // Bottom-up: pool then refine at every level; keep the refined maps and
  // their skip projections for the way back up.
  std::vector<torch::Tensor> refined;
  std::vector<torch::Tensor> skips;
  torch::Tensor h = x;
  for (int k = 0; k < depth; ++k) {
    h = F::max_pool2d(h, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
    h = down_[k]->as<PreActUnit>()->forward(h);
    refined.push_back(h);
    if (k + 1 < depth) skips.push_back(skip_[k]->as<PreActUnit>()->forward(h));
  }
  // Top-down: upsample to the next finer level and merge.
  for (int k = depth - 2; k >= 0; --k) {
    h = resize_to(h, refined[k]) + refined[k] + skips[k];
    h = up_[k]->as<PreActUnit>()->forward(h);
  }
  h = resize_to(h, x);
  return mask_head_->forward(h);
}

torch::Tensor attention_merge(const torch::Tensor& mask, const torch::Tensor& trunk) {
  return (1 + mask) * trunk;
}

torch::Tensor AttentionModuleImpl::forward_traced(const torch::Tensor& x, AttentionTrace* trace) {
  auto shared = pre_->forward(x);
  auto trunk = trunk_branch(shared);
  auto mask = mask_branch(shared);
  auto combined = attention_merge(mask, trunk);
  if (trace != nullptr) *trace = {trunk, mask, combined};
  return post_->forward(combined);
}

torch::Tensor AttentionModuleImpl::forward(const torch::Tensor& x) {
  return forward_traced(x, nullptr);
}

torch::Tensor mask_branch(AttentionModule& module, const torch::Tensor& x) {
  require_channels(x, module->spec().channels, "mask_branch");
  return module->mask_branch(x);
}

torch::Tensor attention_module(AttentionModule& module, const torch::Tensor& x) {
  require_channels(x, module->spec().channels, "attention_module");
  AttentionTrace trace;
  module->forward_traced(x, &trace);
  return trace.combined;
}

RanClassifierImpl::RanClassifierImpl(RanConfig config, int num_classes, double drop_rate)
    : config_(config) {
  const int w = config_.base_width;
  stem_ = register_module(
      "stem", nn::Sequential(conv(3, w, 7, 2, 3), nn::BatchNorm2d(w), nn::ReLU(),
                             nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1))));
  const std::array<int, 3> in_ch{w, 4 * w, 8 * w};
  const std::array<int, 3> out_ch{4 * w, 8 * w, 16 * w};
  for (int s = 0; s < 3; ++s) {
    stage_entry_[s] = register_module("entry" + std::to_string(s + 1),
                                      PreActUnit(in_ch[s], out_ch[s], s == 0 ? 1 : 2));
    nn::ModuleList mods;
    for (int m = 0; m < config_.modules_per_stage; ++m) {
      AttentionModuleSpec spec;
      spec.channels = out_ch[s];
      spec.mask_downsamples = 3 - s;
      mods->push_back(AttentionModule(spec));
    }
    attention_[s] = register_module("attention" + std::to_string(s + 1), mods);
  }
  const int top = 32 * w;
  tail_ = register_module(
      "tail", nn::Sequential(PreActUnit(16 * w, top, 2), PreActUnit(top, top), PreActUnit(top, top),
                             nn::BatchNorm2d(top), nn::ReLU()));
  dropout_ = register_module("dropout", nn::Dropout(drop_rate));
  fc_ = register_module("fc", nn::Linear(top, num_classes));
  init_weights(*this);
}

torch::Tensor RanClassifierImpl::features(const torch::Tensor& x,
                                          std::vector<AttentionTrace>* traces) {
  torch::Tensor input = x.dim() == 3 ? x.unsqueeze(0) : x;
  if (input.dim() != 4 || input.size(1) != 3) {
    throw Error(ErrorCode::ShapeMismatch, "ran_forward", "expected N x 3 x H x W input");
  }
  if (input.size(2) < 64 || input.size(3) < 64) {
    throw Error(ErrorCode::InputTooSmall, "ran_forward", "need H, W >= 64");
  }
  auto h = stem_->forward(input);
  for (int s = 0; s < 3; ++s) {
    h = stage_entry_[s]->forward(h);
    for (const auto& m : *attention_[s]) {
      AttentionTrace trace;
      h = m->as<AttentionModule>()->forward_traced(h, traces ? &trace : nullptr);
      if (traces) traces->push_back(std::move(trace));
    }
  }
  return tail_->forward(h);
}

torch::Tensor RanClassifierImpl::forward_traced(const torch::Tensor& x,
                                                std::vector<AttentionTrace>* traces) {
  auto feat = features(x, traces);
  return fc_(dropout_(feat.mean({2, 3})));
}

torch::Tensor RanClassifierImpl::forward(const torch::Tensor& x) {
  return forward_traced(x, nullptr);
}

CamCapture RanClassifierImpl::forward_with_activation(const torch::Tensor& x) {
  auto feat = features(x, nullptr);
  return {fc_(dropout_(feat.mean({2, 3}))), feat};
}

}  // namespace pestnet
