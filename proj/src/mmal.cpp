#include "pestnet/mmal.hpp"

#include <algorithm>
#include <deque>
#include <numeric>
#include <string>

#include <torch/torch.h>

#include "pestnet/error.hpp"
#include "pestnet/loss.hpp"

namespace pestnet {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

double iou(const BoundingBox& a, const BoundingBox& b) {
  const long ir = std::max(0, std::min(a.row1, b.row1) - std::max(a.row0, b.row0));
  const long ic = std::max(0, std::min(a.col1, b.col1) - std::max(a.col0, b.col0));
  const long inter = ir * ic;
  const long uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

ActivationMap ActivationMap::channel_sum(const torch::Tensor& chw) {
  auto s = chw.detach().to(torch::kCPU).to(torch::kFloat64).sum(0).contiguous();
  ActivationMap map;
  map.rows = static_cast<int>(s.size(0));
  map.cols = static_cast<int>(s.size(1));
  map.values.assign(s.data_ptr<double>(), s.data_ptr<double>() + s.numel());
  return map;
}

std::vector<unsigned char> mean_threshold_mask(const ActivationMap& map) {
  const double mean =
      std::accumulate(map.values.begin(), map.values.end(), 0.0) / static_cast<double>(map.values.size());
  std::vector<unsigned char> mask(map.values.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = map.values[i] > mean ? 1 : 0;
  return mask;
}

namespace {

// Cell range [lo, hi) on a grid of `cells` mapped to pixels on `pixels`.
std::pair<int, int> cells_to_pixels(int lo, int hi, int cells, int pixels) {
  const long p0 = static_cast<long>(lo) * pixels / cells;
  const long p1 = (static_cast<long>(hi) * pixels + cells - 1) / cells;
  return {static_cast<int>(p0), static_cast<int>(std::min<long>(p1, pixels))};
}

BoundingBox cells_to_box(const BoundingBox& cells, int grid_rows, int grid_cols, int input_rows,
                         int input_cols) {
  auto [r0, r1] = cells_to_pixels(cells.row0, cells.row1, grid_rows, input_rows);
  auto [c0, c1] = cells_to_pixels(cells.col0, cells.col1, grid_cols, input_cols);
  return {r0, c0, r1, c1};
}

}  // namespace

AolmResult aolm_locate(const ActivationMap& fine, const ActivationMap& coarse, int input_rows,
                       int input_cols) {
  const auto fine_mask = mean_threshold_mask(fine);
  const auto coarse_mask = mean_threshold_mask(coarse);
  const int rows = fine.rows;
  const int cols = fine.cols;

  std::vector<unsigned char> mask(fine_mask.size());
  for (int r = 0; r < rows; ++r) {
    const int cr = r * coarse.rows / rows;
    for (int c = 0; c < cols; ++c) {
      const int cc = c * coarse.cols / cols;
      const auto i = static_cast<std::size_t>(r) * cols + c;
      mask[i] = fine_mask[i] && coarse_mask[static_cast<std::size_t>(cr) * coarse.cols + cc];
    }
  }

  // Breadth-first labelling of 4-connected components in row-major seed order.
  std::vector<int> label(mask.size(), -1);
  long best_size = 0;
  BoundingBox best_cells;
  int next = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const auto seed = static_cast<std::size_t>(r) * cols + c;
      if (!mask[seed] || label[seed] >= 0) continue;
      std::deque<std::pair<int, int>> queue{{r, c}};
      label[seed] = next;
      long size = 0;
      BoundingBox cells{r, c, r + 1, c + 1};
      while (!queue.empty()) {
        auto [qr, qc] = queue.front();
        queue.pop_front();
        ++size;
        cells.row0 = std::min(cells.row0, qr);
        cells.col0 = std::min(cells.col0, qc);
        cells.row1 = std::max(cells.row1, qr + 1);
        cells.col1 = std::max(cells.col1, qc + 1);
        constexpr int dr[4] = {-1, 1, 0, 0};
        constexpr int dc[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int nr = qr + dr[k];
          const int nc = qc + dc[k];
          if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
          const auto ni = static_cast<std::size_t>(nr) * cols + nc;
          if (mask[ni] && label[ni] < 0) {
            label[ni] = next;
            queue.emplace_back(nr, nc);
          }
        }
      }
      if (size > best_size) {
        best_size = size;
        best_cells = cells;
      }
      ++next;
    }
  }

  if (best_size == 0) return {{0, 0, input_rows, input_cols}, true};
  return {cells_to_box(best_cells, rows, cols, input_rows, input_cols), false};
}

AolmResult aolm_locate(const torch::Tensor& c4, const torch::Tensor& c5, int input_rows,
                       int input_cols) {
  if (c4.dim() != 3 || c5.dim() != 3) {
    throw Error(ErrorCode::ShapeMismatch, "aolm_locate", "expected K x h x w maps");
  }
  return aolm_locate(ActivationMap::channel_sum(c4), ActivationMap::channel_sum(c5), input_rows,
                     input_cols);
}

std::vector<PartProposal> appm_propose(const ActivationMap& map,
                                       const std::vector<WindowSize>& windows,
                                       const std::vector<int>& top_k, double nms_iou,
                                       int input_rows, int input_cols) {
  if (windows.size() != top_k.size()) {
    throw Error(ErrorCode::InvalidConfig, "appm_propose", "one top_k entry per window size");
  }
  // Summed-area table for window sums.
  const int rows = map.rows;
  const int cols = map.cols;
  std::vector<double> sat(static_cast<std::size_t>(rows + 1) * (cols + 1), 0.0);
  auto at = [&](int r, int c) -> double& { return sat[static_cast<std::size_t>(r) * (cols + 1) + c]; };
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      at(r + 1, c + 1) = map.at(r, c) + at(r, c + 1) + at(r + 1, c) - at(r, c);
    }
  }

  std::vector<PartProposal> out;
  for (std::size_t s = 0; s < windows.size(); ++s) {
    const auto [wr, wc] = windows[s];
    if (wr < 1 || wc < 1 || wr > rows || wc > cols) {
      throw Error(ErrorCode::WindowTooLarge, "appm_propose",
                  std::to_string(wr) + "x" + std::to_string(wc) + " window on " +
                      std::to_string(rows) + "x" + std::to_string(cols) + " map");
    }
    std::vector<PartProposal> candidates;
    for (int r = 0; r + wr <= rows; ++r) {
      for (int c = 0; c + wc <= cols; ++c) {
        const double sum = at(r + wr, c + wc) - at(r, c + wc) - at(r + wr, c) + at(r, c);
        PartProposal p;
        p.cells = {r, c, r + wr, c + wc};
        p.score = sum / (wr * wc);
        p.scale_id = static_cast<int>(s);
        candidates.push_back(p);
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const PartProposal& a, const PartProposal& b) { return a.score > b.score; });
    std::vector<PartProposal> kept;
    for (const auto& cand : candidates) {
      if (static_cast<int>(kept.size()) >= top_k[s]) break;
      bool overlaps = false;
      for (const auto& k : kept) {
        if (iou(cand.cells, k.cells) > nms_iou) {
          overlaps = true;
          break;
        }
      }
      if (!overlaps) kept.push_back(cand);
    }
    for (auto& k : kept) {
      k.box = cells_to_box(k.cells, rows, cols, input_rows, input_cols);
      out.push_back(k);
    }
  }
  return out;
}

torch::Tensor mmal_predict(const MmalOutputs& outputs, bool include_parts) {
  auto sum = outputs.raw_logits + outputs.object_logits;
  double count = 2.0;
  if (include_parts && outputs.part_logits.defined() && outputs.parts_per_image > 0) {
    const auto n = outputs.raw_logits.size(0);
    auto parts = outputs.part_logits.view({n, outputs.parts_per_image, -1});
    sum = sum + parts.sum(1);
    count += outputs.parts_per_image;
  }
  return torch::softmax(sum / count, 1);
}

torch::Tensor crop_and_resize(const torch::Tensor& image, const BoundingBox& box, int size) {
  auto patch = image.narrow(-2, box.row0, box.height()).narrow(-1, box.col0, box.width());
  if (patch.dim() == 3) patch = patch.unsqueeze(0);
  return F::interpolate(patch, F::InterpolateFuncOptions()
                                   .size(std::vector<int64_t>{size, size})
                                   .mode(torch::kBilinear)
                                   .align_corners(true));
}

MmalNetImpl::MmalNetImpl(ResNetConfig config, const ModelSpec& spec) : spec_(spec) {
  const int feat = config.stage_channels(3);
  backbone_ = register_module("backbone", ResNetBackbone(std::move(config)));
  fc_ = register_module("fc", nn::Linear(feat, spec.num_classes));
  init_weights(*this);
}

torch::Tensor MmalNetImpl::classify(const torch::Tensor& x, FeatureStack* stack_out) {
  auto stack = extract_features(backbone_, x);
  auto logits = fc_(stack.c5.mean({2, 3}));
  if (stack_out) *stack_out = std::move(stack);
  return logits;
}

MmalOutputs MmalNetImpl::run(const torch::Tensor& x_in, Phase phase) {
  const torch::Tensor x = x_in.dim() == 3 ? x_in.unsqueeze(0) : x_in;
  const int rows = static_cast<int>(x.size(2));
  const int cols = static_cast<int>(x.size(3));
  const int n = static_cast<int>(x.size(0));
  const int object_size = rows;

  MmalOutputs out;
  FeatureStack raw;
  out.raw_logits = classify(x, &raw);

  std::vector<torch::Tensor> objects;
  {
    torch::NoGradGuard no_grad;
    for (int b = 0; b < n; ++b) {
      out.object_boxes.push_back(aolm_locate(raw.c4[b], raw.c5[b], rows, cols));
    }
  }
  for (int b = 0; b < n; ++b) {
    objects.push_back(crop_and_resize(x[b], out.object_boxes[b].box, object_size));
  }
  auto object_images = torch::cat(objects, 0);
  FeatureStack object_stack;
  out.object_logits = classify(object_images, &object_stack);

  const bool want_parts = phase == Phase::Train || spec_.mmal_parts_at_test;
  if (!want_parts) return out;

  std::vector<torch::Tensor> part_images;
  const int per_image = std::accumulate(spec_.appm_top_k.begin(), spec_.appm_top_k.end(), 0);
  {
    torch::NoGradGuard no_grad;
    for (int b = 0; b < n; ++b) {
      out.parts.push_back(appm_propose(ActivationMap::channel_sum(object_stack.c5[b]),
                                       spec_.appm_windows, spec_.appm_top_k, spec_.appm_nms_iou,
                                       object_size, object_size));
    }
  }
  for (int b = 0; b < n; ++b) {
    const auto& props = out.parts[b];
    // NMS can leave a scale short; repeat the best proposal to keep the
    // per-image count uniform.
    for (int k = 0; k < per_image; ++k) {
      const auto& p = k < static_cast<int>(props.size()) ? props[k] : props.front();
      part_images.push_back(crop_and_resize(object_images[b], p.box, spec_.mmal_part_size));
    }
  }
  out.parts_per_image = per_image;
  if (!part_images.empty()) out.part_logits = classify(torch::cat(part_images, 0), nullptr);
  return out;
}

torch::Tensor MmalNetImpl::forward(const torch::Tensor& x) {
  auto outputs = run(x, Phase::Test);
  auto sum = outputs.raw_logits + outputs.object_logits;
  double count = 2.0;
  if (spec_.mmal_parts_at_test && outputs.part_logits.defined()) {
    sum = sum + outputs.part_logits.view({sum.size(0), outputs.parts_per_image, -1}).sum(1);
    count += outputs.parts_per_image;
  }
  return sum / count;
}

TrainStep MmalNetImpl::train_step(const torch::Tensor& x, const torch::Tensor& labels) {
  auto outputs = run(x, Phase::Train);
  auto loss = weights_.raw * batch_cross_entropy(outputs.raw_logits, labels) +
              weights_.object * batch_cross_entropy(outputs.object_logits, labels);
  if (outputs.part_logits.defined()) {
    auto part_labels = labels.repeat_interleave(outputs.parts_per_image);
    loss = loss + weights_.parts * batch_cross_entropy(outputs.part_logits, part_labels);
  }
  return {loss, ((outputs.raw_logits + outputs.object_logits) / 2.0).detach()};
}

CamCapture MmalNetImpl::forward_with_activation(const torch::Tensor& x) {
  FeatureStack stack;
  auto logits = classify(x, &stack);
  return {logits, stack.c5};
}

}  // namespace pestnet
