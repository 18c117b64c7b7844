#pragma once

#include <filesystem>
#include <string>

#include "pestnet/data_io.hpp"
#include "pestnet/model.hpp"
#include "pestnet/run_config.hpp"

namespace pestnet {

inline constexpr std::int64_t kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "pestnet-checkpoint";

struct CheckpointMeta {
  TrainRunConfig config;
  LabelSpace labels;
  int epoch = -1;
  double val_accuracy = 0.0;
  std::string data_dir;  // split directory the run was trained on, may be empty
};

struct Checkpoint {
  CheckpointMeta meta;
  Classifier model;
};

/// One torch archive holding:
///   format        "pestnet-checkpoint"
///   version       1
///   model_tag     resnet50 | ran | fpn | mmal
///   labels        class names joined by '\n'
///   config        TrainRunConfig::to_text()
///   epoch, val_accuracy, data_dir
///   model/...     every parameter and buffer under its module path
void save_checkpoint(const std::filesystem::path& file, ClassifierImpl& model,
                     const CheckpointMeta& meta);

/// Rebuilds the network from the stored config and loads its weights.
Checkpoint load_checkpoint(const std::filesystem::path& file);

/// Copies every backbone.* tensor of a stored checkpoint whose name and shape
/// match into `model`. Returns the number of tensors copied. Relative paths
/// are resolved against $PESTNET_CACHE_DIR when it is set.
int load_pretrained_backbone(ClassifierImpl& model, const std::filesystem::path& file);

std::filesystem::path resolve_cache_path(const std::filesystem::path& file);

}  // namespace pestnet
