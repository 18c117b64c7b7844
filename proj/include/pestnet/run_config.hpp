#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pestnet/model.hpp"
#include "pestnet/preprocess.hpp"

namespace pestnet {

enum class OptimizerKind { Adam, Sgd };
enum class ScheduleKind { Exponential, MultiStep };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double momentum = 0.9;
  double weight_decay = 0.0;

  void validate() const;
};

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::Exponential;
  double decay_rate = 0.96;
  std::vector<int> milestones;  // multistep only

  void validate() const;
};

/// Everything one training run needs. The flat text form has one
/// `key = value` per line; see to_text() for the full key list.
struct TrainRunConfig {
  ModelSpec model;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  int batch_size = 64;
  int max_epochs = 100;
  int patience = 10;
  PreprocessSpec preprocess;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;

  /// Published per-network settings (optimizer, learning rate, batch size,
  /// scheduler, weight decay, dropout, epoch cap, input size).
  static TrainRunConfig defaults_for(ModelKind kind);

  /// Parses key-value text on top of defaults_for(model). The model comes
  /// from `model_override` when given, else from the `model` key.
  static TrainRunConfig parse(const std::string& text,
                              std::optional<ModelKind> model_override = std::nullopt);
  static TrainRunConfig load(const std::string& file,
                             std::optional<ModelKind> model_override = std::nullopt);

  std::string to_text() const;

  /// FNV-1a over to_text(), for ledger rows.
  std::uint64_t hash() const;
};

/// Default multistep milestones for an epoch budget: {max/2, 3*max/4}.
std::vector<int> default_milestones(int max_epochs);

std::map<std::string, std::string> parse_key_values(const std::string& text);

}  // namespace pestnet
