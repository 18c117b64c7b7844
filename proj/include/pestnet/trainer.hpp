#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pestnet/checkpoint.hpp"
#include "pestnet/data_io.hpp"
#include "pestnet/ensemble.hpp"
#include "pestnet/metrics.hpp"
#include "pestnet/run_config.hpp"

namespace pestnet {

/// Learning rate for a 0-based epoch.
double step_schedule(int epoch, double base_lr, const ScheduleConfig& cfg);

/// Stops after `patience` consecutive validations without a strict
/// improvement over the best value so far.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Returns true when `metric` is a new best.
  bool update(int epoch, double metric);
  bool should_stop() const { return stale_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  int patience_;
  int stale_ = 0;
  int best_epoch_ = -1;
  double best_ = -std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
  bool early_stopped = false;

  void write_csv(const std::filesystem::path& file) const;
};

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Pluggable pieces of the epoch loop.
struct EpochHooks {
  std::function<EpochStats(int epoch, double learning_rate)> train_epoch;
  std::function<double(int epoch)> validate;
  std::function<void(int epoch, double val_accuracy)> on_improved;
};

/// Runs up to cfg.max_epochs epochs with early stopping on validation
/// accuracy; calls on_improved at every new best.
TrainHistory run_epochs(const TrainRunConfig& cfg, const EpochHooks& hooks);

/// A dataset prepared by `split`: label list plus the three manifests.
struct DatasetSplits {
  std::filesystem::path root;
  LabelSpace labels;
  SplitManifest train;
  SplitManifest val;
  SplitManifest test;
  std::string data_dir;

  /// Reads DIR/{root.txt,labels.txt,train.txt,val.txt,test.txt}.
  static DatasetSplits load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;
};

struct TrainResult {
  TrainHistory history;
  std::filesystem::path checkpoint;  // best validation accuracy
};

/// Full training run. Writes out_dir/best.ckpt at each new best and
/// out_dir/history.csv at the end. Throws NonFiniteLoss after writing
/// out_dir/nonfinite_dump.txt.
TrainResult train(const TrainRunConfig& cfg, const DatasetSplits& data,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& pretrained = std::nullopt);

/// Softmax rows of an eval-mode pass over `manifest`, in manifest order.
ProbMatrix predict_probs(ClassifierImpl& model, const std::filesystem::path& root,
                         const SplitManifest& manifest, const PreprocessSpec& prep,
                         int batch_size, const std::string& model_id);

struct EvalResult {
  ProbMatrix probs;
  MetricsReport report;
};

/// Loads the checkpoint, checks its label space against `labels`
/// (LabelSpaceMismatch), writes the probability CSV and returns metrics of
/// the argmax decisions.
EvalResult evaluate_export(const std::filesystem::path& checkpoint, const std::filesystem::path& root,
                           const LabelSpace& labels, const SplitManifest& manifest,
                           const std::filesystem::path& out_csv);

/// Metrics of argmax decisions against the stored true labels.
MetricsReport metrics_of(const ProbMatrix& probs);

}  // namespace pestnet
