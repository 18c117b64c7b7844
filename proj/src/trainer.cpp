#include "pestnet/trainer.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <torch/torch.h>

#include "pestnet/error.hpp"
#include "pestnet/log.hpp"

namespace pestnet {

double step_schedule(int epoch, double base_lr, const ScheduleConfig& cfg) {
  if (cfg.kind == ScheduleKind::Exponential) {
    return base_lr * std::pow(cfg.decay_rate, epoch);
  }
  int passed = 0;
  for (int m : cfg.milestones) {
    if (epoch >= m) ++passed;
  }
  return base_lr * std::pow(cfg.decay_rate, passed);
}

bool EarlyStopping::update(int epoch, double metric) {
  if (metric > best_) {
    best_ = metric;
    best_epoch_ = epoch;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

void TrainHistory::write_csv(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw Error(ErrorCode::WriteFailure, "train", file.string());
  out << "epoch,learning_rate,train_loss,train_accuracy,val_accuracy\n";
  for (const auto& e : epochs) {
    out << fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g}\n", e.epoch, e.learning_rate, e.train_loss,
                       e.train_accuracy, e.val_accuracy);
  }
}

TrainHistory run_epochs(const TrainRunConfig& cfg, const EpochHooks& hooks) {
  TrainHistory history;
  EarlyStopping stopper(cfg.patience);
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = step_schedule(epoch, cfg.optimizer.learning_rate, cfg.schedule);
    const EpochStats stats = hooks.train_epoch(epoch, rec.learning_rate);
    rec.train_loss = stats.loss;
    rec.train_accuracy = stats.accuracy;
    rec.val_accuracy = hooks.validate(epoch);
    history.epochs.push_back(rec);
    if (stopper.update(epoch, rec.val_accuracy) && hooks.on_improved) {
      hooks.on_improved(epoch, rec.val_accuracy);
    }
    if (stopper.should_stop()) {
      history.early_stopped = true;
      break;
    }
  }
  history.best_epoch = stopper.best_epoch();
  history.best_val_accuracy = stopper.best();
  return history;
}

namespace {

std::string read_line_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::Io, "DatasetSplits", "cannot open " + file.string());
  std::string line;
  std::getline(in, line);
  return line;
}

std::unique_ptr<torch::optim::Optimizer> make_optimizer(ClassifierImpl& model,
                                                        const OptimizerConfig& cfg) {
  if (cfg.kind == OptimizerKind::Adam) {
    return std::make_unique<torch::optim::Adam>(
        model.parameters(), torch::optim::AdamOptions(cfg.learning_rate)
                                .betas({cfg.beta1, cfg.beta2})
                                .weight_decay(cfg.weight_decay));
  }
  return std::make_unique<torch::optim::SGD>(
      model.parameters(), torch::optim::SGDOptions(cfg.learning_rate)
                              .momentum(cfg.momentum)
                              .weight_decay(cfg.weight_decay));
}

void set_learning_rate(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups()) group.options().set_lr(lr);
}

double accuracy_of(const ProbMatrix& probs) {
  if (probs.rows() == 0) return 0.0;
  const auto pred = decide(probs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == probs.true_labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace

DatasetSplits DatasetSplits::load(const std::filesystem::path& dir) {
  DatasetSplits d;
  d.data_dir = std::filesystem::absolute(dir).string();
  d.root = read_line_file(dir / "root.txt");
  d.labels = load_label_space(dir / "labels.txt");
  d.train = load_fixed_split(dir / "train.txt", d.labels, "train");
  d.val = load_fixed_split(dir / "val.txt", d.labels, "val");
  d.test = load_fixed_split(dir / "test.txt", d.labels, "test");
  return d;
}

void DatasetSplits::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "root.txt");
    if (!out) throw Error(ErrorCode::WriteFailure, "split", (dir / "root.txt").string());
    out << std::filesystem::absolute(root).string() << '\n';
  }
  save_label_space(labels, dir / "labels.txt");
  save_manifest(train, dir / "train.txt");
  save_manifest(val, dir / "val.txt");
  save_manifest(test, dir / "test.txt");
}

ProbMatrix predict_probs(ClassifierImpl& model, const std::filesystem::path& root,
                         const SplitManifest& manifest, const PreprocessSpec& prep, int batch_size,
                         const std::string& model_id) {
  torch::NoGradGuard no_grad;
  const bool was_training = model.is_training();
  model.eval();
  ProbMatrix pm;
  pm.model_id = model_id;
  BatchStream stream(manifest, root, prep, batch_size, Mode::Eval, 0);
  while (auto batch = stream.next()) {
    auto probs = torch::softmax(model.forward(batch->images).to(torch::kFloat64), 1).contiguous();
    if (pm.classes == 0) pm.classes = static_cast<int>(probs.size(1));
    const double* p = probs.data_ptr<double>();
    pm.values.insert(pm.values.end(), p, p + probs.numel());
    for (int pos : batch->positions) {
      pm.sample_ids.push_back(manifest.records[pos].path);
      pm.true_labels.push_back(manifest.records[pos].label);
    }
  }
  model.train(was_training);
  return pm;
}

TrainResult train(const TrainRunConfig& cfg_in, const DatasetSplits& data,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& pretrained) {
  TrainRunConfig cfg = cfg_in;
  cfg.model.num_classes = data.labels.count();
  cfg.model.input_size = cfg.preprocess.crop;
  cfg.validate();
  std::filesystem::create_directories(out_dir);

  torch::manual_seed(cfg.seed);
  Classifier model = make_model(cfg.model);
  if (pretrained) {
    const int n = load_pretrained_backbone(*model, *pretrained);
    log::info("train: copied {} pretrained backbone tensors from {}", n, pretrained->string());
  }
  auto optimizer = make_optimizer(*model, cfg.optimizer);

  TrainResult result;
  result.checkpoint = out_dir / "best.ckpt";
  const std::string tag = model_tag(cfg.model.kind);

  EpochHooks hooks;
  hooks.train_epoch = [&](int epoch, double lr) {
    set_learning_rate(*optimizer, lr);
    model->train();
    BatchStream stream(data.train, data.root, cfg.preprocess, cfg.batch_size, Mode::Train, cfg.seed,
                       epoch, cfg.workers);
    double loss_sum = 0.0;
    std::int64_t seen = 0;
    std::int64_t correct = 0;
    int step = 0;
    while (auto batch = stream.next()) {
      optimizer->zero_grad();
      TrainStep out = model->train_step(batch->images, batch->labels);
      const double loss = out.loss.item<double>();
      if (!std::isfinite(loss)) {
        const auto dump = out_dir / "nonfinite_dump.txt";
        std::ofstream d(dump);
        d << fmt::format("model = {}\nepoch = {}\nstep = {}\nloss = {}\nlearning_rate = {:.9g}\n", tag,
                         epoch, step, loss, lr);
        d << "positions =";
        for (int p : batch->positions) d << ' ' << p;
        d << '\n';
        throw Error(ErrorCode::NonFiniteLoss, "train",
                    fmt::format("epoch {} step {}: loss {}; state written to {}", epoch, step, loss,
                                dump.string()));
      }
      out.loss.backward();
      optimizer->step();
      const auto n = batch->labels.size(0);
      loss_sum += loss * static_cast<double>(n);
      correct += out.logits.argmax(1).eq(batch->labels).sum().item<std::int64_t>();
      seen += n;
      ++step;
    }
    EpochStats stats;
    if (seen > 0) {
      stats.loss = loss_sum / static_cast<double>(seen);
      stats.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    }
    return stats;
  };
  hooks.validate = [&](int epoch) {
    const double acc =
        accuracy_of(predict_probs(*model, data.root, data.val, cfg.preprocess, cfg.batch_size, tag));
    log::info("train[{}]: epoch {} val_accuracy {:.4f}", tag, epoch, acc);
    return acc;
  };
  hooks.on_improved = [&](int epoch, double val) {
    CheckpointMeta meta{cfg, data.labels, epoch, val, data.data_dir};
    save_checkpoint(result.checkpoint, *model, meta);
  };

  result.history = run_epochs(cfg, hooks);
  result.history.write_csv(out_dir / "history.csv");
  return result;
}

MetricsReport metrics_of(const ProbMatrix& probs) {
  const auto pred = decide(probs);
  return macro_report(confusion(probs.true_labels, pred, probs.classes));
}

EvalResult evaluate_export(const std::filesystem::path& checkpoint, const std::filesystem::path& root,
                           const LabelSpace& labels, const SplitManifest& manifest,
                           const std::filesystem::path& out_csv) {
  Checkpoint ck = load_checkpoint(checkpoint);
  if (!(ck.meta.labels == labels)) {
    throw Error(ErrorCode::LabelSpaceMismatch, "evaluate_export",
                fmt::format("checkpoint has {} classes, dataset has {}", ck.meta.labels.count(),
                            labels.count()));
  }
  EvalResult r;
  r.probs = predict_probs(*ck.model, root, manifest, ck.meta.config.preprocess,
                          ck.meta.config.batch_size, model_tag(ck.model->kind()));
  write_prob_csv(r.probs, out_csv);
  r.report = metrics_of(r.probs);
  return r;
}

}  // namespace pestnet
