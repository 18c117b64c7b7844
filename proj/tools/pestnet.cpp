// pestnet: dataset splitting, training, evaluation, ensembling, Grad-CAM and
// result reports for the four classifiers.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "pestnet/checkpoint.hpp"
#include "pestnet/data_io.hpp"
#include "pestnet/ensemble.hpp"
#include "pestnet/error.hpp"
#include "pestnet/explain.hpp"
#include "pestnet/ledger.hpp"
#include "pestnet/log.hpp"
#include "pestnet/metrics.hpp"
#include "pestnet/mmal.hpp"
#include "pestnet/synthetic.hpp"
#include "pestnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace pestnet;

namespace {

void write_text(const fs::path& file, const std::string& text, const char* op) {
  std::ofstream out(file);
  if (!out) throw Error(ErrorCode::WriteFailure, op, file.string());
  out << text;
}

int cmd_synth(const fs::path& out, int classes, int per_class, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.classes = classes;
  spec.images_per_class = per_class;
  spec.seed = seed;
  generate_shapes_dataset(out, spec);
  std::cout << fmt::format("wrote {} images in {} classes to {}\n", classes * per_class, classes,
                           out.string());
  return 0;
}

struct SplitArgs {
  fs::path root;
  std::string ratios = "0.7,0.1,0.2";
  std::uint64_t seed = 0;
  fs::path out;
  std::optional<fs::path> train_list, val_list, test_list;
};

int cmd_split(const SplitArgs& a) {
  DatasetSplits d;
  d.root = fs::absolute(a.root);
  d.labels = scan_label_space(a.root);
  if (a.train_list || a.val_list || a.test_list) {
    if (!(a.train_list && a.val_list && a.test_list)) {
      throw Error(ErrorCode::InvalidConfig, "split", "fixed splits need --train-list, --val-list and --test-list");
    }
    d.train = load_fixed_split(*a.train_list, d.labels, "train");
    d.val = load_fixed_split(*a.val_list, d.labels, "val");
    d.test = load_fixed_split(*a.test_list, d.labels, "test");
  } else {
    auto s = make_random_split(scan_records(a.root, d.labels), SplitRatios::parse(a.ratios), a.seed);
    d.train = std::move(s.train);
    d.val = std::move(s.val);
    d.test = std::move(s.test);
  }
  d.save(a.out);
  std::cout << fmt::format("{} classes; train {} / val {} / test {} -> {}\n", d.labels.count(),
                           d.train.size(), d.val.size(), d.test.size(), a.out.string());
  return 0;
}

struct TrainArgs {
  std::string model;
  std::optional<fs::path> config;
  fs::path data;
  fs::path out;
  std::optional<fs::path> pretrained;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_epochs;
};

int cmd_train(const TrainArgs& a) {
  const ModelKind kind = parse_model_tag(a.model);
  TrainRunConfig cfg = a.config ? TrainRunConfig::load(a.config->string(), kind)
                                : TrainRunConfig::defaults_for(kind);
  if (a.seed) cfg.seed = *a.seed;
  if (a.max_epochs) cfg.max_epochs = *a.max_epochs;
  const auto data = DatasetSplits::load(a.data);
  fs::create_directories(a.out);
  write_text(a.out / "config.txt", cfg.to_text(), "train");
  const auto result = train(cfg, data, a.out, a.pretrained);
  std::cout << fmt::format("{}: {} epochs, best epoch {} (val accuracy {:.4f}) -> {}\n", a.model,
                           result.history.epochs.size(), result.history.best_epoch,
                           result.history.best_val_accuracy, result.checkpoint.string());
  return 0;
}

void dump_boxes(MmalNetImpl& net, const DatasetSplits& data, const SplitManifest& manifest,
                const PreprocessSpec& prep, int batch_size, const fs::path& file) {
  torch::NoGradGuard no_grad;
  net.eval();
  std::ofstream out(file);
  if (!out) throw Error(ErrorCode::WriteFailure, "eval", file.string());
  BatchStream stream(manifest, data.root, prep, batch_size, Mode::Eval, 0);
  while (auto batch = stream.next()) {
    auto outputs = net.run(batch->images, Phase::Test);
    for (std::size_t i = 0; i < batch->positions.size(); ++i) {
      const auto& b = outputs.object_boxes[i].box;
      out << fmt::format("{} {} {} {} {}\n", manifest.records[batch->positions[i]].path, b.row0,
                         b.col0, b.row1, b.col1);
    }
  }
}

struct EvalArgs {
  fs::path ckpt;
  std::string split = "test";
  fs::path export_csv;
  std::optional<fs::path> data;
  std::optional<fs::path> ledger;
  std::optional<std::string> dataset;
  std::optional<fs::path> boxes;
};

int cmd_eval(const EvalArgs& a) {
  auto meta = load_checkpoint(a.ckpt).meta;
  const fs::path data_dir = a.data ? *a.data : fs::path(meta.data_dir);
  const auto data = DatasetSplits::load(data_dir);
  const SplitManifest* manifest = a.split == "train" ? &data.train
                                  : a.split == "val" ? &data.val
                                  : a.split == "test" ? &data.test
                                                      : nullptr;
  if (manifest == nullptr) throw Error(ErrorCode::InvalidConfig, "eval", "unknown split '" + a.split + "'");
  const auto result = evaluate_export(a.ckpt, data.root, data.labels, *manifest, a.export_csv);
  std::cout << format_report(result.report);
  if (a.ledger) {
    const std::string dataset = a.dataset ? *a.dataset : fs::path(data_dir).filename().string();
    append_ledger_row(*a.ledger, dataset, model_tag(meta.config.model.kind), result.report,
                      meta.config.hash());
  }
  if (a.boxes) {
    auto ck = load_checkpoint(a.ckpt);
    auto* net = dynamic_cast<MmalNetImpl*>(ck.model.get());
    if (net == nullptr) throw Error(ErrorCode::InvalidConfig, "eval", "--boxes needs an mmal checkpoint");
    dump_boxes(*net, data, *manifest, ck.meta.config.preprocess, ck.meta.config.batch_size, *a.boxes);
  }
  return 0;
}

struct EnsembleArgs {
  std::vector<fs::path> inputs;
  fs::path out;
  std::optional<fs::path> ledger;
  std::string dataset = "dataset";
};

int cmd_ensemble(const EnsembleArgs& a) {
  std::vector<ProbMatrix> members;
  for (const auto& f : a.inputs) {
    members.push_back(read_prob_csv(f));
    members.back().validate();
  }
  const auto ens = soft_vote(members);
  if (ens.true_labels != members.front().true_labels) {
    throw Error(ErrorCode::MemberMismatch, "ensemble", "true labels differ between members");
  }
  write_prob_csv(ens, a.out);
  const bool labelled = std::all_of(ens.true_labels.begin(), ens.true_labels.end(),
                                    [](int l) { return l >= 0; });
  if (labelled) {
    const auto report = metrics_of(ens);
    std::cout << format_report(report);
    if (a.ledger) append_ledger_row(*a.ledger, a.dataset, "ensemble", report, 0);
  }
  return 0;
}

struct GradCamArgs {
  fs::path ckpt;
  fs::path image;
  std::optional<int> cls;
  fs::path out;
};

int cmd_gradcam(const GradCamArgs& a) {
  auto ck = load_checkpoint(a.ckpt);
  cv::Mat img = decode_image(a.image);
  if (img.empty()) throw Error(ErrorCode::DecodeFailure, "gradcam", a.image.string());
  PreprocessSpec prep = ck.meta.config.preprocess;
  prep.mode = Mode::Eval;
  cv::Mat view = center_crop(aspect_resize(img, prep.short_side), prep.crop);
  torch::Tensor x = normalize(view, prep);

  int target = -1;
  if (a.cls) {
    target = *a.cls;
  } else if (auto idx = ck.meta.labels.index_of(a.image.parent_path().filename().string())) {
    target = *idx;  // ground truth from the class folder
  } else {
    torch::NoGradGuard no_grad;
    target = static_cast<int>(ck.model->forward(x.unsqueeze(0)).argmax(1).item<std::int64_t>());
  }
  const Heatmap h = grad_cam(*ck.model, x, target);
  overlay(h, view, a.out);
  std::cout << fmt::format("class {} ({}), {}x{} map from {} -> {}\n", target,
                           ck.meta.labels.name(target), h.rows, h.cols, h.source_layer, a.out.string());
  return 0;
}

struct ReportArgs {
  fs::path ledger;
  std::optional<std::string> dataset;
  std::optional<fs::path> probs;
  std::optional<fs::path> labels;
  int k = 10;
};

int cmd_report(const ReportArgs& a) {
  std::string out = format_comparison(read_ledger(a.ledger), a.dataset);
  if (a.probs) {
    const auto pm = read_prob_csv(*a.probs);
    const auto report = metrics_of(pm);
    std::optional<LabelSpace> labels;
    if (a.labels) labels = load_label_space(*a.labels);
    out += fmt::format("\nlowest per-class accuracy ({}):\n", pm.model_id);
    out += format_worst_classes(worst_classes(report, std::min(a.k, pm.classes)),
                                labels ? &*labels : nullptr);
  }
  std::cout << out;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pestnet: fine-grained pest classification toolkit"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress logging");

  int synth_classes = 3, synth_per_class = 100;
  std::uint64_t synth_seed = 0;
  fs::path synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic colored-shapes dataset");
  synth->add_option("--out", synth_out, "Dataset root to create")->required();
  synth->add_option("--classes", synth_classes, "Number of classes");
  synth->add_option("--per-class", synth_per_class, "Images per class");
  synth->add_option("--seed", synth_seed, "Random seed");

  SplitArgs split_args;
  auto* split = app.add_subcommand("split", "Build train/val/test manifests");
  split->add_option("--root", split_args.root, "Dataset root (one folder per class)")->required();
  split->add_option("--ratios", split_args.ratios, "train,val,test fractions");
  split->add_option("--seed", split_args.seed, "Random seed");
  split->add_option("--out", split_args.out, "Output directory")->required();
  split->add_option("--train-list", split_args.train_list, "Fixed train list (path label)");
  split->add_option("--val-list", split_args.val_list, "Fixed validation list");
  split->add_option("--test-list", split_args.test_list, "Fixed test list");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train one model");
  train_cmd->add_option("--model", train_args.model, "resnet50 | ran | fpn | mmal")
      ->required()
      ->check(CLI::IsMember({"resnet50", "ran", "fpn", "mmal"}));
  train_cmd->add_option("--config", train_args.config, "Run config (key = value)");
  train_cmd->add_option("--data", train_args.data, "Directory written by split")->required();
  train_cmd->add_option("--out", train_args.out, "Output directory")->required();
  train_cmd->add_option("--pretrained", train_args.pretrained, "Checkpoint to copy backbone weights from");
  train_cmd->add_option("--seed", train_args.seed, "Overrides the config seed");
  train_cmd->add_option("--max-epochs", train_args.max_epochs, "Overrides max_epochs");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and export probabilities");
  eval->add_option("--ckpt", eval_args.ckpt, "Checkpoint")->required();
  eval->add_option("--split", eval_args.split, "train | val | test");
  eval->add_option("--export", eval_args.export_csv, "Probability CSV to write")->required();
  eval->add_option("--data", eval_args.data, "Split directory (default: the one used in training)");
  eval->add_option("--ledger", eval_args.ledger, "Results ledger to append to");
  eval->add_option("--dataset", eval_args.dataset, "Dataset name for the ledger row");
  eval->add_option("--boxes", eval_args.boxes, "Write AOLM boxes (mmal only)");

  EnsembleArgs ens_args;
  auto* ens = app.add_subcommand("ensemble", "Soft-vote probability files");
  ens->add_option("--in", ens_args.inputs, "Member probability CSVs")->required()->expected(1, -1);
  ens->add_option("--out", ens_args.out, "Output CSV")->required();
  ens->add_option("--ledger", ens_args.ledger, "Results ledger to append to");
  ens->add_option("--dataset", ens_args.dataset, "Dataset name for the ledger row");

  GradCamArgs cam_args;
  auto* cam = app.add_subcommand("gradcam", "Grad-CAM overlay for one image");
  cam->add_option("--ckpt", cam_args.ckpt, "Checkpoint")->required();
  cam->add_option("--image", cam_args.image, "Input image")->required();
  cam->add_option("--class", cam_args.cls, "Target class (default: folder label, else prediction)");
  cam->add_option("--out", cam_args.out, "Output image")->required();

  ReportArgs rep_args;
  auto* rep = app.add_subcommand("report", "Comparison table and worst classes");
  rep->add_option("--ledger", rep_args.ledger, "Results ledger")->required();
  rep->add_option("--dataset", rep_args.dataset, "Only rows of this dataset");
  rep->add_option("--probs", rep_args.probs, "Probability CSV for the worst-class table");
  rep->add_option("--labels", rep_args.labels, "labels.txt for class names");
  rep->add_option("--k", rep_args.k, "Number of worst classes");

  CLI11_PARSE(app, argc, argv);
  log::quiet() = quiet;

  try {
    if (*synth) return cmd_synth(synth_out, synth_classes, synth_per_class, synth_seed);
    if (*split) return cmd_split(split_args);
    if (*train_cmd) return cmd_train(train_args);
    if (*eval) return cmd_eval(eval_args);
    if (*ens) return cmd_ensemble(ens_args);
    if (*cam) return cmd_gradcam(cam_args);
    if (*rep) return cmd_report(rep_args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
