// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <torch/torch.h>

#include "../gradcheck.hpp"
#include "../oracles.hpp"
#include "../test_util.hpp"
#include "pestnet/backbone.hpp"
#include "pestnet/checkpoint.hpp"
#include "pestnet/ensemble.hpp"
#include "pestnet/explain.hpp"
#include "pestnet/fpn.hpp"
#include "pestnet/ledger.hpp"
#include "pestnet/log.hpp"
#include "pestnet/loss.hpp"
#include "pestnet/metrics.hpp"
#include "pestnet/mmal.hpp"
#include "pestnet/ran.hpp"
#include "pestnet/synthetic.hpp"
#include "pestnet/trainer.hpp"

using namespace pestnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Outcome metrics_oracle() {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> cls(2, 10);
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int C = cls(rng);
    const int N = std::uniform_int_distribution<int>(C, 200)(rng);
    std::vector<int> t, p;
    oracle::random_labels(rng, C, N, t, p);
    const auto got = macro_report(confusion(t, p, C));
    const auto want = oracle::metrics(t, p, C);
    for (auto [a, b] : {std::pair{got.mpre, want.mpre}, {got.mrec, want.mrec}, {got.mf1, want.mf1},
                        {got.acc, want.acc}, {got.gm, want.gm}}) {
      worst = std::max(worst, std::abs(a - b));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 10.0, fmt::format("max |diff| {:.3g}, {:.2f} s", worst, secs)};
}

Outcome gm_substitution() {
  // class 2 is never predicted correctly
  const std::vector<int> t{0, 0, 1, 1, 1, 2, 2, 3, 3, 3};
  const std::vector<int> p{0, 1, 1, 1, 0, 0, 1, 3, 3, 2};
  const auto r = macro_report(confusion(t, p, 4));
  const double want = std::pow((1.0 / 2) * (2.0 / 3) * 0.001 * (2.0 / 3), 1.0 / 4);
  const double diff = std::abs(r.gm - want);
  return {diff <= 1e-12, fmt::format("GM {:.12g} vs {:.12g}", r.gm, want)};
}

Outcome attention_exactness() {
  torch::manual_seed(3);
  auto model = std::make_shared<RanClassifierImpl>(RanConfig{8, 1}, 5);
  model->eval();
  torch::NoGradGuard guard;
  double worst = 0.0;
  int modules = 0;
  for (int i = 0; i < 20; ++i) {
    std::vector<AttentionTrace> traces;
    model->forward_traced(torch::randn({1, 3, 64, 64}) * (1 + i % 4), &traces);
    for (const auto& tr : traces) {
      worst = std::max(worst, (tr.combined - (1 + tr.mask) * tr.trunk).abs().max().item<double>());
      ++modules;
    }
  }
  return {worst == 0.0, fmt::format("max |H - (1+M)F| = {} over {} module outputs", worst, modules)};
}

ProbMatrix random_member(std::mt19937_64& rng, int rows, int classes, const std::string& id) {
  ProbMatrix pm;
  pm.model_id = id;
  pm.classes = classes;
  for (int r = 0; r < rows; ++r) {
    pm.sample_ids.push_back("s" + std::to_string(r));
    pm.true_labels.push_back(r % classes);
    for (double v : oracle::random_simplex(rng, classes)) pm.values.push_back(v);
  }
  return pm;
}

Outcome soft_voting() {
  std::mt19937_64 rng(4);
  bool idem = true, order = true;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ProbMatrix> members;
    for (int m = 0; m < 4; ++m) members.push_back(random_member(rng, 30, 7, "m" + std::to_string(m)));

    for (int copies = 1; copies <= 5; ++copies) {
      std::vector<ProbMatrix> same(copies, members[0]);
      idem = idem && soft_vote(same).values == members[0].values;
    }
    const auto base = soft_vote(members).values;
    std::vector<int> perm{0, 1, 2, 3};
    while (std::next_permutation(perm.begin(), perm.end())) {
      std::vector<ProbMatrix> shuffled;
      for (int i : perm) shuffled.push_back(members[i]);
      order = order && soft_vote(shuffled).values == base;
    }
    std::vector<std::vector<std::vector<double>>> raw;
    for (const auto& m : members) {
      raw.emplace_back();
      for (std::size_t r = 0; r < m.rows(); ++r) {
        raw.back().emplace_back(m.values.begin() + r * m.classes, m.values.begin() + (r + 1) * m.classes);
      }
    }
    const auto want = oracle::soft_vote(raw);
    for (std::size_t r = 0; r < want.size(); ++r) {
      for (int c = 0; c < 7; ++c) worst = std::max(worst, std::abs(base[r * 7 + c] - want[r][c]));
    }
  }
  return {idem && order && worst <= 1e-12,
          fmt::format("idempotent {}, order-invariant {}, oracle diff {:.3g}", idem, order, worst)};
}

ActivationMap to_map(int rows, int cols, std::vector<double> v) { return {rows, cols, std::move(v)}; }

Outcome aolm_oracle() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int fr = 28, cr = 14, P = 448;
  int nondegenerate = 0, matched = 0, degenerate = 0, fell_back = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> fine(fr * fr);
    for (auto& v : fine) v = 0.1 * u(rng);
    const int planted = 1 + trial % 3;
    for (int k = 0; k < planted; ++k) {
      const int h = 2 + static_cast<int>(u(rng) * 8), w = 2 + static_cast<int>(u(rng) * 8);
      const int r0 = static_cast<int>(u(rng) * (fr - h)), c0 = static_cast<int>(u(rng) * (fr - w));
      const double level = 1.0 + u(rng);
      for (int r = r0; r < r0 + h; ++r) {
        for (int c = c0; c < c0 + w; ++c) fine[r * fr + c] = level;
      }
    }
    std::vector<double> coarse(cr * cr, 0.0);  // 2x2 mean pool of the fine map
    for (int r = 0; r < fr; ++r) {
      for (int c = 0; c < fr; ++c) coarse[(r / 2) * cr + c / 2] += fine[r * fr + c] / 4;
    }
    const auto want = oracle::aolm(fine, fr, fr, coarse, cr, cr, P, P);
    const auto got = aolm_locate(to_map(fr, fr, fine), to_map(cr, cr, coarse), P, P);
    const BoundingBox wb{want.box.r0, want.box.c0, want.box.r1, want.box.c1};
    if (want.fallback) {
      ++degenerate;
      fell_back += got.fallback && got.box == BoundingBox{0, 0, P, P};
    } else {
      ++nondegenerate;
      matched += !got.fallback && got.box == wb;
    }
  }
  // Degenerate inputs: constant maps leave nothing strictly above the mean.
  for (double level : {0.0, 1.0, -3.5}) {
    ++degenerate;
    auto got = aolm_locate(to_map(fr, fr, std::vector<double>(fr * fr, level)),
                           to_map(cr, cr, std::vector<double>(cr * cr, level)), P, P);
    fell_back += got.fallback && got.box == BoundingBox{0, 0, P, P};
  }
  return {nondegenerate > 0 && matched == nondegenerate && fell_back == degenerate,
          fmt::format("{}/{} boxes match, {}/{} degenerate cases fall back", matched, nondegenerate,
                      fell_back, degenerate)};
}

Outcome appm_oracle() {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> q(0, 3);
  const std::vector<WindowSize> windows{{2, 2}, {3, 3}, {4, 4}};
  const std::vector<std::pair<int, int>> oracle_windows{{2, 2}, {3, 3}, {4, 4}};
  const std::vector<int> top_k{3, 2, 2};
  int matched = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = trial % 2 == 0 ? 7 : 14;
    std::vector<double> values(n * n);
    for (auto& v : values) v = trial % 5 == 0 ? q(rng) : u(rng);
    const auto got = appm_propose(to_map(n, n, values), windows, top_k, 0.25, 448, 448);
    const auto want = oracle::appm(values, n, n, oracle_windows, top_k, 0.25);
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i) {
      const auto& w = want[i].cells;
      same = got[i].cells == BoundingBox{w.r0, w.c0, w.r1, w.c1} && got[i].scale_id == want[i].scale &&
             std::abs(got[i].score - want[i].score) <= 1e-12;
    }
    matched += same;
  }
  return {matched == 100, fmt::format("{}/100 trials match", matched)};
}

Outcome shape_contracts() {
  torch::NoGradGuard guard;
  ResNetBackbone net(ResNetConfig{});
  net->eval();
  const auto stack = extract_features(net, torch::randn({3, 448, 448}));
  const bool c5 = stack.c5.sizes() == torch::IntArrayRef({1, 2048, 14, 14});

  auto fpn = std::make_shared<FpnClassifierImpl>(ResNetConfig{}, 102, 256);
  fpn->eval();
  const auto pyramid = fpn->build_pyramid(extract_features(fpn->backbone(), torch::randn({1, 3, 448, 448})));
  bool shared = true;
  for (const auto& level : pyramid.levels) shared = shared && level.size(1) == 256;
  const auto len = fpn->pooled_features(pyramid).size(1);
  return {c5 && shared && len == 1024,
          fmt::format("C5 {}, pyramid d=256 {}, feature length {}", fmt::join(stack.c5.sizes(), "x"), shared,
                      len)};
}

Outcome gradient_checks() {
  torch::manual_seed(8);
  // cross-entropy against central differences
  const std::vector<double> logits{0.4, -1.1, 2.2, 0.0, 0.9};
  std::vector<double> analytic, numeric;
  for (int label = 0; label < 5; ++label) {
    const auto g = cross_entropy_grad(logits, label);
    for (int i = 0; i < 5; ++i) {
      auto up = logits, down = logits;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      analytic.push_back(g[i]);
      numeric.push_back((cross_entropy(up, label) - cross_entropy(down, label)) / 2e-6);
    }
  }
  double num = 0, den_a = 0, den_n = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    num += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    den_a += analytic[i] * analytic[i];
    den_n += numeric[i] * numeric[i];
  }
  const double ce = std::sqrt(num) / std::sqrt(std::max(den_a, den_n));

  Bottleneck block(ResidualBlockSpec{4, 2, 8, 2});
  block->to(torch::kFloat64);
  block->eval();
  const double res = testutil::grad_rel_error([&](const torch::Tensor& x) { return block->forward(x); },
                                              torch::randn({1, 4, 6, 6}, torch::kFloat64));

  AttentionModuleSpec spec;
  spec.channels = 8;
  spec.mask_downsamples = 1;
  AttentionModule att(spec);
  att->to(torch::kFloat64);
  att->eval();
  const double am = testutil::grad_rel_error([&](const torch::Tensor& x) { return att->forward(x); },
                                             torch::randn({1, 8, 8, 8}, torch::kFloat64));
  return {ce < 1e-2 && res < 1e-2 && am < 1e-2,
          fmt::format("relative error: cross-entropy {:.2g}, residual block {:.2g}, attention module {:.2g}", ce,
                      res, am)};
}

struct DeskRun {
  std::string tag;
  std::string config;
};

Outcome desk_end_to_end() {
  testutil::TempDir dir("acceptance_e2e");
  const auto t0 = Clock::now();
  SyntheticSpec spec;
  spec.classes = 3;
  spec.images_per_class = 100;
  spec.seed = 2024;
  generate_shapes_dataset(dir / "images", spec);

  DatasetSplits data;
  data.root = dir / "images";
  data.labels = scan_label_space(data.root);
  const auto split = make_random_split(scan_records(data.root, data.labels), SplitRatios{0.7, 0.1, 0.2}, 7);
  data.train = split.train;
  data.val = split.val;
  data.test = split.test;
  data.save(dir / "split");
  data = DatasetSplits::load(dir / "split");

  const std::string common =
      "base_width = 8\nshort_side = 64\ncrop = 64\nbatch_size = 16\nweight_decay = 0\n"
      "max_epochs = 30\npatience = 30\nseed = 11\n";
  const std::vector<DeskRun> runs{
      {"resnet50", common + "learning_rate = 0.003\n"},
      {"ran", common + "learning_rate = 0.003\n"},
      {"fpn", common + "learning_rate = 0.003\nfpn_channels = 32\n"},
      {"mmal", common + "optimizer = adam\nlearning_rate = 0.001\nmmal_part_size = 64\n"
                        "appm_windows = 1x1,2x2\nappm_top_k = 2,1\n"},
  };

  std::string detail;
  bool all_fit = true;
  double best_member = 0.0;
  std::vector<ProbMatrix> members;
  for (const auto& run : runs) {
    const auto cfg = TrainRunConfig::parse(run.config, parse_model_tag(run.tag));
    const auto result = train(cfg, data, dir / run.tag);
    double best_train = 0.0;
    int first_fit = -1;
    for (const auto& e : result.history.epochs) {
      best_train = std::max(best_train, e.train_accuracy);
      if (first_fit < 0 && e.train_accuracy >= 0.9) first_fit = e.epoch + 1;
    }
    all_fit = all_fit && best_train >= 0.9;
    auto eval = evaluate_export(result.checkpoint, data.root, data.labels, data.test,
                                dir / (run.tag + ".csv"));
    best_member = std::max(best_member, eval.report.acc);
    members.push_back(std::move(eval.probs));
    detail += fmt::format("{} train {:.3f} (>=0.9 at epoch {}) test {:.3f}; ", run.tag, best_train, first_fit,
                          eval.report.acc);
  }
  const double ens = metrics_of(soft_vote(members)).acc;
  const double minutes = seconds_since(t0) / 60.0;
  detail += fmt::format("ensemble test {:.3f}; {:.1f} min", ens, minutes);
  return {all_fit && ens >= best_member - 0.02 && minutes < 30.0, detail};
}

Outcome early_stopping() {
  auto cfg = TrainRunConfig::defaults_for(ModelKind::ResNet50);
  int validations = 0;
  EpochHooks hooks;
  hooks.train_epoch = [](int, double) { return EpochStats{0.5, 0.5}; };
  hooks.validate = [&](int) {
    ++validations;
    return 0.37;
  };
  const auto h = run_epochs(cfg, hooks);
  const int unimproved = validations - 1 - h.best_epoch;
  return {h.early_stopped && h.best_epoch == 0 && unimproved == cfg.patience && cfg.patience == 10,
          fmt::format("{} validations, {} unimproved after the best (patience {})", validations, unimproved,
                      cfg.patience)};
}

Outcome round_trips() {
  testutil::TempDir dir("acceptance_rt");
  SyntheticSpec spec;
  spec.classes = 3;
  spec.images_per_class = 10;
  spec.seed = 5;
  generate_shapes_dataset(dir / "images", spec);
  const auto labels = scan_label_space(dir / "images");
  SplitManifest all{"all", scan_records(dir / "images", labels)};

  bool probs_equal = true;
  for (ModelKind kind : {ModelKind::ResNet50, ModelKind::Ran, ModelKind::Fpn, ModelKind::Mmal}) {
    auto cfg = TrainRunConfig::parse(
        "base_width = 4\nresnet_blocks = 1,1,1,1\nshort_side = 64\ncrop = 64\nfpn_channels = 8\n"
        "mmal_part_size = 64\nappm_windows = 1x1\nappm_top_k = 1\nnum_classes = 3\n",
        kind);
    torch::manual_seed(static_cast<int>(kind));
    auto model = make_model(cfg.model);
    CheckpointMeta meta{cfg, labels, 0, 0.0, ""};
    const auto file = dir / (model_tag(kind) + ".ckpt");
    save_checkpoint(file, *model, meta);
    auto loaded = load_checkpoint(file);
    const auto a = predict_probs(*model, dir / "images", all, cfg.preprocess, 8, "a");
    const auto b = predict_probs(*loaded.model, dir / "images", all, cfg.preprocess, 8, "b");
    probs_equal = probs_equal && a.values == b.values;
  }

  std::mt19937_64 rng(12);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    auto pm = random_member(rng, 60, 5, "member");
    write_prob_csv(pm, dir / "member.csv");
    const auto back = read_prob_csv(dir / "member.csv");
    const auto x = metrics_of(pm), y = metrics_of(back);
    for (auto [p, q] : {std::pair{x.acc, y.acc}, {x.mpre, y.mpre}, {x.mrec, y.mrec}, {x.mf1, y.mf1},
                        {x.gm, y.gm}}) {
      worst = std::max(worst, std::abs(p - q));
    }
    append_ledger_row(dir / "ledger.csv", "synthetic", "model" + std::to_string(trial % 4), x, trial);
  }
  const auto r1 = format_comparison(read_ledger(dir / "ledger.csv"), std::nullopt);
  const auto r2 = format_comparison(read_ledger(dir / "ledger.csv"), std::nullopt);
  return {probs_equal && worst <= 1e-9 && r1 == r2,
          fmt::format("checkpoint probs bit-identical {}, CSV metric diff {:.3g}, report identical {}",
                      probs_equal, worst, r1 == r2)};
}

Outcome grad_cam_properties() {
  torch::manual_seed(13);
  bool ok = true;
  std::string shapes;
  for (ModelKind kind : {ModelKind::ResNet50, ModelKind::Ran, ModelKind::Fpn, ModelKind::Mmal}) {
    ModelSpec s;
    s.kind = kind;
    s.num_classes = 4;
    s.base_width = 8;
    s.input_size = kind == ModelKind::Mmal ? 448 : 224;
    auto model = make_model(s);
    const auto x = torch::randn({3, s.input_size, s.input_size});
    const auto h = grad_cam(*model, x, 1);
    const auto cap = model->forward_with_activation(x.unsqueeze(0));
    ok = ok && h.rows == cap.activation.size(2) && h.cols == cap.activation.size(3);
    const double mx = *std::max_element(h.values.begin(), h.values.end());
    const double mn = *std::min_element(h.values.begin(), h.values.end());
    ok = ok && mn >= 0.0 && (mx == 1.0 || mx == 0.0);
    shapes += fmt::format("{} {}x{} ", model_tag(kind), h.rows, h.cols);
  }
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    auto a = torch::relu(torch::randn({16, 14, 14}, torch::kFloat64));
    auto g = torch::randn({16, 14, 14}, torch::kFloat64);
    const auto h1 = grad_cam_from(a, g);
    const auto h2 = grad_cam_from(a, g * (0.01 + 50.0 * trial));
    for (std::size_t i = 0; i < h1.values.size(); ++i) worst = std::max(worst, std::abs(h1.values[i] - h2.values[i]));
  }
  ok = ok && worst <= 1e-12;
  return {ok, fmt::format("{}; scaling diff {:.3g}", shapes, worst)};
}

}  // namespace

int main(int argc, char** argv) {
  pestnet::log::quiet() = true;
  torch::set_num_threads(1);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metrics oracle equivalence", metrics_oracle},
      {"GM zero-sensitivity substitution", gm_substitution},
      {"attention merge exactness", attention_exactness},
      {"soft voting", soft_voting},
      {"AOLM oracle", aolm_oracle},
      {"APPM oracle", appm_oracle},
      {"shape contracts", shape_contracts},
      {"gradient checks", gradient_checks},
      {"desk-scale end-to-end", desk_end_to_end},
      {"early stopping", early_stopping},
      {"round trips", round_trips},
      {"Grad-CAM properties", grad_cam_properties},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << fmt::format("criterion {}: {} {} ({})", id, o.pass ? "PASS" : "FAIL", criteria[i].first,
                             o.detail)
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
