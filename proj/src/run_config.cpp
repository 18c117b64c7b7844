#include "pestnet/run_config.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "pestnet/error.hpp"

namespace pestnet {

namespace {

[[noreturn]] void bad(const std::string& what) {
  throw Error(ErrorCode::InvalidConfig, "run_config", what);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    bad(key + ": not a number: '" + v + "'");
  }
}

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long d = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    bad(key + ": not an integer: '" + v + "'");
  }
}

std::vector<int> to_ints(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& p : split(v, ',')) out.push_back(static_cast<int>(to_long(key, p)));
  return out;
}

template <std::size_t N>
std::array<double, N> to_array(const std::string& key, const std::string& v) {
  const auto parts = split(v, ',');
  if (parts.size() != N) bad(fmt::format("{}: expected {} values", key, N));
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = to_double(key, parts[i]);
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(key + ": expected true/false");
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) bad("learning_rate must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) bad("betas must lie in (0,1)");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad("momentum must lie in [0,1)");
  if (weight_decay < 0.0) bad("weight_decay must be >= 0");
}

void ScheduleConfig::validate() const {
  if (!(decay_rate > 0.0 && decay_rate <= 1.0)) bad("decay_rate must lie in (0,1]");
}

void TrainRunConfig::validate() const {
  optimizer.validate();
  schedule.validate();
  preprocess.validate();
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (max_epochs < 1) bad("max_epochs must be >= 1");
  if (patience < 1) bad("patience must be >= 1");
  if (!(model.drop_rate >= 0.0 && model.drop_rate < 1.0)) bad("drop_rate must lie in [0,1)");
  if (model.appm_windows.size() != model.appm_top_k.size()) bad("appm_windows and appm_top_k differ in length");
}

std::vector<int> default_milestones(int max_epochs) {
  return {max_epochs / 2, 3 * max_epochs / 4};
}

TrainRunConfig TrainRunConfig::defaults_for(ModelKind kind) {
  TrainRunConfig c;
  c.model.kind = kind;
  c.preprocess.short_side = 256;
  c.preprocess.crop = 224;
  switch (kind) {
    case ModelKind::ResNet50:
      c.optimizer = {OptimizerKind::Adam, 1e-4, 0.9, 0.999, 0.9, 1e-5};
      c.schedule = {ScheduleKind::Exponential, 0.96, {}};
      c.batch_size = 64;
      c.model.drop_rate = 0.3;
      c.max_epochs = 100;
      break;
    case ModelKind::Ran:
      c.optimizer = {OptimizerKind::Sgd, 0.1, 0.9, 0.999, 0.9, 0.0};
      c.schedule = {ScheduleKind::MultiStep, 0.1, {}};
      c.batch_size = 32;
      c.model.drop_rate = 0.0;
      c.max_epochs = 100;
      break;
    case ModelKind::Fpn:
      c.optimizer = {OptimizerKind::Adam, 1e-4, 0.9, 0.999, 0.9, 1e-5};
      c.schedule = {ScheduleKind::Exponential, 0.96, {}};
      c.batch_size = 32;
      c.model.drop_rate = 0.0;
      c.max_epochs = 100;
      break;
    case ModelKind::Mmal:
      c.optimizer = {OptimizerKind::Sgd, 1e-3, 0.9, 0.999, 0.9, 1e-5};
      c.schedule = {ScheduleKind::MultiStep, 0.1, {}};
      c.batch_size = 6;
      c.model.drop_rate = 0.0;
      c.max_epochs = 150;
      c.preprocess.short_side = 448;
      c.preprocess.crop = 448;
      break;
  }
  if (c.schedule.kind == ScheduleKind::MultiStep) c.schedule.milestones = default_milestones(c.max_epochs);
  c.model.input_size = c.preprocess.crop;
  return c;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::MalformedLine, "run_config", fmt::format("line {}: expected key = value", line_no));
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

TrainRunConfig TrainRunConfig::parse(const std::string& text, std::optional<ModelKind> model_override) {
  auto kv = parse_key_values(text);
  ModelKind kind = ModelKind::ResNet50;
  if (model_override) {
    kind = *model_override;
  } else if (auto it = kv.find("model"); it != kv.end()) {
    kind = parse_model_tag(it->second);
  } else {
    bad("no model given");
  }
  TrainRunConfig c = defaults_for(kind);
  bool milestones_set = false;
  bool short_side_set = false;

  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"model", [](auto&, auto&) {}},
      {"num_classes", [&](auto& k, auto& v) { c.model.num_classes = static_cast<int>(to_long(k, v)); }},
      {"optimizer", [&](auto& k, auto& v) {
         if (v == "adam") c.optimizer.kind = OptimizerKind::Adam;
         else if (v == "sgd") c.optimizer.kind = OptimizerKind::Sgd;
         else bad(k + ": expected adam or sgd");
       }},
      {"learning_rate", [&](auto& k, auto& v) { c.optimizer.learning_rate = to_double(k, v); }},
      {"beta1", [&](auto& k, auto& v) { c.optimizer.beta1 = to_double(k, v); }},
      {"beta2", [&](auto& k, auto& v) { c.optimizer.beta2 = to_double(k, v); }},
      {"momentum", [&](auto& k, auto& v) { c.optimizer.momentum = to_double(k, v); }},
      {"weight_decay", [&](auto& k, auto& v) { c.optimizer.weight_decay = to_double(k, v); }},
      {"scheduler", [&](auto& k, auto& v) {
         if (v == "exponential") c.schedule.kind = ScheduleKind::Exponential;
         else if (v == "multistep") c.schedule.kind = ScheduleKind::MultiStep;
         else bad(k + ": expected exponential or multistep");
       }},
      {"decay_rate", [&](auto& k, auto& v) { c.schedule.decay_rate = to_double(k, v); }},
      {"milestones", [&](auto& k, auto& v) { c.schedule.milestones = to_ints(k, v); milestones_set = true; }},
      {"batch_size", [&](auto& k, auto& v) { c.batch_size = static_cast<int>(to_long(k, v)); }},
      {"max_epochs", [&](auto& k, auto& v) { c.max_epochs = static_cast<int>(to_long(k, v)); }},
      {"patience", [&](auto& k, auto& v) { c.patience = static_cast<int>(to_long(k, v)); }},
      {"drop_rate", [&](auto& k, auto& v) { c.model.drop_rate = to_double(k, v); }},
      {"short_side", [&](auto& k, auto& v) { c.preprocess.short_side = static_cast<int>(to_long(k, v)); short_side_set = true; }},
      {"crop", [&](auto& k, auto& v) { c.preprocess.crop = static_cast<int>(to_long(k, v)); }},
      {"channel_mean", [&](auto& k, auto& v) { c.preprocess.channel_mean = to_array<3>(k, v); }},
      {"channel_std", [&](auto& k, auto& v) { c.preprocess.channel_std = to_array<3>(k, v); }},
      {"seed", [&](auto& k, auto& v) { c.seed = static_cast<std::uint64_t>(to_long(k, v)); }},
      {"workers", [&](auto& k, auto& v) { c.workers = static_cast<int>(to_long(k, v)); }},
      {"base_width", [&](auto& k, auto& v) { c.model.base_width = static_cast<int>(to_long(k, v)); }},
      {"resnet_blocks", [&](auto& k, auto& v) { c.model.resnet_blocks = to_ints(k, v); }},
      {"ran_modules_per_stage", [&](auto& k, auto& v) { c.model.ran_modules_per_stage = static_cast<int>(to_long(k, v)); }},
      {"fpn_channels", [&](auto& k, auto& v) { c.model.fpn_channels = static_cast<int>(to_long(k, v)); }},
      {"fpn_head", [&](auto& k, auto& v) {
         if (v == "concat") c.model.fpn_head = FpnHead::Concat;
         else if (v == "per_level_mean") c.model.fpn_head = FpnHead::PerLevelMean;
         else bad(k + ": expected concat or per_level_mean");
       }},
      {"mmal_part_size", [&](auto& k, auto& v) { c.model.mmal_part_size = static_cast<int>(to_long(k, v)); }},
      {"appm_windows", [&](auto& k, auto& v) {
         c.model.appm_windows.clear();
         for (const auto& w : split(v, ',')) {
           const auto x = w.find('x');
           if (x == std::string::npos) bad(k + ": windows look like 2x2");
           c.model.appm_windows.push_back({static_cast<int>(to_long(k, w.substr(0, x))),
                                           static_cast<int>(to_long(k, w.substr(x + 1)))});
         }
       }},
      {"appm_top_k", [&](auto& k, auto& v) { c.model.appm_top_k = to_ints(k, v); }},
      {"appm_nms_iou", [&](auto& k, auto& v) { c.model.appm_nms_iou = to_double(k, v); }},
      {"mmal_parts_at_test", [&](auto& k, auto& v) { c.model.mmal_parts_at_test = to_bool(k, v); }},
  };
  for (const auto& [key, value] : kv) {
    auto it = setters.find(key);
    if (it == setters.end()) bad("unknown key '" + key + "'");
    it->second(key, value);
  }
  if (!milestones_set && c.schedule.kind == ScheduleKind::MultiStep) {
    c.schedule.milestones = default_milestones(c.max_epochs);
  }
  if (!short_side_set && c.preprocess.short_side < c.preprocess.crop) {
    c.preprocess.short_side = c.preprocess.crop;
  }
  c.model.input_size = c.preprocess.crop;
  c.validate();
  return c;
}

TrainRunConfig TrainRunConfig::load(const std::string& file, std::optional<ModelKind> model_override) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::Io, "run_config", "cannot open " + file);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), model_override);
}

std::string TrainRunConfig::to_text() const {
  std::string windows;
  for (const auto& w : model.appm_windows) {
    windows += (windows.empty() ? "" : ",") + fmt::format("{}x{}", w.rows, w.cols);
  }
  std::string out;
  auto put = [&](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
  put("model", model_tag(model.kind));
  put("num_classes", std::to_string(model.num_classes));
  put("optimizer", optimizer.kind == OptimizerKind::Adam ? "adam" : "sgd");
  put("learning_rate", fmt::format("{:.17g}", optimizer.learning_rate));
  put("beta1", fmt::format("{:.17g}", optimizer.beta1));
  put("beta2", fmt::format("{:.17g}", optimizer.beta2));
  put("momentum", fmt::format("{:.17g}", optimizer.momentum));
  put("weight_decay", fmt::format("{:.17g}", optimizer.weight_decay));
  put("scheduler", schedule.kind == ScheduleKind::Exponential ? "exponential" : "multistep");
  put("decay_rate", fmt::format("{:.17g}", schedule.decay_rate));
  if (!schedule.milestones.empty()) put("milestones", fmt::format("{}", fmt::join(schedule.milestones, ",")));
  put("batch_size", std::to_string(batch_size));
  put("max_epochs", std::to_string(max_epochs));
  put("patience", std::to_string(patience));
  put("drop_rate", fmt::format("{:.17g}", model.drop_rate));
  put("short_side", std::to_string(preprocess.short_side));
  put("crop", std::to_string(preprocess.crop));
  put("channel_mean", fmt::format("{:.17g},{:.17g},{:.17g}", preprocess.channel_mean[0],
                                  preprocess.channel_mean[1], preprocess.channel_mean[2]));
  put("channel_std", fmt::format("{:.17g},{:.17g},{:.17g}", preprocess.channel_std[0],
                                 preprocess.channel_std[1], preprocess.channel_std[2]));
  put("seed", std::to_string(seed));
  put("workers", std::to_string(workers));
  put("base_width", std::to_string(model.base_width));
  put("resnet_blocks", fmt::format("{}", fmt::join(model.resnet_blocks, ",")));
  put("ran_modules_per_stage", std::to_string(model.ran_modules_per_stage));
  put("fpn_channels", std::to_string(model.fpn_channels));
  put("fpn_head", model.fpn_head == FpnHead::Concat ? "concat" : "per_level_mean");
  put("mmal_part_size", std::to_string(model.mmal_part_size));
  put("appm_windows", windows);
  put("appm_top_k", fmt::format("{}", fmt::join(model.appm_top_k, ",")));
  put("appm_nms_iou", fmt::format("{:.17g}", model.appm_nms_iou));
  put("mmal_parts_at_test", model.mmal_parts_at_test ? "true" : "false");
  return out;
}

std::uint64_t TrainRunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_text()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace pestnet
