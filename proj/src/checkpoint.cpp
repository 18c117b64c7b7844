#include "pestnet/checkpoint.hpp"

#include <cstdlib>
#include <sstream>

#include <torch/torch.h>

#include "pestnet/error.hpp"

namespace pestnet {

namespace {

std::string join_names(const LabelSpace& labels) {
  std::string out;
  for (const auto& n : labels.names()) out += (out.empty() ? "" : "\n") + n;
  return out;
}

LabelSpace split_names(const std::string& text) {
  std::vector<std::string> names;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) names.push_back(line);
  return LabelSpace(std::move(names));
}

std::string read_string(torch::serialize::InputArchive& ar, const std::string& key) {
  c10::IValue v;
  ar.read(key, v);
  return v.toStringRef();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& file, ClassifierImpl& model,
                     const CheckpointMeta& meta) {
  try {
    torch::serialize::OutputArchive ar;
    ar.write("format", c10::IValue(std::string(kCheckpointFormat)));
    ar.write("version", c10::IValue(kCheckpointVersion));
    ar.write("model_tag", c10::IValue(model_tag(model.kind())));
    ar.write("labels", c10::IValue(join_names(meta.labels)));
    ar.write("config", c10::IValue(meta.config.to_text()));
    ar.write("epoch", c10::IValue(static_cast<std::int64_t>(meta.epoch)));
    ar.write("val_accuracy", c10::IValue(meta.val_accuracy));
    ar.write("data_dir", c10::IValue(meta.data_dir));
    torch::serialize::OutputArchive weights;
    model.save(weights);
    ar.write("model", weights);
    ar.save_to(file.string());
  } catch (const c10::Error& e) {
    throw Error(ErrorCode::WriteFailure, "save_checkpoint", file.string() + ": " + e.what_without_backtrace());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  try {
    torch::serialize::InputArchive ar;
    ar.load_from(file.string());
    if (read_string(ar, "format") != kCheckpointFormat) {
      throw Error(ErrorCode::Io, "load_checkpoint", file.string() + ": not a pestnet checkpoint");
    }
    c10::IValue version;
    ar.read("version", version);
    if (version.toInt() != kCheckpointVersion) {
      throw Error(ErrorCode::Io, "load_checkpoint",
                  file.string() + ": unsupported version " + std::to_string(version.toInt()));
    }
    Checkpoint ck;
    const auto tag = read_string(ar, "model_tag");
    ck.meta.config = TrainRunConfig::parse(read_string(ar, "config"), parse_model_tag(tag));
    ck.meta.labels = split_names(read_string(ar, "labels"));
    c10::IValue epoch, val;
    ar.read("epoch", epoch);
    ar.read("val_accuracy", val);
    ck.meta.epoch = static_cast<int>(epoch.toInt());
    ck.meta.val_accuracy = val.toDouble();
    ck.meta.data_dir = read_string(ar, "data_dir");
    ck.model = make_model(ck.meta.config.model);
    torch::serialize::InputArchive weights;
    ar.read("model", weights);
    ck.model->load(weights);
    ck.model->eval();
    return ck;
  } catch (const c10::Error& e) {
    throw Error(ErrorCode::Io, "load_checkpoint", file.string() + ": " + e.what_without_backtrace());
  }
}

std::filesystem::path resolve_cache_path(const std::filesystem::path& file) {
  if (file.is_absolute()) return file;
  if (const char* dir = std::getenv("PESTNET_CACHE_DIR"); dir != nullptr && *dir != '\0') {
    return std::filesystem::path(dir) / file;
  }
  return file;
}

int load_pretrained_backbone(ClassifierImpl& model, const std::filesystem::path& file) {
  auto source = load_checkpoint(resolve_cache_path(file));
  auto src_params = source.model->named_parameters();
  auto src_buffers = source.model->named_buffers();
  int copied = 0;
  torch::NoGradGuard guard;
  auto copy_matching = [&](auto& dst_items, auto& src_items) {
    for (auto& item : dst_items) {
      if (item.key().rfind("backbone.", 0) != 0) continue;
      const auto* src = src_items.find(item.key());
      if (src == nullptr || !src->sizes().equals(item.value().sizes())) continue;
      item.value().copy_(*src);
      ++copied;
    }
  };
  auto dst_params = model.named_parameters();
  auto dst_buffers = model.named_buffers();
  copy_matching(dst_params, src_params);
  copy_matching(dst_buffers, src_buffers);
  return copied;
}

}  // namespace pestnet
