#include "selfseg/config.hpp"

#include <fstream>

#include "selfseg/common.hpp"

namespace selfseg {

using nlohmann::json;

nlohmann::json run_config_json(const RunConfig& c) {
  return json{
      {"seed", c.seed},
      {"out", c.out},
      {"data",
       {{"root", c.data.root},
        {"train_split", c.data.train_split},
        {"test_split", c.data.test_split},
        {"resize", c.data.resize},
        {"crop_size", c.data.crop_size},
        {"embed_resize", c.data.embed_resize},
        {"embed_crop", c.data.embed_crop}}},
      {"model", {{"widths", c.model.widths}, {"dim", c.model.dim}}},
      {"cae",
       {{"mode", c.cae.mode},
        {"literal_gate", c.cae.literal_gate},
        {"theta2_squared", c.cae.theta2_squared}}},
      {"pgg",
       {{"keep_frac", c.pgg.keep_frac},
        {"rank_scope", c.pgg.rank_scope},
        {"view_resize", c.pgg.view_resize},
        {"k_global", c.pgg.k_global}}},
      {"pretrain",
       {{"steps", c.pretrain.steps},
        {"batch_size", c.pretrain.batch_size},
        {"lr", c.pretrain.lr},
        {"temperature", c.pretrain.temperature}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"lr", c.train.lr},
        {"weight_decay", c.train.weight_decay},
        {"grad_clip", c.train.grad_clip},
        {"k_pixel", c.train.k_pixel},
        {"weak_weight", c.train.weak_weight},
        {"balanced", c.train.balanced},
        {"pixels_per_image", c.train.pixels_per_image},
        {"cam_mode", c.train.cam_mode}}},
      {"crf",
       {{"iters", c.crf.iters},
        {"theta_alpha", c.crf.theta_alpha},
        {"theta_beta", c.crf.theta_beta},
        {"theta_gamma", c.crf.theta_gamma},
        {"w1", c.crf.w1},
        {"w2", c.crf.w2},
        {"max_pixels", c.crf.max_pixels}}},
      {"eval", {{"k", c.eval.k}}}};
}

namespace {

void merge_into(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object())
    throw UsageError("config: expected an object at '" +
                     (prefix.empty() ? std::string("<root>") : prefix) + "'");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key()))
      throw UsageError("config: unknown key '" + path + "'");
    json& slot = base[it.key()];
    if (slot.is_object())
      merge_into(slot, it.value(), path);
    else
      slot = it.value();
  }
}

void apply_override(json& base, const std::string& kv) {
  auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw UsageError("override '" + kv + "' is not of the form key.sub=value");
  std::string key = kv.substr(0, eq);
  std::string val = kv.substr(eq + 1);

  json* slot = &base;
  size_t pos = 0;
  while (true) {
    size_t dot = key.find('.', pos);
    std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (!slot->is_object() || !slot->contains(part))
      throw UsageError("config: unknown key '" + key + "'");
    slot = &(*slot)[part];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  if (slot->is_object())
    throw UsageError("config: '" + key + "' is a section, not a value");

  json parsed = json::parse(val, nullptr, false);
  *slot = parsed.is_discarded() ? json(val) : parsed;
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: bad value for '") + section + "." +
                     key + "': " + e.what());
  }
}

}  // namespace

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
  json j = run_config_json(RunConfig{});

  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw UsageError("config file not found: " + config_path);
    json file = json::parse(in, nullptr, false);
    if (file.is_discarded())
      throw UsageError("config file is not valid JSON: " + config_path);
    merge_into(j, file, "");
  }
  for (const auto& kv : overrides) apply_override(j, kv);

  RunConfig c;
  try {
    c.seed = j.at("seed").get<uint64_t>();
    c.out = j.at("out").get<std::string>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  c.data.root = get<std::string>(j, "data", "root");
  c.data.train_split = get<std::string>(j, "data", "train_split");
  c.data.test_split = get<std::string>(j, "data", "test_split");
  c.data.resize = get<int>(j, "data", "resize");
  c.data.crop_size = get<int>(j, "data", "crop_size");
  c.data.embed_resize = get<int>(j, "data", "embed_resize");
  c.data.embed_crop = get<int>(j, "data", "embed_crop");

  c.model.widths = get<std::vector<int>>(j, "model", "widths");
  c.model.dim = get<int>(j, "model", "dim");
  if (c.model.widths.size() != 4)
    throw UsageError("config: model.widths must list 4 stage widths");

  c.cae.mode = get<std::string>(j, "cae", "mode");
  c.cae.literal_gate = get<bool>(j, "cae", "literal_gate");
  c.cae.theta2_squared = get<bool>(j, "cae", "theta2_squared");

  c.pgg.keep_frac = get<double>(j, "pgg", "keep_frac");
  c.pgg.rank_scope = get<std::string>(j, "pgg", "rank_scope");
  c.pgg.view_resize = get<int>(j, "pgg", "view_resize");
  c.pgg.k_global = get<int>(j, "pgg", "k_global");
  if (c.pgg.rank_scope != "dataset")
    throw UsageError("config: pgg.rank_scope must be 'dataset'");

  c.pretrain.steps = get<int>(j, "pretrain", "steps");
  c.pretrain.batch_size = get<int>(j, "pretrain", "batch_size");
  c.pretrain.lr = get<double>(j, "pretrain", "lr");
  c.pretrain.temperature = get<double>(j, "pretrain", "temperature");

  c.train.epochs = get<int>(j, "train", "epochs");
  c.train.batch_size = get<int>(j, "train", "batch_size");
  c.train.lr = get<double>(j, "train", "lr");
  c.train.weight_decay = get<double>(j, "train", "weight_decay");
  c.train.grad_clip = get<double>(j, "train", "grad_clip");
  c.train.k_pixel = get<int>(j, "train", "k_pixel");
  c.train.weak_weight = get<double>(j, "train", "weak_weight");
  c.train.balanced = get<bool>(j, "train", "balanced");
  c.train.pixels_per_image = get<int>(j, "train", "pixels_per_image");
  c.train.cam_mode = get<std::string>(j, "train", "cam_mode");
  if (c.train.cam_mode != "classic" && c.train.cam_mode != "modified")
    throw UsageError("config: train.cam_mode must be 'classic' or 'modified'");

  c.crf.iters = get<int>(j, "crf", "iters");
  c.crf.theta_alpha = get<double>(j, "crf", "theta_alpha");
  c.crf.theta_beta = get<double>(j, "crf", "theta_beta");
  c.crf.theta_gamma = get<double>(j, "crf", "theta_gamma");
  c.crf.w1 = get<double>(j, "crf", "w1");
  c.crf.w2 = get<double>(j, "crf", "w2");
  c.crf.max_pixels = get<int64_t>(j, "crf", "max_pixels");

  c.eval.k = get<int>(j, "eval", "k");
  return c;
}

}  // namespace selfseg
