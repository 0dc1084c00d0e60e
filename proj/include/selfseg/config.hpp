#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "selfseg/cae.hpp"
#include "selfseg/crf.hpp"
#include "selfseg/model.hpp"
#include "selfseg/trainer.hpp"

namespace selfseg {

struct RunConfig {
  uint64_t seed = 0;
  std::string out = "out";

  struct Data {
    std::string root;
    std::string train_split = "train";
    std::string test_split = "test";
    int resize = 64;       // shorter-side resize + center crop at load
    int crop_size = 64;    // training crop
    int embed_resize = 256;
    int embed_crop = 224;
  } data;

  ModelConfig model;
  CAEConfig cae;

  struct Pgg {
    double keep_frac = 0.4;
    std::string rank_scope = "dataset";
    int view_resize = 640;
    int k_global = 50;
  } pgg;

  struct Pretrain {
    int steps = 200;
    int batch_size = 16;
    double lr = 1e-3;
    double temperature = 0.2;
  } pretrain;

  struct Train {
    int epochs = 10;
    int batch_size = 128;
    double lr = 1e-3;
    double weight_decay = 0.0;
    double grad_clip = 10.0;
    int k_pixel = 27;
    double weak_weight = 1.0;
    bool balanced = false;
    int pixels_per_image = 1024;
    std::string cam_mode = "modified";
  } train;

  CrfParams crf;

  struct Eval {
    int k = 0;  // 0: use the trained pixel-cluster count
  } eval;
};

// Defaults, overlaid by an optional JSON file, overlaid by dotted-key
// overrides ("train.lr=0.01"). Unknown keys anywhere are rejected
// (UsageError), as are malformed overrides.
RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides);

// Full snapshot of the effective configuration.
nlohmann::json run_config_json(const RunConfig& cfg);

}  // namespace selfseg
