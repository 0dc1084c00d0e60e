#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "selfseg/common.hpp"
#include "selfseg/config.hpp"
#include "selfseg/evaluation.hpp"
#include "selfseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace selfseg;
using nlohmann::json;

namespace {

std::string dataset_root(const RunConfig& cfg) {
  return cfg.data.root.empty() ? cfg.out + "/dataset" : cfg.data.root;
}

std::string stage_dir(const RunConfig& cfg, const std::string& stage) {
  std::string d = cfg.out + "/" + stage;
  fs::create_directories(d);
  return d;
}

void require_artifact(const std::string& path, const std::string& producer) {
  if (!fs::exists(path))
    throw MissingArtifactError("missing artifact '" + path + "'; run `selfseg " +
                               producer + "` first");
}

// Inputs and outputs are hashed so manifests chain into a provenance graph.
// Wall time lives only here, never in metrics files, so replayed runs stay
// bit-identical where it matters.
void write_manifest(const RunConfig& cfg, const std::string& dir,
                    const std::string& stage,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, double wall_sec) {
  json m;
  m["stage"] = stage;
  m["config"] = run_config_json(cfg);
  for (const auto& p : inputs) m["inputs"][p] = hex64(hash_file(p));
  for (const auto& p : outputs) m["outputs"][p] = hex64(hash_file(p));
  m["wall_time_sec"] = wall_sec;
  std::ofstream out(dir + "/manifest.json");
  out << m.dump(2) << "\n";
}

struct StageTimer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

SegModel make_model(const RunConfig& cfg) {
  return SegModel::create(cfg.model, cfg.pgg.k_global, cfg.data.crop_size,
                          cfg.cae, cfg.seed);
}

SegModel load_model(const RunConfig& cfg, const std::string& ckpt_path) {
  auto model = make_model(cfg);
  load_model_weights(model, load_checkpoint(ckpt_path));
  return model;
}

std::string final_checkpoint_dir(const RunConfig& cfg) {
  return cfg.out + "/train/ckpt_epoch_" + std::to_string(cfg.train.epochs - 1);
}

Image label_color(uint8_t label) {
  // golden-angle hue walk; stable per label index
  double h = std::fmod(label * 0.61803398875, 1.0) * 6.0;
  double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  double rgb[3] = {0, 0, 0};
  switch (int(h)) {
    case 0: rgb[0] = 1; rgb[1] = x; break;
    case 1: rgb[0] = x; rgb[1] = 1; break;
    case 2: rgb[1] = 1; rgb[2] = x; break;
    case 3: rgb[1] = x; rgb[2] = 1; break;
    case 4: rgb[0] = x; rgb[2] = 1; break;
    default: rgb[0] = 1; rgb[2] = x; break;
  }
  Image c(1, 1);
  for (int i = 0; i < 3; ++i) c.px[i] = rgb[i];
  return c;
}

int cmd_synth_data(const RunConfig& cfg, int n, int size, int classes,
                   uint64_t seed) {
  StageTimer timer;
  std::string root = dataset_root(cfg);
  auto train_set = gen_synthetic_dataset(n, size, classes, seed);
  int n_test = std::max(1, n / 4);
  auto test_set =
      gen_synthetic_dataset(n_test, size, classes, mix_seed(seed, 0x74657374));

  DatasetMeta meta;
  meta.n_classes = classes;
  meta.stuff = {0, 1};
  for (int c = 2; c < classes; ++c) meta.things.push_back(c);

  write_dataset(train_set, root, cfg.data.train_split, meta);
  write_dataset(test_set, root, cfg.data.test_split, meta);

  std::string dir = stage_dir(cfg, "synth-data");
  write_manifest(cfg, dir, "synth-data", {}, {root + "/meta.json"},
                 timer.seconds());
  std::cout << "wrote " << n << " train / " << n_test << " test images to "
            << root << "\n";
  return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
  StageTimer timer;
  std::string root = dataset_root(cfg);
  require_artifact(root + "/meta.json", "synth-data");
  auto data = load_dataset(root, cfg.data.train_split, cfg.data.resize);

  auto model = make_model(cfg);
  PretrainConfig pc;
  pc.steps = cfg.pretrain.steps;
  pc.batch_size = cfg.pretrain.batch_size;
  pc.lr = cfg.pretrain.lr;
  pc.temperature = cfg.pretrain.temperature;
  pc.crop_size = cfg.data.crop_size;
  pc.seed = mix_seed(cfg.seed, 0x70726574);
  auto losses = pretrain_instance_embeddings(data, model, pc);

  std::string dir = stage_dir(cfg, "pretrain");
  Checkpoint ckpt;
  ckpt.config_json = run_config_json(cfg).dump();
  ckpt.tensors = model.named_parameters();
  save_checkpoint(ckpt, dir + "/model.bin");
  {
    std::ofstream out(dir + "/losses.txt");
    char buf[64];
    for (size_t i = 0; i < losses.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu %.17g\n", i, losses[i]);
      out << buf;
    }
  }
  write_manifest(cfg, dir, "pretrain", {root + "/meta.json"},
                 {dir + "/model.bin", dir + "/losses.txt"}, timer.seconds());
  std::cout << "pretrained " << losses.size() << " steps; checkpoint at " << dir
            << "/model.bin\n";
  return 0;
}

int cmd_pseudo_label(const RunConfig& cfg) {
  StageTimer timer;
  std::string root = dataset_root(cfg);
  require_artifact(root + "/meta.json", "synth-data");
  std::string ckpt_path = cfg.out + "/pretrain/model.bin";
  require_artifact(ckpt_path, "pretrain");

  auto data = load_dataset(root, cfg.data.train_split, cfg.data.resize);
  auto model = load_model(cfg, ckpt_path);

  auto centers = build_global_clusters(
      data, *model.net, *model.projector, cfg.pgg.k_global,
      mix_seed(cfg.seed, 0x70676767), cfg.data.embed_resize, cfg.data.embed_crop);
  auto labels = assign_pseudo_labels(data, centers, *model.net, *model.projector,
                                     cfg.pgg.view_resize, cfg.data.embed_resize,
                                     cfg.data.embed_crop);
  active_select(labels, cfg.pgg.keep_frac);

  std::string dir = stage_dir(cfg, "pseudo-label");
  save_pseudo_labels(labels, dir + "/labels.bin");
  save_cluster_model(centers, dir + "/global_clusters.bin");
  write_manifest(cfg, dir, "pseudo-label", {root + "/meta.json", ckpt_path},
                 {dir + "/labels.bin", dir + "/labels.bin.txt",
                  dir + "/global_clusters.bin"},
                 timer.seconds());
  std::cout << "labeled " << labels.entries.size() << " views; fingerprint "
            << hex64(pseudo_label_fingerprint(labels)) << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  StageTimer timer;
  std::string root = dataset_root(cfg);
  require_artifact(root + "/meta.json", "synth-data");
  std::string ckpt_path = cfg.out + "/pretrain/model.bin";
  require_artifact(ckpt_path, "pretrain");

  auto data = load_dataset(root, cfg.data.train_split, cfg.data.resize);
  auto model = load_model(cfg, ckpt_path);

  PseudoLabelSet labels;
  const PseudoLabelSet* labels_ptr = nullptr;
  std::vector<std::string> inputs = {root + "/meta.json", ckpt_path};
  if (cfg.train.weak_weight > 0.0) {
    std::string lpath = cfg.out + "/pseudo-label/labels.bin";
    require_artifact(lpath, "pseudo-label");
    labels = load_pseudo_labels(lpath);
    labels_ptr = &labels;
    inputs.push_back(lpath);
  }

  TrainConfig tc;
  tc.epochs = cfg.train.epochs;
  tc.batch_size = cfg.train.batch_size;
  tc.lr = cfg.train.lr;
  tc.weight_decay = cfg.train.weight_decay;
  tc.grad_clip = cfg.train.grad_clip;
  tc.k_pixel = cfg.train.k_pixel;
  tc.crop_size = cfg.data.crop_size;
  tc.weak_weight = cfg.train.weak_weight;
  tc.balanced = cfg.train.balanced;
  tc.pixels_per_image = cfg.train.pixels_per_image;
  tc.cam_mode = cfg.train.cam_mode;
  tc.seed = cfg.seed;
  tc.config_json = run_config_json(cfg).dump();

  std::string dir = stage_dir(cfg, "train");
  auto res = train(tc, data, model, labels_ptr, dir);

  std::vector<std::string> outputs = {dir + "/metrics.txt"};
  if (!res.epochs.empty()) {
    outputs.push_back(res.epochs.back().checkpoint);
    outputs.push_back(res.epochs.back().clusters_b1);
    outputs.push_back(res.epochs.back().clusters_b2);
  }
  write_manifest(cfg, dir, "train", inputs, outputs, timer.seconds());
  std::cout << "trained " << cfg.train.epochs << " epochs; final checkpoint "
            << res.final_checkpoint << "\n";
  return 0;
}

int cmd_segment(const RunConfig& cfg, bool use_crf, bool overlay) {
  StageTimer timer;
  std::string root = dataset_root(cfg);
  require_artifact(root + "/meta.json", "synth-data");
  std::string ckpt_dir = final_checkpoint_dir(cfg);
  require_artifact(ckpt_dir + "/model.bin", "train");
  require_artifact(ckpt_dir + "/clusters_b1.bin", "train");

  auto model = load_model(cfg, ckpt_dir + "/model.bin");
  auto clusters = load_cluster_model(ckpt_dir + "/clusters_b1.bin");
  auto data = load_dataset(root, cfg.data.test_split, cfg.data.resize);

  std::string dir = stage_dir(cfg, "segment");
  std::vector<std::string> outputs;
  for (const auto& s : data) {
    LabelMap pred = segment_image(model, s.image, clusters, use_crf, cfg.crf);
    std::string path = dir + "/" + s.id + ".png";
    save_label_png(pred, path);
    outputs.push_back(path);
    if (overlay) {
      Image ov(s.image.h, s.image.w);
      for (int y = 0; y < ov.h; ++y)
        for (int x = 0; x < ov.w; ++x) {
          Image c = label_color(pred.at(y, x));
          for (int ch = 0; ch < 3; ++ch)
            ov.at(y, x, ch) = 0.5 * s.image.at(y, x, ch) + 0.5 * c.px[ch];
        }
      save_image_png(ov, dir + "/" + s.id + "_overlay.png");
    }
  }
  write_manifest(cfg, dir, "segment",
                 {root + "/meta.json", ckpt_dir + "/model.bin",
                  ckpt_dir + "/clusters_b1.bin"},
                 outputs, timer.seconds());
  std::cout << "segmented " << data.size() << " images into " << dir << "\n";
  return 0;
}

void print_report(std::ostream& out, const MetricsReport& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "[%s] acc %.6f miou %.6f pixels %lld\n",
                r.partition.c_str(), r.accuracy, r.miou,
                (long long)r.pixels);
  out << buf;
  for (size_t c = 0; c < r.per_class_iou.size(); ++c) {
    if (std::isnan(r.per_class_iou[c])) continue;
    std::snprintf(buf, sizeof buf, "  class %zu iou %.6f\n", c,
                  r.per_class_iou[c]);
    out << buf;
  }
}

int cmd_eval(const RunConfig& cfg) {
  StageTimer timer;
  std::string root = dataset_root(cfg);
  require_artifact(root + "/meta.json", "synth-data");
  auto meta = load_dataset_meta(root);
  auto data = load_dataset(root, cfg.data.test_split, cfg.data.resize);

  int k = cfg.eval.k;
  if (k <= 0) {
    std::string cpath = final_checkpoint_dir(cfg) + "/clusters_b1.bin";
    require_artifact(cpath, "train");
    k = load_cluster_model(cpath).k;
  }

  ConfusionMatrix total;
  total.counts.setZero(k, meta.n_classes);
  std::vector<std::string> inputs = {root + "/meta.json"};
  for (const auto& s : data) {
    std::string ppath = cfg.out + "/segment/" + s.id + ".png";
    require_artifact(ppath, "segment");
    if (!s.gt_labels)
      throw MissingArtifactError("no ground-truth labels for '" + s.id + "'");
    LabelMap pred = load_label_png(ppath);
    total.add(confusion(pred, *s.gt_labels, k, meta.n_classes));
    inputs.push_back(ppath);
  }
  auto mapping = hungarian_match(total);

  std::string dir = stage_dir(cfg, "eval");
  std::ofstream out(dir + "/report.txt");
  print_report(out, metrics(total, mapping, {}, "all"));
  print_report(out, metrics(total, mapping, meta.things, "things"));
  print_report(out, metrics(total, mapping, meta.stuff, "stuff"));
  out.close();

  write_manifest(cfg, dir, "eval", inputs, {dir + "/report.txt"},
                 timer.seconds());
  std::ifstream in(dir + "/report.txt");
  std::cout << in.rdbuf();
  return 0;
}

int cmd_report(const RunConfig& cfg) {
  StageTimer timer;
  const char* stages[] = {"synth-data", "pretrain", "pseudo-label",
                          "train",      "segment",  "eval"};
  std::string dir = stage_dir(cfg, "report");
  std::ofstream out(dir + "/summary.txt");
  for (const char* stage : stages) {
    std::string mpath = cfg.out + "/" + stage + "/manifest.json";
    if (!fs::exists(mpath)) {
      out << stage << ": not run\n";
      continue;
    }
    std::ifstream in(mpath);
    json m = json::parse(in);
    out << stage << ": wall " << m.value("wall_time_sec", 0.0) << "s\n";
    if (m.contains("inputs"))
      for (auto& [p, h] : m["inputs"].items())
        out << "  in  " << h.get<std::string>() << "  " << p << "\n";
    if (m.contains("outputs"))
      for (auto& [p, h] : m["outputs"].items())
        out << "  out " << h.get<std::string>() << "  " << p << "\n";
  }
  out.close();
  write_manifest(cfg, dir, "report", {}, {dir + "/summary.txt"},
                 timer.seconds());
  std::ifstream in(dir + "/summary.txt");
  std::cout << in.rdbuf();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised semantic segmentation pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_flag;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--set", overrides, "dotted-key override, e.g. train.lr=0.01");
  app.add_option("--out", out_flag, "output root (overrides config)");

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic dataset");
  int sd_n = 200, sd_size = 64, sd_classes = 4;
  uint64_t sd_seed = 0;
  bool sd_seed_set = false;
  synth->add_option("--n", sd_n, "train image count");
  synth->add_option("--size", sd_size, "image side length");
  synth->add_option("--classes", sd_classes, "class count (>= 3)");
  synth->add_option("--seed", sd_seed, "generator seed (default: config seed)")
      ->each([&](const std::string&) { sd_seed_set = true; });

  auto* pre = app.add_subcommand("pretrain", "instance-embedding warmup");
  auto* plabel =
      app.add_subcommand("pseudo-label", "global clusters + pyramid-view labels");
  auto* tr = app.add_subcommand("train", "alternating clustering + gradient epochs");

  auto* seg = app.add_subcommand("segment", "write per-image label maps");
  bool use_crf = false, overlay = false;
  seg->add_flag("--crf,!--no-crf", use_crf, "dense-CRF refinement");
  seg->add_flag("--overlay", overlay, "also write color overlays");

  auto* ev = app.add_subcommand("eval", "Hungarian-matched metrics on the test split");
  auto* rep = app.add_subcommand("report", "summarize stage manifests");

  try {
    app.parse(argc, argv);

    auto cfg = load_run_config(config_path, overrides);
    if (!out_flag.empty()) cfg.out = out_flag;
    if (const char* env = std::getenv("SELFSEG_OUT"); env && *env)
      cfg.out = env;
    fs::create_directories(cfg.out);

    if (synth->parsed()) {
      if (sd_classes < 3) throw UsageError("--classes must be at least 3");
      return cmd_synth_data(cfg, sd_n, sd_size, sd_classes,
                            sd_seed_set ? sd_seed : cfg.seed);
    }
    if (pre->parsed()) return cmd_pretrain(cfg);
    if (plabel->parsed()) return cmd_pseudo_label(cfg);
    if (tr->parsed()) return cmd_train(cfg);
    if (seg->parsed()) return cmd_segment(cfg, use_crf, overlay);
    if (ev->parsed()) return cmd_eval(cfg);
    if (rep->parsed()) return cmd_report(cfg);
    return 1;
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
