#include "selfseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include "selfseg/common.hpp"

namespace fs = std::filesystem;

namespace selfseg {

using namespace nn;

namespace {

constexpr int kStride = 8;

std::vector<size_t> sample_indices(std::mt19937_64& rng, size_t n, size_t take) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  take = std::min(take, n);
  for (size_t i = 0; i < take; ++i)
    std::swap(idx[i], idx[i + size_t(uniform_int(rng, 0, int(n - 1 - i)))]);
  idx.resize(take);
  return idx;
}

TransformSpecs specs_for(const TrainConfig& cfg, int epoch, size_t i, int h, int w) {
  auto rng = make_rng(mix_seed(cfg.seed, 0xa0c0000 + uint64_t(epoch), i));
  return sample_transform_specs(rng, h, w, cfg.crop_size);
}

struct BranchOut {
  Tensor rows1, rows2;  // unit rows, spatially aligned
  Tensor refined2;      // branch-2 post-refinement map (weak-loss input)
};

BranchOut branch_forward(const SegModel& model, const ImageSample& s,
                         const TransformSpecs& specs) {
  BranchViews v = make_branch_views(s, specs);
  // branch 1: features of the untransformed view, refined, then the shared
  // geometric transform replayed in feature space
  Tensor f1 = model.net->forward(to_tensor(v.view1_image));
  Tensor r1 = model.cae->refine(f1, v.view1_image);
  Tensor g1 = apply_geometric_features(r1, v.shared_geo, kStride);
  // branch 2: the transform applied in image space before extraction
  Tensor f2 = model.net->forward(to_tensor(v.view2_image));
  Tensor r2 = model.cae->refine(f2, v.view2_image);
  BranchOut out;
  try {
    out.rows1 = l2_normalize_rows(chw_to_rows(g1), 1e-12);
    out.rows2 = l2_normalize_rows(chw_to_rows(r2), 1e-12);
  } catch (const std::domain_error& e) {
    throw NumericalError(std::string("degenerate feature row: ") + e.what());
  }
  out.refined2 = r2;
  return out;
}

Eigen::MatrixXd rows_to_matrix(const Tensor& rows) {
  int n = rows.dim(0), d = rows.dim(1);
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    m.row(i) = rows.value().segment(int64_t(i) * d, d);
  return m;
}

std::string epoch_dir(const std::string& out_dir, int epoch) {
  return out_dir + "/ckpt_epoch_" + std::to_string(epoch);
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v))
    throw NumericalError(std::string(what) + " is not finite; aborting");
}

}  // namespace

std::vector<double> pretrain_instance_embeddings(
    const std::vector<ImageSample>& dataset, SegModel& model,
    const PretrainConfig& cfg) {
  if (cfg.steps == 0) return {};
  if (cfg.steps < 0) throw UsageError("pretrain: negative step count");
  if (dataset.size() < 2)
    throw UsageError("pretrain: need at least 2 images for the contrastive objective");
  int b = std::min<int>(cfg.batch_size, int(dataset.size()));
  if (b < 2) b = 2;

  std::vector<Tensor> params = model.net->parameters();
  auto proj_params = model.projector->parameters();
  params.insert(params.end(), proj_params.begin(), proj_params.end());
  AdamOptimizer opt(params, cfg.lr);

  std::vector<double> losses;
  std::vector<int> labels(b);
  for (int i = 0; i < b; ++i) labels[i] = i;
  for (int step = 0; step < cfg.steps; ++step) {
    auto rng = make_rng(mix_seed(cfg.seed, 0x9ae0000, uint64_t(step)));
    auto batch = sample_indices(rng, dataset.size(), size_t(b));
    std::vector<Tensor> za, zb;
    for (size_t idx : batch) {
      const auto& s = dataset[idx];
      auto sa = sample_transform_specs(rng, s.image.h, s.image.w, cfg.crop_size);
      auto sb = sample_transform_specs(rng, s.image.h, s.image.w, cfg.crop_size);
      Image va = apply_geometric(apply_photometric(s.image, sa.photo1), sa.geo);
      Image vb = apply_geometric(apply_photometric(s.image, sb.photo2), sb.geo);
      za.push_back(embed_forward(*model.net, *model.projector, to_tensor(va)));
      zb.push_back(embed_forward(*model.net, *model.projector, to_tensor(vb)));
    }
    Tensor logits = scale(matmul(concat_rows(za), transpose2d(concat_rows(zb))),
                          1.0 / cfg.temperature);
    Tensor loss = scale(add(cross_entropy_logits(logits, labels),
                            cross_entropy_logits(transpose2d(logits), labels)),
                        0.5);
    check_finite(loss.item(), "pretrain loss");
    loss.backward();
    opt.step();
    losses.push_back(loss.item());
  }
  return losses;
}

Eigen::MatrixXd image_feature_rows(const SegModel& model, const Image& image,
                                   int* gh, int* gw) {
  Tensor f = model.net->forward(to_tensor(image));
  Tensor r = model.cae->refine(f, image);
  if (gh) *gh = r.dim(1);
  if (gw) *gw = r.dim(2);
  Tensor rows;
  try {
    rows = l2_normalize_rows(chw_to_rows(r), 1e-12);
  } catch (const std::domain_error& e) {
    throw NumericalError(std::string("degenerate feature row: ") + e.what());
  }
  return rows_to_matrix(rows);
}

TrainResult train(const TrainConfig& cfg, const std::vector<ImageSample>& dataset,
                  SegModel& model, const PseudoLabelSet* pseudo_labels,
                  const std::string& out_dir, int start_epoch) {
  if (cfg.epochs <= 0 || cfg.batch_size <= 0 || cfg.k_pixel <= 0 ||
      cfg.pixels_per_image <= 0)
    throw UsageError("train: counts must be positive");
  if (cfg.lr <= 0) throw UsageError("train: lr must be positive");
  if (dataset.empty()) throw UsageError("train: empty dataset");
  if (start_epoch < 0 || start_epoch > cfg.epochs)
    throw UsageError("train: start_epoch out of range");
  CamMode cam_mode;
  if (cfg.cam_mode == "classic")
    cam_mode = CamMode::classic;
  else if (cfg.cam_mode == "modified")
    cam_mode = CamMode::modified;
  else
    throw UsageError("train: cam_mode must be classic or modified");
  fs::create_directories(out_dir);

  bool use_weak = cfg.weak_weight > 0.0 && pseudo_labels != nullptr;
  struct WeakInfo {
    int full_label = -1;
    std::vector<const PseudoLabel*> crops;  // selected only
  };
  std::unordered_map<std::string, WeakInfo> weak;
  if (use_weak) {
    for (const auto& e : pseudo_labels->entries) {
      auto& w = weak[e.parent_id];
      if (e.slot == ViewSlot::full)
        w.full_label = e.label;
      else if (e.selected)
        w.crops.push_back(&e);
    }
    for (const auto& s : dataset) {
      auto it = weak.find(s.id);
      if (it == weak.end() || it->second.full_label < 0)
        throw MissingArtifactError(
            "train: no pseudo label for image '" + s.id +
            "'; run the pseudo-label stage on this dataset first");
    }
  }

  std::vector<Tensor> params = model.parameters();
  AdamOptimizer opt(params, cfg.lr, cfg.weight_decay, cfg.grad_clip);
  if (start_epoch > 0) {
    auto ck = load_checkpoint(epoch_dir(out_dir, start_epoch - 1) + "/model.bin");
    load_model_weights(model, ck);
    opt.load_state(ck);
  }

  std::ofstream metrics(out_dir + "/metrics.txt", std::ios::app);
  char line[256];
  TrainResult res;
  size_t n = dataset.size();
  int dim = model.config.dim;

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    // (a) feature pass: post-refinement unit rows of both branches to disk
    std::string cache_dir = out_dir + "/cache_epoch_" + std::to_string(epoch);
    fs::create_directories(cache_dir);
    {
      FeatureCacheWriter all1(cache_dir, "b1", dim), all2(cache_dir, "b2", dim);
      FeatureCacheWriter fit1(cache_dir, "b1fit", dim), fit2(cache_dir, "b2fit", dim);
      for (size_t i = 0; i < n; ++i) {
        const auto& s = dataset[i];
        auto specs = specs_for(cfg, epoch, i, s.image.h, s.image.w);
        auto b = branch_forward(model, s, specs);
        Eigen::MatrixXd m1 = rows_to_matrix(b.rows1);
        Eigen::MatrixXd m2 = rows_to_matrix(b.rows2);
        all1.append(s.id, m1);
        all2.append(s.id, m2);
        if (m1.rows() > cfg.pixels_per_image) {
          auto rng = make_rng(mix_seed(cfg.seed, 0x5ab0000 + uint64_t(epoch), i));
          auto pick = sample_indices(rng, size_t(m1.rows()),
                                     size_t(cfg.pixels_per_image));
          Eigen::MatrixXd s1(pick.size(), dim), s2(pick.size(), dim);
          for (size_t j = 0; j < pick.size(); ++j) {
            s1.row(j) = m1.row(pick[j]);
            s2.row(j) = m2.row(pick[j]);
          }
          fit1.append(s.id, s1);
          fit2.append(s.id, s2);
        } else {
          fit1.append(s.id, m1);
          fit2.append(s.id, m2);
        }
      }
    }

    // (b) per-branch k-means; centers and assignments frozen for the epoch
    ClusterModel cm1, cm2;
    {
      FeatureCacheReader r1(cache_dir, "b1fit"), r2(cache_dir, "b2fit");
      auto s1 = r1.source(), s2 = r2.source();
      cm1 = kmeans_fit(*s1, cfg.k_pixel, 50,
                       mix_seed(cfg.seed, 0x230000, uint64_t(epoch) * 2));
      cm2 = kmeans_fit(*s2, cfg.k_pixel, 50,
                       mix_seed(cfg.seed, 0x230000, uint64_t(epoch) * 2 + 1));
    }
    std::vector<std::vector<int>> y1(n), y2(n);
    {
      FeatureCacheReader r1(cache_dir, "b1"), r2(cache_dir, "b2");
      for (size_t i = 0; i < n; ++i) {
        y1[i] = assign(cm1, r1.read(dataset[i].id)).labels;
        y2[i] = assign(cm2, r2.read(dataset[i].id)).labels;
      }
    }

    // (c) gradient phase on the frozen targets
    auto order_rng = make_rng(mix_seed(cfg.seed, 0x0d30000, uint64_t(epoch)));
    auto order = sample_indices(order_rng, n, n);
    int step = 0;
    for (size_t at = 0; at < n; at += size_t(cfg.batch_size), ++step) {
      size_t bn = std::min(size_t(cfg.batch_size), n - at);
      Tensor within, cross;
      int64_t batch_pixels = 0;
      std::vector<Tensor> weak_logits;
      std::vector<int> weak_labels;
      for (size_t bi = 0; bi < bn; ++bi) {
        size_t i = order[at + bi];
        const auto& s = dataset[i];
        auto specs = specs_for(cfg, epoch, i, s.image.h, s.image.w);
        auto b = branch_forward(model, s, specs);
        auto p = pixel_loss(b.rows1, b.rows2, y1[i], y2[i], cm1.centers,
                            cm2.centers, cfg.balanced);
        within = within.defined() ? add(within, p.l_within) : p.l_within;
        cross = cross.defined() ? add(cross, p.l_cross) : p.l_cross;
        batch_pixels += p.n_pixels;
        if (use_weak) {
          const auto& info = weak.at(s.id);
          weak_logits.push_back(model.cam(cam_mode).logits(b.refined2));
          weak_labels.push_back(info.full_label);
          for (const PseudoLabel* c : info.crops) {
            Image cropped = crop(s.image, c->top, c->left, c->h, c->w);
            Image view = resize_bilinear(cropped, cfg.crop_size, cfg.crop_size);
            Tensor cf = model.net->forward(to_tensor(view));
            Tensor cr = model.cae->refine(cf, view);
            weak_logits.push_back(model.cam(cam_mode).logits(cr));
            weak_labels.push_back(c->label);
          }
        }
      }
      PixelLossResult batch_pixel;
      batch_pixel.l_within = scale(within, 1.0 / double(bn));
      batch_pixel.l_cross = scale(cross, 1.0 / double(bn));
      batch_pixel.n_pixels = batch_pixels;
      Tensor weak_t;
      if (!weak_logits.empty())
        weak_t = weak_loss(concat_rows(weak_logits), weak_labels);
      auto total = total_loss(batch_pixel, weak_t, cfg.weak_weight,
                              int64_t(weak_labels.size()));
      check_finite(total.report.l_total, "training loss");
      total.value.backward();
      opt.step();

      res.steps.push_back({epoch, step, total.report});
      std::snprintf(line, sizeof(line),
                    "epoch=%d step=%d l_within=%.17g l_cross=%.17g "
                    "l_pixel=%.17g l_weak=%.17g l_total=%.17g n_pixels=%lld "
                    "n_views=%lld",
                    epoch, step, total.report.l_within, total.report.l_cross,
                    total.report.l_pixel, total.report.l_weak,
                    total.report.l_total,
                    static_cast<long long>(total.report.n_pixels),
                    static_cast<long long>(total.report.n_labeled_views));
      metrics << line << '\n';
    }
    metrics.flush();

    // persist epoch artifacts
    std::string dir = epoch_dir(out_dir, epoch);
    fs::create_directories(dir);
    Checkpoint ck;
    ck.config_json = cfg.config_json;
    ck.tensors = model.named_parameters();
    for (auto& t : opt.state_tensors()) ck.tensors.push_back(t);
    EpochArtifacts art;
    art.checkpoint = dir + "/model.bin";
    art.clusters_b1 = dir + "/clusters_b1.bin";
    art.clusters_b2 = dir + "/clusters_b2.bin";
    save_checkpoint(ck, art.checkpoint);
    save_cluster_model(cm1, art.clusters_b1);
    save_cluster_model(cm2, art.clusters_b2);
    res.epochs.push_back(art);
    res.final_checkpoint = art.checkpoint;
    fs::remove_all(cache_dir);
  }
  return res;
}

LabelMap segment_image(const SegModel& model, const Image& image,
                       const ClusterModel& clusters, bool use_crf,
                       const CrfParams& crf_params) {
  int gh = 0, gw = 0;
  Eigen::MatrixXd rows = image_feature_rows(model, image, &gh, &gw);
  int k = clusters.k;
  Eigen::MatrixXd d2(rows.rows(), k);
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    for (int c = 0; c < k; ++c)
      d2(i, c) = (rows.row(i) - clusters.centers.row(c)).squaredNorm();
  Eigen::MatrixXd unary = unary_from_distances(d2);

  // plane-wise bilinear upsampling keeps rows on the simplex
  std::vector<double> src(size_t(k) * gh * gw), dst(size_t(k) * image.h * image.w);
  for (int c = 0; c < k; ++c)
    for (int i = 0; i < gh * gw; ++i) src[size_t(c) * gh * gw + i] = unary(i, c);
  resize_bilinear_planes(src.data(), k, gh, gw, dst.data(), image.h, image.w);
  int64_t npx = int64_t(image.h) * image.w;
  Eigen::MatrixXd full(npx, k);
  for (int c = 0; c < k; ++c)
    for (int64_t i = 0; i < npx; ++i) full(i, c) = dst[size_t(c) * npx + i];

  if (use_crf) return meanfield_refine(full, image, crf_params);
  LabelMap out(image.h, image.w);
  for (int64_t i = 0; i < npx; ++i) {
    int best = 0;
    for (int c = 1; c < k; ++c)
      if (full(i, c) > full(i, best)) best = c;
    out.v[i] = uint8_t(best);
  }
  return out;
}

}  // namespace selfseg
