#pragma once

#include <string>
#include <vector>

#include "selfseg/clustering.hpp"
#include "selfseg/crf.hpp"
#include "selfseg/data_pipeline.hpp"
#include "selfseg/losses.hpp"
#include "selfseg/model.hpp"
#include "selfseg/pgg.hpp"

namespace selfseg {

struct PretrainConfig {
  int steps = 200;
  int batch_size = 16;
  double lr = 1e-3;
  double temperature = 0.2;
  int crop_size = 64;
  uint64_t seed = 0;
};

// Two-view instance-discrimination warmup for net + projector. 0 steps
// leaves the random init untouched. Aborts with NumericalError on NaN loss.
// Returns the per-step contrastive loss values.
std::vector<double> pretrain_instance_embeddings(
    const std::vector<ImageSample>& dataset, SegModel& model,
    const PretrainConfig& cfg);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 128;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double grad_clip = 10.0;
  int k_pixel = 27;
  int crop_size = 320;
  double weak_weight = 1.0;  // 0 disables the global-guidance term entirely
  bool balanced = false;
  int pixels_per_image = 1024;  // cap on rows entering the k-means fit
  std::string cam_mode = "modified";
  uint64_t seed = 0;
  std::string config_json = "{}";  // snapshot stored in checkpoints
};

struct StepRecord {
  int epoch = 0;
  int step = 0;
  LossReport loss;
};

struct EpochArtifacts {
  std::string checkpoint;  // model + optimizer state
  std::string clusters_b1, clusters_b2;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<EpochArtifacts> epochs;
  std::string final_checkpoint;
};

// Alternating schedule: per epoch, a read-only feature pass fills a disk
// cache, per-branch k-means fixes centers and assignments, then one epoch of
// gradient steps runs on the frozen targets. Checkpoints (with optimizer
// state) and cluster models land under out_dir/ckpt_epoch_<n>/; metrics
// append to out_dir/metrics.txt. start_epoch > 0 resumes from the previous
// epoch's checkpoint.
TrainResult train(const TrainConfig& cfg, const std::vector<ImageSample>& dataset,
                  SegModel& model, const PseudoLabelSet* pseudo_labels,
                  const std::string& out_dir, int start_epoch = 0);

// Post-CAE features of one image as unit rows ([gh*gw, D]) plus grid size.
Eigen::MatrixXd image_feature_rows(const SegModel& model, const Image& image,
                                   int* gh = nullptr, int* gw = nullptr);

// Cluster-distance segmentation: per-pixel softmax(-d^2) over the centers,
// bilinearly upsampled to image resolution, argmax (optionally CRF-refined).
LabelMap segment_image(const SegModel& model, const Image& image,
                       const ClusterModel& clusters, bool use_crf,
                       const CrfParams& crf_params = {});

}  // namespace selfseg
