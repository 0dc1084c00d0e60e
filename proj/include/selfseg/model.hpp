#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "selfseg/cae.hpp"
#include "selfseg/image.hpp"
#include "selfseg/tensor.hpp"

namespace selfseg {

struct ModelConfig {
  std::vector<int> widths{32, 64, 128, 256};  // encoder stage widths
  int dim = 256;                              // FPN output dimension D
};

nn::Tensor to_tensor(const Image& img);  // [3,H,W]

// 4-stage strided encoder with an FPN-style top-down decoder; output stride 8.
class FeatureExtractor {
 public:
  FeatureExtractor(const ModelConfig& cfg, std::mt19937_64& rng);

  // [3,H,W] with H,W >= 32  ->  [D, ceil(H/8), ceil(W/8)]
  nn::Tensor forward(const nn::Tensor& image) const;

  std::vector<nn::Tensor> parameters();
  std::vector<std::pair<std::string, nn::Tensor>> named_parameters();
  int out_dim() const { return cfg_.dim; }

 private:
  ModelConfig cfg_;
  struct Conv {
    nn::Tensor w, b;
  };
  std::vector<Conv> stages_;  // stride-2 3x3 convs
  Conv lat3_, lat4_;          // 1x1 laterals to D
  Conv smooth_;               // 3x3 on the fused 1/8 map
};

// 2-layer MLP on pooled features (the projector feeding global embeddings).
class Projector {
 public:
  Projector(int dim, std::mt19937_64& rng);
  nn::Tensor forward(const nn::Tensor& pooled) const;  // [1,D] -> [1,D]
  std::vector<nn::Tensor> parameters();
  std::vector<std::pair<std::string, nn::Tensor>> named_parameters();

 private:
  nn::Tensor w1_, b1_, w2_, b2_;
};

enum class CamMode { classic, modified };

// Image-level classifier over the spatial feature map.
// classic:  q = GAP(g(F));  modified: q = g1(ReLU(GAP(g2(F)))).
class CamHead {
 public:
  CamHead(CamMode mode, int dim, int n_global_classes, std::mt19937_64& rng);
  nn::Tensor logits(const nn::Tensor& fmap) const;  // [D,h,w] -> [1,Kg]
  std::vector<nn::Tensor> parameters();
  std::vector<std::pair<std::string, nn::Tensor>> named_parameters(
      const std::string& prefix);
  CamMode mode() const { return mode_; }
  int n_classes() const { return n_classes_; }

  nn::Tensor g_w, g_b;    // classic 1x1 conv (also usable as g2)
  nn::Tensor g2_w, g2_b;  // modified 1x1 conv
  nn::Tensor g1_w, g1_b;  // modified linear

 private:
  CamMode mode_;
  int n_classes_;
};

// Everything the checkpoint stores: backbone, projector, CAM heads, CAE.
struct SegModel {
  ModelConfig config;
  int n_global_classes = 0;
  std::shared_ptr<FeatureExtractor> net;
  std::shared_ptr<Projector> projector;
  std::shared_ptr<CamHead> cam_classic;
  std::shared_ptr<CamHead> cam_modified;
  std::shared_ptr<CAEModule> cae;

  static SegModel create(const ModelConfig& cfg, int n_global_classes,
                         int nominal_crop, CAEConfig cae_cfg, uint64_t seed);
  std::vector<nn::Tensor> parameters() const;
  std::vector<std::pair<std::string, nn::Tensor>> named_parameters() const;
  CamHead& cam(CamMode m) const {
    return m == CamMode::classic ? *cam_classic : *cam_modified;
  }
};

// Differentiable path used by pretraining; image already preprocessed.
nn::Tensor embed_forward(const FeatureExtractor& net, const Projector& proj,
                         const nn::Tensor& image);
// Inference helper: resize shorter side to `resize`, center crop `crop`,
// embed, L2-normalize. Throws NumericalError on a zero embedding.
Eigen::VectorXd global_embed(const FeatureExtractor& net, const Projector& proj,
                             const Image& image, int resize, int crop);

struct Checkpoint {
  uint32_t version = 1;
  std::string config_json;
  std::vector<std::pair<std::string, nn::Tensor>> tensors;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
// Copies values from ckpt into the model's named parameters (by name).
void load_model_weights(SegModel& model, const Checkpoint& ckpt);

// ADAM with optional global-norm gradient clipping.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<nn::Tensor> params, double lr, double weight_decay = 0.0,
                double clip_norm = 0.0, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step();  // consumes .grad() on every parameter
  int64_t steps() const { return t_; }

  // optimizer-state serialization (bit-exact resume)
  std::vector<std::pair<std::string, nn::Tensor>> state_tensors() const;
  void load_state(const Checkpoint& ckpt);

 private:
  std::vector<nn::Tensor> params_;
  std::vector<Eigen::VectorXd> m_, v_;
  double lr_, wd_, clip_, b1_, b2_, eps_;
  int64_t t_ = 0;
};

}  // namespace selfseg
