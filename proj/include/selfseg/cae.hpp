#pragma once

#include <random>
#include <string>
#include <vector>

#include "selfseg/image.hpp"
#include "selfseg/tensor.hpp"

namespace selfseg {

struct CAEConfig {
  // full | raw_only (s==1) | feature_only (k==1) | off
  std::string mode = "full";
  bool literal_gate = false;    // aggregate (sum_j P_ij) * f_i instead of sum_j P_ij f_j
  bool theta2_squared = false;  // 2*theta2^2 in the color denominator instead of 2*theta2
};

// Non-local feature refinement gated by Gaussian kernels over raw color and
// position. Positive parameters are stored as softplus preimages so any
// gradient step keeps them positive.
class CAEModule {
 public:
  // nominal_grid_*: downsampled (1/16) grid of the configured training crop;
  // sets the spatial bandwidth init (quarter of the grid diagonal).
  CAEModule(int dim, int nominal_grid_h, int nominal_grid_w, std::mt19937_64& rng,
            CAEConfig config = {});

  nn::Tensor omega1() const { return nn::softplus(raw_omega1_); }
  nn::Tensor omega2() const { return nn::softplus(raw_omega2_); }
  nn::Tensor theta1() const { return nn::softplus(raw_theta1_); }
  nn::Tensor theta2() const { return nn::softplus(raw_theta2_); }
  nn::Tensor theta3() const { return nn::softplus(raw_theta3_); }

  // P_ij = s_ij * (w1 k1_ij + w2 k2_ij) over the downsampled grid.
  // colors: N x 3 in [0,1]; positions: N x 2 in downsampled-grid pixel units.
  nn::Tensor pairwise_affinity(const nn::Tensor& features_ds,
                               const Eigen::MatrixXd& colors,
                               const Eigen::MatrixXd& positions) const;

  // F_i = h(f_i) + sum_j P_ij f_j. fmap is the 1/8 feature grid; the
  // aggregation runs at 1/16 and is upsampled back. `raw` is the image the
  // features were extracted from.
  nn::Tensor refine(const nn::Tensor& fmap, const Image& raw) const;

  std::vector<nn::Tensor> parameters();
  std::vector<std::pair<std::string, nn::Tensor>> named_parameters();

  CAEConfig config;

 private:
  nn::Tensor raw_omega1_, raw_omega2_, raw_theta1_, raw_theta2_, raw_theta3_;
  nn::Tensor h_w_, h_b_;  // 1x1 projector
  int dim_;
};

double softplus_inverse(double y);

}  // namespace selfseg
