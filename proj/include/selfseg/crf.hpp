#pragma once

#include <Eigen/Dense>

#include <functional>

#include "selfseg/image.hpp"

namespace selfseg {

struct CrfParams {
  int iters = 10;
  double theta_alpha = 40.0;  // appearance kernel, position bandwidth (px)
  double theta_beta = 0.2;    // appearance kernel, color bandwidth ([0,1] RGB)
  double theta_gamma = 3.0;   // smoothness kernel, position bandwidth (px)
  double w1 = 4.0;            // appearance weight
  double w2 = 3.0;            // smoothness weight
  // Exact dense pairwise summation is O(N^2 K); refuse larger inputs.
  int64_t max_pixels = 16384;
};

// Rows of per-pixel distances -> softmax(-d) probability rows.
Eigen::MatrixXd unary_from_distances(const Eigen::MatrixXd& distances);

// Mean-field inference with Potts compatibility over the two Gaussian
// kernels (self-connection excluded). unary: (h*w) x K probability rows in
// image raster order. Returns argmax labels; final marginals optionally
// written to `marginals_out`, and `on_iteration` sees each update.
LabelMap meanfield_refine(
    const Eigen::MatrixXd& unary, const Image& image, const CrfParams& params,
    Eigen::MatrixXd* marginals_out = nullptr,
    const std::function<void(const Eigen::MatrixXd&)>& on_iteration = {});

}  // namespace selfseg
