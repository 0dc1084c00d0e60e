#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "selfseg/tensor.hpp"

namespace selfseg {

struct LossReport {
  double l_within = 0, l_cross = 0, l_pixel = 0, l_weak = 0, l_total = 0;
  int64_t n_pixels = 0, n_labeled_views = 0;
};

// Mean over labeled rows of -log softmax(-d^2(f_i, mu))[y_i], with d^2 on the
// sphere: softmax(-d^2) == softmax(2 f.mu) when centers are unit rows, so the
// features themselves need not be normalized. labels use -1 for ignore.
// balanced: reweight each row by inverse label frequency within the call.
nn::Tensor clust_loss(const nn::Tensor& feats, const std::vector<int>& labels,
                      const Eigen::MatrixXd& centers, bool balanced = false);

struct PixelLossResult {
  nn::Tensor l_within, l_cross;
  int64_t n_pixels = 0;  // labeled rows in branch 1
};

// Two aligned branches of [N,D] rows with per-branch labels and centers.
// within: each branch against its own assignment; cross: swapped.
PixelLossResult pixel_loss(const nn::Tensor& f1, const nn::Tensor& f2,
                           const std::vector<int>& y1, const std::vector<int>& y2,
                           const Eigen::MatrixXd& centers1,
                           const Eigen::MatrixXd& centers2,
                           bool balanced = false);

// Mean cross-entropy of image-level logits [n,Kg] against pseudo labels.
nn::Tensor weak_loss(const nn::Tensor& logits, const std::vector<int>& labels);

struct TotalLoss {
  nn::Tensor value;
  LossReport report;
};

// l_total = weak_weight * l_weak + l_pixel. weak may be undefined (no
// selected views in the batch); its contribution is then zero.
TotalLoss total_loss(const PixelLossResult& pixel, const nn::Tensor& weak,
                     double weak_weight, int64_t n_labeled_views);

}  // namespace selfseg
