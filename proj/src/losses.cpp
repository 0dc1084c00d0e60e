#include "selfseg/losses.hpp"

#include <stdexcept>

namespace selfseg {

using namespace nn;

Tensor clust_loss(const Tensor& feats, const std::vector<int>& labels,
                  const Eigen::MatrixXd& centers, bool balanced) {
  if (feats.shape().size() != 2)
    throw std::invalid_argument("clust_loss: features must be [N,D]");
  int n = feats.dim(0), d = feats.dim(1);
  if (int(labels.size()) != n)
    throw std::invalid_argument("clust_loss: label count mismatch");
  if (int(centers.cols()) != d)
    throw std::invalid_argument("clust_loss: center dimension mismatch");
  int k = int(centers.rows());
  for (int i = 0; i < n; ++i)
    if (labels[i] >= k || labels[i] < -1)
      throw std::out_of_range("clust_loss: label out of range");

  Eigen::VectorXd cv(int64_t(k) * d);
  for (int j = 0; j < k; ++j)
    for (int c = 0; c < d; ++c) cv(int64_t(j) * d + c) = centers(j, c);
  Tensor ct = Tensor::from_data({k, d}, cv);
  Tensor logits = scale(matmul(feats, transpose2d(ct)), 2.0);

  std::vector<uint8_t> mask(n);
  std::vector<int> safe_labels(n);
  for (int i = 0; i < n; ++i) {
    mask[i] = labels[i] >= 0;
    safe_labels[i] = std::max(labels[i], 0);
  }
  std::vector<double> weights;
  if (balanced) {
    std::vector<int64_t> count(k, 0);
    int64_t total = 0;
    for (int i = 0; i < n; ++i)
      if (mask[i]) {
        ++count[labels[i]];
        ++total;
      }
    weights.assign(n, 1.0);
    for (int i = 0; i < n; ++i)
      if (mask[i]) weights[i] = double(total) / (double(k) * double(count[labels[i]]));
  }
  return cross_entropy_logits(logits, safe_labels, mask, weights);
}

PixelLossResult pixel_loss(const Tensor& f1, const Tensor& f2,
                           const std::vector<int>& y1, const std::vector<int>& y2,
                           const Eigen::MatrixXd& centers1,
                           const Eigen::MatrixXd& centers2, bool balanced) {
  if (f1.shape() != f2.shape())
    throw std::invalid_argument("pixel_loss: branch shape mismatch");
  if (y1.size() != y2.size())
    throw std::invalid_argument("pixel_loss: label count mismatch");
  PixelLossResult out;
  out.l_within = add(clust_loss(f1, y1, centers1, balanced),
                     clust_loss(f2, y2, centers2, balanced));
  out.l_cross = add(clust_loss(f1, y2, centers2, balanced),
                    clust_loss(f2, y1, centers1, balanced));
  for (int v : y1)
    if (v >= 0) ++out.n_pixels;
  return out;
}

Tensor weak_loss(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.shape().size() != 2 || logits.dim(0) != int(labels.size()))
    throw std::invalid_argument("weak_loss: logits/label mismatch");
  return cross_entropy_logits(logits, labels);
}

TotalLoss total_loss(const PixelLossResult& pixel, const Tensor& weak,
                     double weak_weight, int64_t n_labeled_views) {
  TotalLoss out;
  Tensor l_pixel = add(pixel.l_within, pixel.l_cross);
  out.value = weak.defined() ? add(scale(weak, weak_weight), l_pixel) : l_pixel;
  out.report.l_within = pixel.l_within.item();
  out.report.l_cross = pixel.l_cross.item();
  out.report.l_pixel = l_pixel.item();
  out.report.l_weak = weak.defined() ? weak.item() : 0.0;
  out.report.l_total = out.value.item();
  out.report.n_pixels = pixel.n_pixels;
  out.report.n_labeled_views = n_labeled_views;
  return out;
}

}  // namespace selfseg
