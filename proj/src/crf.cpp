#include "selfseg/crf.hpp"

#include <cmath>
#include <stdexcept>

#include "selfseg/common.hpp"

namespace selfseg {

Eigen::MatrixXd unary_from_distances(const Eigen::MatrixXd& distances) {
  Eigen::MatrixXd out(distances.rows(), distances.cols());
  for (Eigen::Index i = 0; i < distances.rows(); ++i) {
    Eigen::VectorXd neg = -distances.row(i).transpose();
    if (!neg.allFinite())
      throw std::invalid_argument("unary_from_distances: non-finite distance");
    double m = neg.maxCoeff();
    Eigen::VectorXd e = (neg.array() - m).exp();
    out.row(i) = e / e.sum();
  }
  return out;
}

LabelMap meanfield_refine(
    const Eigen::MatrixXd& unary, const Image& image, const CrfParams& params,
    Eigen::MatrixXd* marginals_out,
    const std::function<void(const Eigen::MatrixXd&)>& on_iteration) {
  if (params.iters < 0)
    throw std::invalid_argument("meanfield_refine: negative iteration count");
  int64_t n = int64_t(image.h) * image.w;
  if (unary.rows() != n)
    throw std::invalid_argument("meanfield_refine: unary/image size mismatch");
  if (n > params.max_pixels)
    throw UsageError("meanfield_refine: image exceeds max_pixels for exact inference");
  int k = int(unary.cols());

  // Combined pairwise kernel, cached; self-connections zeroed. Doubles up to
  // ~256 MB, float above that.
  double inv_a = 1.0 / (2 * params.theta_alpha * params.theta_alpha);
  double inv_b = 1.0 / (2 * params.theta_beta * params.theta_beta);
  double inv_g = 1.0 / (2 * params.theta_gamma * params.theta_gamma);
  auto kernel = [&](int64_t i, int64_t j) {
    double dy = double(i / image.w - j / image.w);
    double dx = double(i % image.w - j % image.w);
    double dp2 = dy * dy + dx * dx;
    double dc2 = 0;
    for (int c = 0; c < 3; ++c) {
      double d = image.px[i * 3 + c] - image.px[j * 3 + c];
      dc2 += d * d;
    }
    return params.w1 * std::exp(-dp2 * inv_a - dc2 * inv_b) +
           params.w2 * std::exp(-dp2 * inv_g);
  };

  bool use_double = n <= 5792;
  Eigen::MatrixXd kd;
  Eigen::MatrixXf kf;
  if (use_double) {
    kd.resize(n, n);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) kd(i, j) = i == j ? 0.0 : kernel(i, j);
  } else {
    kf.resize(n, n);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j)
        kf(i, j) = i == j ? 0.0f : float(kernel(i, j));
  }

  Eigen::MatrixXd q = unary;
  for (int it = 0; it < params.iters; ++it) {
    Eigen::MatrixXd msg =
        use_double ? Eigen::MatrixXd(kd * q)
                   : Eigen::MatrixXd((kf * q.cast<float>()).cast<double>());
    for (int64_t i = 0; i < n; ++i) {
      double s = msg.row(i).sum();  // Potts: penalty for l is s - msg(i,l)
      Eigen::VectorXd logits(k);
      for (int l = 0; l < k; ++l)
        logits(l) = std::log(std::max(unary(i, l), 1e-300)) - (s - msg(i, l));
      double m = logits.maxCoeff();
      Eigen::VectorXd e = (logits.array() - m).exp();
      q.row(i) = e / e.sum();
    }
    if (on_iteration) on_iteration(q);
  }

  if (marginals_out) *marginals_out = q;
  LabelMap out(image.h, image.w);
  for (int64_t i = 0; i < n; ++i) {
    int best = 0;
    for (int l = 1; l < k; ++l)
      if (q(i, l) > q(i, best)) best = l;
    out.v[i] = uint8_t(best);
  }
  return out;
}

}  // namespace selfseg
