#include "selfseg/cae.hpp"

#include <cmath>

#include "selfseg/common.hpp"

namespace selfseg {

using namespace nn;

double softplus_inverse(double y) {
  if (y <= 0) throw std::invalid_argument("softplus_inverse: y must be positive");
  return y > 30 ? y : std::log(std::expm1(y));
}

CAEModule::CAEModule(int dim, int nominal_grid_h, int nominal_grid_w,
                     std::mt19937_64& rng, CAEConfig cfg)
    : config(std::move(cfg)), dim_(dim) {
  double diag = std::sqrt(double(nominal_grid_h) * nominal_grid_h +
                          double(nominal_grid_w) * nominal_grid_w);
  raw_omega1_ = Tensor::scalar(softplus_inverse(0.5), true);
  raw_omega2_ = Tensor::scalar(softplus_inverse(0.5), true);
  raw_theta1_ = Tensor::scalar(softplus_inverse(std::max(diag / 4.0, 0.5)), true);
  raw_theta2_ = Tensor::scalar(softplus_inverse(0.3), true);
  raw_theta3_ = Tensor::scalar(softplus_inverse(std::max(diag / 4.0, 0.5)), true);
  // h starts near identity with slight noise so the residual branch dominates
  Eigen::VectorXd hw(int64_t(dim) * dim);
  for (int o = 0; o < dim; ++o)
    for (int i = 0; i < dim; ++i)
      hw(int64_t(o) * dim + i) = (o == i ? 1.0 : 0.0) + 0.01 * normal(rng);
  h_w_ = Tensor::from_data({dim, dim, 1, 1}, hw, true);
  h_b_ = Tensor::zeros({dim}, true);
}

Tensor CAEModule::pairwise_affinity(const Tensor& features_ds,
                                    const Eigen::MatrixXd& colors,
                                    const Eigen::MatrixXd& positions) const {
  if (features_ds.shape().size() != 2)
    throw std::invalid_argument("pairwise_affinity: features must be [N,D]");
  int n = features_ds.dim(0);
  if (int(colors.rows()) != n || int(positions.rows()) != n)
    throw std::invalid_argument("pairwise_affinity: row count mismatch");

  // constant squared-distance tables
  Eigen::VectorXd dp2(int64_t(n) * n), dc2(int64_t(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      dp2(int64_t(i) * n + j) = (positions.row(i) - positions.row(j)).squaredNorm();
      dc2(int64_t(i) * n + j) = (colors.row(i) - colors.row(j)).squaredNorm();
    }
  Tensor dp2_t = Tensor::from_data({n, n}, dp2);
  Tensor dc2_t = Tensor::from_data({n, n}, dc2);

  Tensor s;
  if (config.mode == "raw_only") {
    s = Tensor::from_data({n, n}, Eigen::VectorXd::Ones(int64_t(n) * n));
  } else {
    Tensor fn = l2_normalize_rows(features_ds);
    s = matmul(fn, transpose2d(fn));
  }
  if (config.mode == "feature_only") return s;  // k == 1

  Tensor t1 = theta1(), t2 = theta2(), t3 = theta3();
  Tensor inv_2t1sq = reciprocal(scale(square(t1), 2.0));
  Tensor inv_col = config.theta2_squared ? reciprocal(scale(square(t2), 2.0))
                                         : reciprocal(scale(t2, 2.0));
  Tensor inv_2t3sq = reciprocal(scale(square(t3), 2.0));
  Tensor k1 = exp_elem(neg(add(mul(dp2_t, inv_2t1sq), mul(dc2_t, inv_col))));
  Tensor k2 = exp_elem(neg(mul(dp2_t, inv_2t3sq)));
  Tensor k = add(mul(k1, omega1()), mul(k2, omega2()));
  return mul(s, k);
}

Tensor CAEModule::refine(const Tensor& fmap, const Image& raw) const {
  if (config.mode == "off") return fmap;
  if (fmap.shape().size() != 3 || fmap.dim(0) != dim_)
    throw std::invalid_argument("refine: feature map must be [D,h,w]");
  int h = fmap.dim(1), w = fmap.dim(2);
  int gh = (h + 1) / 2, gw = (w + 1) / 2;  // 1/8 -> 1/16 grid
  int n = gh * gw;

  Tensor f_ds = interpolate_bilinear(fmap, gh, gw);
  Tensor rows = chw_to_rows(f_ds);

  Image small = resize_bilinear(raw, gh, gw);
  Eigen::MatrixXd colors(n, 3), positions(n, 2);
  for (int y = 0; y < gh; ++y)
    for (int x = 0; x < gw; ++x) {
      int i = y * gw + x;
      for (int c = 0; c < 3; ++c) colors(i, c) = small.at(y, x, c);
      positions(i, 0) = y;
      positions(i, 1) = x;
    }

  Tensor p = pairwise_affinity(rows, colors, positions);
  Tensor agg = config.literal_gate ? scale_rows(rows, row_sums(p)) : matmul(p, rows);
  Tensor up = interpolate_bilinear(rows_to_chw(agg, gh, gw), h, w);
  Tensor residual = conv2d(fmap, h_w_, h_b_, 1, 0);
  return add(residual, up);
}

std::vector<Tensor> CAEModule::parameters() {
  return {raw_omega1_, raw_omega2_, raw_theta1_, raw_theta2_, raw_theta3_, h_w_, h_b_};
}

std::vector<std::pair<std::string, Tensor>> CAEModule::named_parameters() {
  return {{"cae.raw_omega1", raw_omega1_}, {"cae.raw_omega2", raw_omega2_},
          {"cae.raw_theta1", raw_theta1_}, {"cae.raw_theta2", raw_theta2_},
          {"cae.raw_theta3", raw_theta3_}, {"cae.h_w", h_w_},
          {"cae.h_b", h_b_}};
}

}  // namespace selfseg
