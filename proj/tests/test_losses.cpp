#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "selfseg/common.hpp"
#include "selfseg/losses.hpp"

using namespace selfseg;
using namespace selfseg::nn;

namespace {

Eigen::MatrixXd unit_rows(int k, int d, std::mt19937_64& rng) {
  Eigen::MatrixXd m(k, d);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = normal(rng);
    m.row(i).normalize();
  }
  return m;
}

Tensor unit_feats(int n, int d, std::mt19937_64& rng, bool rg = false) {
  Eigen::VectorXd v(int64_t(n) * d);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd row(d);
    for (int j = 0; j < d; ++j) row(j) = normal(rng);
    row.normalize();
    v.segment(int64_t(i) * d, d) = row;
  }
  return Tensor::from_data({n, d}, v, rg);
}

// direct per-row evaluation of -log softmax(-||f-mu||^2)[y]
double scalar_clust(const Eigen::VectorXd& f, int y, const Eigen::MatrixXd& c) {
  Eigen::VectorXd neg_d(c.rows());
  for (int k = 0; k < c.rows(); ++k)
    neg_d(k) = -(f - c.row(k).transpose()).squaredNorm();
  double m = neg_d.maxCoeff();
  double z = (neg_d.array() - m).exp().sum();
  return std::log(z) + m - (neg_d(y) - m) - m;
}

}  // namespace

TEST_CASE("cluster loss scalar oracles") {
  // K=1: softmax over one element is 1, loss 0
  Eigen::MatrixXd one(1, 2);
  one << 1, 0;
  Eigen::VectorXd fv(2);
  fv << 0, 1;
  Tensor f = Tensor::from_data({1, 2}, fv);
  CHECK(clust_loss(f, {0}, one).item() == 0.0);

  // equidistant to two centers: ln 2
  Eigen::MatrixXd two(2, 2);
  two << 1, 0, 0, 1;
  Eigen::VectorXd mid(2);
  mid << 1 / std::sqrt(2.0), 1 / std::sqrt(2.0);
  Tensor fm = Tensor::from_data({1, 2}, mid);
  CHECK(clust_loss(fm, {0}, two).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // f=(1,0), mu0=(1,0), mu1=(0,1): loss(y=0) = ln(1+e^-2)
  Eigen::VectorXd ax(2);
  ax << 1, 0;
  Tensor fa = Tensor::from_data({1, 2}, ax);
  CHECK(clust_loss(fa, {0}, two).item() ==
        doctest::Approx(std::log(1 + std::exp(-2.0))).epsilon(1e-12));
  CHECK(clust_loss(fa, {0}, two).item() == doctest::Approx(0.126928).epsilon(1e-5));

  CHECK_THROWS(clust_loss(fa, {2}, two));
  CHECK_THROWS(clust_loss(fa, {0, 1}, two));
}

TEST_CASE("cluster loss matches the distance-form oracle on random batches") {
  auto rng = make_rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    int n = 7, d = 5, k = 4;
    auto centers = unit_rows(k, d, rng);
    Tensor feats = unit_feats(n, d, rng);
    std::vector<int> labels(n);
    for (auto& y : labels) y = uniform_int(rng, 0, k - 1);
    double want = 0;
    for (int i = 0; i < n; ++i)
      want += scalar_clust(feats.value().segment(int64_t(i) * d, d), labels[i], centers);
    want /= n;
    CHECK(clust_loss(feats, labels, centers).item() == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("cluster loss: ignore labels, permutation invariance, positivity") {
  auto rng = make_rng(5);
  int n = 8, d = 4, k = 3;
  auto centers = unit_rows(k, d, rng);
  Tensor feats = unit_feats(n, d, rng);
  std::vector<int> labels{0, 1, 2, -1, 1, -1, 0, 2};

  // ignore rows drop out: same value as the compacted batch
  std::vector<int> keep;
  for (int i = 0; i < n; ++i)
    if (labels[i] >= 0) keep.push_back(i);
  Eigen::VectorXd cv(int64_t(keep.size()) * d);
  std::vector<int> clabels;
  for (size_t j = 0; j < keep.size(); ++j) {
    cv.segment(int64_t(j) * d, d) = feats.value().segment(int64_t(keep[j]) * d, d);
    clabels.push_back(labels[keep[j]]);
  }
  Tensor compact = Tensor::from_data({int(keep.size()), d}, cv);
  CHECK(clust_loss(feats, labels, centers).item() ==
        doctest::Approx(clust_loss(compact, clabels, centers).item()).epsilon(1e-12));

  // permuting cluster indices and labels together changes nothing
  std::vector<int> perm{2, 0, 1};
  Eigen::MatrixXd pc(k, d);
  for (int i = 0; i < k; ++i) pc.row(perm[i]) = centers.row(i);
  std::vector<int> plabels(labels);
  for (auto& y : plabels)
    if (y >= 0) y = perm[y];
  CHECK(clust_loss(feats, plabels, pc).item() ==
        doctest::Approx(clust_loss(feats, labels, centers).item()).epsilon(1e-12));

  CHECK(clust_loss(feats, labels, centers).item() > 0.0);
}

TEST_CASE("gradient flows to features only; finite-difference check") {
  auto rng = make_rng(7);
  int n = 4, d = 3, k = 3;
  auto centers = unit_rows(k, d, rng);
  Tensor feats = unit_feats(n, d, rng, true);
  std::vector<int> labels{0, 2, 1, 1};

  Tensor loss = clust_loss(feats, labels, centers);
  loss.backward();
  CHECK(feats.grad().cwiseAbs().maxCoeff() > 0.0);

  double step = 1e-5;
  for (int64_t i = 0; i < feats.size(); ++i) {
    double orig = feats.value()(i);
    feats.value()(i) = orig + step;
    double up = clust_loss(feats, labels, centers).item();
    feats.value()(i) = orig - step;
    double dn = clust_loss(feats, labels, centers).item();
    feats.value()(i) = orig;
    double fd = (up - dn) / (2 * step);
    double denom = std::max({std::abs(fd), std::abs(feats.grad()(i)), 1e-8});
    CHECK(std::abs(fd - feats.grad()(i)) / denom < 1e-4);
  }
}

TEST_CASE("pixel loss: symmetric inputs, degenerate K=1, scalar-loop oracle") {
  auto rng = make_rng(11);
  int n = 4, d = 3, k = 2;
  auto c = unit_rows(k, d, rng);
  Tensor f = unit_feats(n, d, rng);
  std::vector<int> y{0, 1, 1, 0};
  auto same = pixel_loss(f, f, y, y, c, c);
  CHECK(same.l_within.item() == doctest::Approx(same.l_cross.item()).epsilon(1e-12));
  CHECK(same.n_pixels == 4);

  Eigen::MatrixXd k1(1, d);
  k1 = unit_rows(1, d, rng);
  auto degen = pixel_loss(f, f, {0, 0, 0, 0}, {0, 0, 0, 0}, k1, k1);
  CHECK(degen.l_within.item() == 0.0);
  CHECK(degen.l_cross.item() == 0.0);

  // independent term-by-term loop on a 2x2 map
  auto c1 = unit_rows(2, d, rng), c2 = unit_rows(2, d, rng);
  Tensor f1 = unit_feats(4, d, rng), f2 = unit_feats(4, d, rng);
  std::vector<int> y1{0, 1, 0, 1}, y2{1, 1, 0, 0};
  auto got = pixel_loss(f1, f2, y1, y2, c1, c2);
  double within = 0, cross = 0;
  for (int i = 0; i < 4; ++i) {
    within += scalar_clust(f1.value().segment(int64_t(i) * d, d), y1[i], c1) / 4;
    within += scalar_clust(f2.value().segment(int64_t(i) * d, d), y2[i], c2) / 4;
    cross += scalar_clust(f1.value().segment(int64_t(i) * d, d), y2[i], c2) / 4;
    cross += scalar_clust(f2.value().segment(int64_t(i) * d, d), y1[i], c1) / 4;
  }
  CHECK(got.l_within.item() == doctest::Approx(within).epsilon(1e-10));
  CHECK(got.l_cross.item() == doctest::Approx(cross).epsilon(1e-10));

  // swapping the branches leaves the cross term unchanged
  auto swapped = pixel_loss(f2, f1, y2, y1, c2, c1);
  CHECK(swapped.l_cross.item() == doctest::Approx(got.l_cross.item()).epsilon(1e-12));

  CHECK_THROWS(pixel_loss(f1, unit_feats(5, d, rng), y1, y2, c1, c2));
}

TEST_CASE("balanced variant reweights by inverse label frequency") {
  auto rng = make_rng(13);
  int d = 3;
  auto c = unit_rows(2, d, rng);
  Tensor f = unit_feats(4, d, rng);
  std::vector<int> skewed{0, 0, 0, 1};

  double l0 = 0, l1 = 0;
  for (int i = 0; i < 4; ++i) {
    double li = scalar_clust(f.value().segment(int64_t(i) * d, d), skewed[i], c);
    (skewed[i] == 0 ? l0 : l1) += li;
  }
  // weights 4/(2*3) and 4/(2*1); weighted mean divides by the weight sum
  double w0 = 4.0 / 6.0, w1 = 2.0;
  double want = (w0 * l0 + w1 * l1) / (3 * w0 + w1);
  CHECK(clust_loss(f, skewed, c, true).item() == doctest::Approx(want).epsilon(1e-10));
  // uniform labels: balanced equals unbalanced
  std::vector<int> even{0, 0, 1, 1};
  CHECK(clust_loss(f, even, c, true).item() ==
        doctest::Approx(clust_loss(f, even, c, false).item()).epsilon(1e-12));
}

TEST_CASE("weak loss oracles") {
  // K_g = 1
  Tensor one = Tensor::from_data({1, 1}, Eigen::VectorXd::Constant(1, 3.7));
  CHECK(weak_loss(one, {0}).item() == 0.0);

  // uniform over 50 classes
  Tensor uni = Tensor::from_data({1, 50}, Eigen::VectorXd::Constant(50, 0.2));
  CHECK(weak_loss(uni, {13}).item() == doctest::Approx(std::log(50.0)).epsilon(1e-12));
  CHECK(weak_loss(uni, {13}).item() == doctest::Approx(3.912023).epsilon(1e-6));

  // scores (2,0,0), label 0
  Eigen::VectorXd s(3);
  s << 2, 0, 0;
  Tensor t = Tensor::from_data({1, 3}, s);
  double want = -std::log(std::exp(2.0) / (std::exp(2.0) + 2.0));
  CHECK(weak_loss(t, {0}).item() == doctest::Approx(want).epsilon(1e-12));
  CHECK(weak_loss(t, {0}).item() == doctest::Approx(0.2395).epsilon(1e-3));

  CHECK_THROWS(weak_loss(t, {3}));
  CHECK_THROWS(weak_loss(t, {0, 1}));
}

TEST_CASE("total loss invariants and empty weak term") {
  auto rng = make_rng(17);
  int d = 3;
  auto c1 = unit_rows(2, d, rng), c2 = unit_rows(2, d, rng);
  Tensor f1 = unit_feats(4, d, rng, true), f2 = unit_feats(4, d, rng, true);
  std::vector<int> y1{0, 1, 0, 1}, y2{1, 0, 1, 0};
  auto p = pixel_loss(f1, f2, y1, y2, c1, c2);

  Eigen::VectorXd s(3);
  s << 1.0, -0.5, 0.2;
  Tensor wl = weak_loss(Tensor::from_data({1, 3}, s), {1});
  auto t = total_loss(p, wl, 1.0, 1);
  CHECK(t.report.l_pixel ==
        doctest::Approx(t.report.l_within + t.report.l_cross).epsilon(1e-6));
  CHECK(t.report.l_total ==
        doctest::Approx(t.report.l_weak + t.report.l_pixel).epsilon(1e-6));
  CHECK(t.report.l_within >= 0);
  CHECK(t.report.l_cross >= 0);
  CHECK(t.report.l_weak >= 0);
  CHECK(t.report.n_pixels == 4);
  CHECK(t.report.n_labeled_views == 1);

  // no selected views: weak contribution vanishes
  auto empty = total_loss(p, Tensor(), 1.0, 0);
  CHECK(empty.report.l_weak == 0.0);
  CHECK(empty.report.l_total == doctest::Approx(empty.report.l_pixel).epsilon(1e-12));

  // half weak weight
  auto half = total_loss(p, wl, 0.5, 1);
  CHECK(half.report.l_total ==
        doctest::Approx(0.5 * t.report.l_weak + t.report.l_pixel).epsilon(1e-10));

  // d(total)/d(feature) equals the sum of component gradients (finite diff)
  auto build = [&] {
    auto pp = pixel_loss(f1, f2, y1, y2, c1, c2);
    return total_loss(pp, wl, 1.0, 1).value;
  };
  Tensor loss = build();
  loss.backward();
  Eigen::VectorXd g = f1.grad();
  double step = 1e-5;
  for (int64_t i = 0; i < 6; ++i) {
    double orig = f1.value()(i);
    f1.value()(i) = orig + step;
    double up = build().item();
    f1.value()(i) = orig - step;
    double dn = build().item();
    f1.value()(i) = orig;
    double fd = (up - dn) / (2 * step);
    double denom = std::max({std::abs(fd), std::abs(g(i)), 1e-8});
    CHECK(std::abs(fd - g(i)) / denom < 1e-4);
  }
}
