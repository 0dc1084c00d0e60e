#include "selfseg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace selfseg {

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, int k, int c) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw std::invalid_argument("confusion: prediction/gt size mismatch");
  ConfusionMatrix cm;
  cm.counts.setZero(k, c);
  for (size_t i = 0; i < gt.v.size(); ++i) {
    uint8_t g = gt.v[i];
    if (g == kIgnoreLabel) continue;
    uint8_t p = pred.v[i];
    if (p >= k || g >= c)
      throw std::out_of_range("confusion: label out of range");
    cm.counts(p, g) += 1;
  }
  return cm;
}

std::vector<int> hungarian_match(const ConfusionMatrix& cm) {
  int k = cm.k(), c = cm.c();
  if (k == 0 || c == 0) throw std::invalid_argument("hungarian_match: empty matrix");
  int n = std::max(k, c);
  // Square min-cost matrix; padded cells carry zero count.
  int64_t mx = cm.counts.maxCoeff();
  std::vector<std::vector<int64_t>> a(n + 1, std::vector<int64_t>(n + 1, mx));
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < c; ++j) a[i + 1][j + 1] = mx - cm.counts(i, j);

  const int64_t kInf = std::numeric_limits<int64_t>::max() / 4;
  std::vector<int64_t> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<int64_t> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      int64_t delta = kInf;
      for (int j = 1; j <= n; ++j)
        if (!used[j]) {
          int64_t cur = a[i0][j] - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
      for (int j = 0; j <= n; ++j)
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> mapping(k, -1);
  for (int j = 1; j <= n; ++j) {
    int i = p[j];
    if (i >= 1 && i <= k && j <= c) mapping[i - 1] = j - 1;
  }
  return mapping;
}

int64_t matched_count(const ConfusionMatrix& cm, const std::vector<int>& mapping) {
  int64_t s = 0;
  for (int i = 0; i < cm.k(); ++i)
    if (mapping[i] >= 0) s += cm.counts(i, mapping[i]);
  return s;
}

std::vector<int> brute_force_match(const ConfusionMatrix& cm) {
  int k = cm.k(), c = cm.c();
  if (k == 0 || c == 0) throw std::invalid_argument("brute_force_match: empty matrix");
  int n = std::max(k, c);
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best(k, -1);
  int64_t best_sum = -1;
  do {
    int64_t s = 0;
    for (int i = 0; i < k; ++i)
      if (perm[i] < c) s += cm.counts(i, perm[i]);
    if (s > best_sum) {
      best_sum = s;
      for (int i = 0; i < k; ++i) best[i] = perm[i] < c ? perm[i] : -1;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

MetricsReport metrics(const ConfusionMatrix& cm, const std::vector<int>& mapping,
                      const std::vector<int>& partition_classes,
                      const std::string& partition_name) {
  int k = cm.k(), c = cm.c();
  std::vector<char> in_part(c, partition_classes.empty() ? 1 : 0);
  for (int cls : partition_classes)
    if (cls >= 0 && cls < c) in_part[cls] = 1;

  // per-cluster prediction mass and per-class stats after relabeling
  std::vector<int64_t> tp(c, 0), pred_mass(c, 0), gt_mass(c, 0);
  for (int i = 0; i < k; ++i) {
    int64_t row = cm.counts.row(i).sum();
    int m = mapping.at(i);
    if (m >= 0) {
      pred_mass[m] += row;
      tp[m] += cm.counts(i, m);
    }
  }
  for (int j = 0; j < c; ++j) gt_mass[j] = cm.counts.col(j).sum();

  MetricsReport r;
  r.partition = partition_name;
  r.per_class_iou.assign(c, std::numeric_limits<double>::quiet_NaN());
  int64_t part_tp = 0, part_gt = 0;
  double iou_sum = 0;
  int iou_n = 0;
  for (int j = 0; j < c; ++j) {
    if (!in_part[j]) continue;
    part_tp += tp[j];
    part_gt += gt_mass[j];
    if (gt_mass[j] == 0) continue;  // class absent from gt: excluded from mIoU
    int64_t denom = pred_mass[j] + gt_mass[j] - tp[j];
    double iou = denom > 0 ? double(tp[j]) / double(denom) : 0.0;
    r.per_class_iou[j] = iou;
    iou_sum += iou;
    ++iou_n;
  }
  r.pixels = part_gt;
  r.accuracy = part_gt > 0 ? double(part_tp) / double(part_gt) : 0.0;
  r.miou = iou_n > 0 ? iou_sum / iou_n : 0.0;
  return r;
}

}  // namespace selfseg
