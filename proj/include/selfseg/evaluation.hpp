#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "selfseg/image.hpp"

namespace selfseg {

// counts(k, c) = pixels predicted as cluster k with ground truth class c;
// ignore pixels excluded.
struct ConfusionMatrix {
  Eigen::Matrix<int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;

  int k() const { return int(counts.rows()); }
  int c() const { return int(counts.cols()); }
  int64_t total() const { return counts.sum(); }
  void add(const ConfusionMatrix& other) { counts += other.counts; }
};

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, int k, int c);

// Injective cluster -> class assignment maximizing matched pixel count;
// mapping[k] == -1 for clusters left unmatched.
std::vector<int> hungarian_match(const ConfusionMatrix& cm);
int64_t matched_count(const ConfusionMatrix& cm, const std::vector<int>& mapping);

// Exhaustive-search reference for small matrices (testing oracle).
std::vector<int> brute_force_match(const ConfusionMatrix& cm);

struct MetricsReport {
  std::string partition;  // "things" | "stuff" | "all"
  double accuracy = 0.0;
  std::vector<double> per_class_iou;  // indexed by gt class, NaN if absent
  double miou = 0.0;
  int64_t pixels = 0;
};

// partition_classes empty = all classes.
MetricsReport metrics(const ConfusionMatrix& cm, const std::vector<int>& mapping,
                      const std::vector<int>& partition_classes,
                      const std::string& partition_name);

}  // namespace selfseg
