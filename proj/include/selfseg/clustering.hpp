#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace selfseg {

// K unit-norm centers; distances are squared Euclidean on L2-normalized
// vectors (argmin-equivalent to cosine distance).
struct ClusterModel {
  int k = 0, d = 0;
  Eigen::MatrixXd centers;  // k x d, unit rows
  std::string distance_kind = "sq_euclidean_unit";
};

struct AssignmentTable {
  std::vector<int> labels;     // argmin, ties -> lowest index
  Eigen::MatrixXd distances;   // n x k
};

// Row-chunk iteration over a feature set; lets k-means run off either an
// in-memory matrix or disk shards with identical results.
class FeatureSource {
 public:
  virtual ~FeatureSource() = default;
  virtual int64_t count() const = 0;
  virtual int dim() const = 0;
  virtual void reset() = 0;
  // Fills up to max_rows rows into `out` (resized); returns rows produced,
  // 0 at end of stream.
  virtual int64_t next_chunk(Eigen::MatrixXd& out, int64_t max_rows) = 0;
  // Random access to a single vector (used by k-means++ seeding).
  virtual Eigen::VectorXd row(int64_t i) = 0;
};

class MatrixSource : public FeatureSource {
 public:
  explicit MatrixSource(Eigen::MatrixXd x) : x_(std::move(x)) {}
  int64_t count() const override { return x_.rows(); }
  int dim() const override { return int(x_.cols()); }
  void reset() override { pos_ = 0; }
  int64_t next_chunk(Eigen::MatrixXd& out, int64_t max_rows) override;
  Eigen::VectorXd row(int64_t i) override { return x_.row(i); }

 private:
  Eigen::MatrixXd x_;
  int64_t pos_ = 0;
};

// k-means++ init, Lloyd iterations with per-iteration unit renormalization
// of centers, empty clusters reseeded to the farthest points. Stops when the
// max center shift drops below tol or after max_iters.
ClusterModel kmeans_fit(FeatureSource& src, int k, int max_iters, uint64_t seed,
                        double tol = 1e-4,
                        std::vector<double>* objective_trace = nullptr,
                        int64_t chunk_rows = 4096);
ClusterModel kmeans_fit(const Eigen::MatrixXd& x, int k, int max_iters,
                        uint64_t seed, double tol = 1e-4,
                        std::vector<double>* objective_trace = nullptr);

AssignmentTable assign(const ClusterModel& model, const Eigen::MatrixXd& features);

void save_cluster_model(const ClusterModel& m, const std::string& path);
ClusterModel load_cluster_model(const std::string& path);

// Disk cache of per-image feature rows: float32 shards plus a text index
// mapping image id -> (offset, count) in vectors.
class FeatureCacheWriter {
 public:
  FeatureCacheWriter(const std::string& dir, const std::string& name, int dim,
                     int64_t shard_values = int64_t(1) << 22);
  void append(const std::string& id, const Eigen::MatrixXd& rows);
  void finish();
  ~FeatureCacheWriter();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

class FeatureCacheReader {
 public:
  FeatureCacheReader(const std::string& dir, const std::string& name);
  ~FeatureCacheReader();
  int dim() const;
  const std::vector<std::string>& ids() const;
  Eigen::MatrixXd read(const std::string& id) const;
  // Streams every cached vector in storage order.
  std::unique_ptr<FeatureSource> source() const;

  struct Impl;  // shared with the streaming source

 private:
  std::shared_ptr<Impl> impl_;
};

}  // namespace selfseg
