#include "selfseg/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "selfseg/common.hpp"

namespace fs = std::filesystem;

namespace selfseg {

int64_t MatrixSource::next_chunk(Eigen::MatrixXd& out, int64_t max_rows) {
  int64_t n = std::min(max_rows, x_.rows() - pos_);
  if (n <= 0) return 0;
  out = x_.middleRows(pos_, n);
  pos_ += n;
  return n;
}

namespace {

// Squared distances of chunk rows (n x d) to centers (k x d).
Eigen::MatrixXd sq_dists(const Eigen::MatrixXd& x, const Eigen::MatrixXd& c) {
  Eigen::VectorXd xn = x.rowwise().squaredNorm();
  Eigen::VectorXd cn = c.rowwise().squaredNorm();
  Eigen::MatrixXd d = (-2.0 * x * c.transpose());
  d.colwise() += xn;
  d.rowwise() += cn.transpose();
  return d.cwiseMax(0.0);
}

int argmin_row(const Eigen::MatrixXd& d, int64_t r) {
  int best = 0;
  double bv = d(r, 0);
  for (int k = 1; k < d.cols(); ++k)
    if (d(r, k) < bv) {
      bv = d(r, k);
      best = k;
    }
  return best;
}

}  // namespace

ClusterModel kmeans_fit(FeatureSource& src, int k, int max_iters, uint64_t seed,
                        double tol, std::vector<double>* objective_trace,
                        int64_t chunk_rows) {
  const int64_t n = src.count();
  const int d = src.dim();
  if (k < 1) throw std::invalid_argument("kmeans_fit: k < 1");
  if (n < k) throw std::invalid_argument("kmeans_fit: fewer inputs than clusters");

  auto rng = make_rng(mix_seed(seed, 0x6b6d6e73));
  Eigen::MatrixXd centers(k, d);

  // k-means++ seeding: min-distance table lives in memory, vectors stream.
  std::vector<double> mind(size_t(n), 0.0);
  int64_t first = int64_t(uniform(rng) * double(n));
  first = std::min(first, n - 1);
  centers.row(0) = src.row(first);
  for (int c = 1; c <= k; ++c) {
    // refresh mind against center c-1
    src.reset();
    Eigen::MatrixXd chunk;
    int64_t pos = 0;
    while (int64_t got = src.next_chunk(chunk, chunk_rows)) {
      Eigen::VectorXd dd =
          (chunk.rowwise() - centers.row(c - 1)).rowwise().squaredNorm();
      for (int64_t i = 0; i < got; ++i)
        mind[size_t(pos + i)] =
            (c == 1) ? dd(i) : std::min(mind[size_t(pos + i)], dd(i));
      pos += got;
    }
    if (c == k) break;
    double total = 0;
    for (double v : mind) total += v;
    if (total <= 0.0)
      throw std::invalid_argument("kmeans_fit: fewer than k distinct inputs");
    double target = uniform(rng) * total;
    int64_t pick = n - 1;
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) {
      acc += mind[size_t(i)];
      if (acc >= target && mind[size_t(i)] > 0) {
        pick = i;
        break;
      }
    }
    centers.row(c) = src.row(pick);
  }
  for (int c = 0; c < k; ++c) {
    double nr = centers.row(c).norm();
    if (nr > 0) centers.row(c) /= nr;
  }

  for (int iter = 0; iter < max_iters; ++iter) {
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    double objective = 0;
    // farthest points, kept for empty-cluster reseeding
    std::vector<std::pair<double, int64_t>> far;  // (min distance, index)

    src.reset();
    Eigen::MatrixXd chunk;
    int64_t pos = 0;
    while (int64_t got = src.next_chunk(chunk, chunk_rows)) {
      Eigen::MatrixXd dd = sq_dists(chunk, centers);
      for (int64_t i = 0; i < got; ++i) {
        int a = argmin_row(dd, i);
        sums.row(a) += chunk.row(i);
        counts(a) += 1;
        objective += dd(i, a);
        far.push_back({dd(i, a), pos + i});
        std::push_heap(far.begin(), far.end(), std::greater<>());
        if (int(far.size()) > k) {
          std::pop_heap(far.begin(), far.end(), std::greater<>());
          far.pop_back();
        }
      }
      pos += got;
    }
    if (objective_trace) objective_trace->push_back(objective);

    std::sort(far.rbegin(), far.rend());
    size_t far_next = 0;
    Eigen::MatrixXd next(k, d);
    for (int c = 0; c < k; ++c) {
      if (counts(c) > 0) {
        next.row(c) = sums.row(c) / counts(c);
      } else if (far_next < far.size()) {
        next.row(c) = src.row(far[far_next++].second);
      } else {
        next.row(c) = centers.row(c);
      }
      double nr = next.row(c).norm();
      if (nr < 1e-12 && far_next < far.size())
        next.row(c) = src.row(far[far_next++].second), nr = next.row(c).norm();
      if (nr > 0) next.row(c) /= nr;
    }
    double shift = (next - centers).rowwise().norm().maxCoeff();
    centers = next;
    if (shift < tol) break;
  }

  ClusterModel m;
  m.k = k;
  m.d = d;
  m.centers = centers;
  return m;
}

ClusterModel kmeans_fit(const Eigen::MatrixXd& x, int k, int max_iters,
                        uint64_t seed, double tol,
                        std::vector<double>* objective_trace) {
  MatrixSource src(x);
  return kmeans_fit(src, k, max_iters, seed, tol, objective_trace);
}

AssignmentTable assign(const ClusterModel& model, const Eigen::MatrixXd& features) {
  if (int(features.cols()) != model.d)
    throw std::invalid_argument("assign: feature dimension mismatch");
  AssignmentTable t;
  t.distances = sq_dists(features, model.centers);
  t.labels.resize(features.rows());
  for (int64_t i = 0; i < features.rows(); ++i)
    t.labels[size_t(i)] = argmin_row(t.distances, i);
  return t;
}

void save_cluster_model(const ClusterModel& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write cluster model: " + path);
  f.write("SSEGKMNS", 8);
  uint32_t version = 1, k = uint32_t(m.k), d = uint32_t(m.d);
  uint32_t slen = uint32_t(m.distance_kind.size());
  f.write(reinterpret_cast<char*>(&version), 4);
  f.write(reinterpret_cast<char*>(&k), 4);
  f.write(reinterpret_cast<char*>(&d), 4);
  f.write(reinterpret_cast<char*>(&slen), 4);
  f.write(m.distance_kind.data(), slen);
  for (int i = 0; i < m.k; ++i)
    for (int j = 0; j < m.d; ++j) {
      double v = m.centers(i, j);
      f.write(reinterpret_cast<char*>(&v), 8);
    }
}

ClusterModel load_cluster_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifactError("cluster model missing: " + path);
  char magic[8];
  f.read(magic, 8);
  if (std::string(magic, 8) != "SSEGKMNS")
    throw std::runtime_error("bad cluster model file: " + path);
  uint32_t version, k, d, slen;
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&k), 4);
  f.read(reinterpret_cast<char*>(&d), 4);
  f.read(reinterpret_cast<char*>(&slen), 4);
  ClusterModel m;
  m.k = int(k);
  m.d = int(d);
  m.distance_kind.resize(slen);
  f.read(m.distance_kind.data(), slen);
  m.centers.resize(m.k, m.d);
  for (int i = 0; i < m.k; ++i)
    for (int j = 0; j < m.d; ++j) {
      double v;
      f.read(reinterpret_cast<char*>(&v), 8);
      m.centers(i, j) = v;
    }
  if (!f) throw std::runtime_error("truncated cluster model file: " + path);
  return m;
}

// ---- feature cache ----

struct FeatureCacheWriter::Impl {
  std::string dir, name;
  int dim;
  int64_t shard_values;
  int shard_idx = 0;
  int64_t in_shard = 0;   // values written to current shard
  int64_t offset = 0;     // vectors written overall
  std::ofstream shard;
  std::ostringstream index;
  bool finished = false;

  std::string shard_path(int i) const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), ".%03d.bin", i);
    return (fs::path(dir) / (name + buf)).string();
  }
  void open_shard() {
    shard.open(shard_path(shard_idx), std::ios::binary);
    if (!shard) throw std::runtime_error("cannot write feature shard");
    in_shard = 0;
  }
};

FeatureCacheWriter::FeatureCacheWriter(const std::string& dir, const std::string& name,
                                       int dim, int64_t shard_values)
    : impl_(std::make_unique<Impl>()) {
  impl_->dir = dir;
  impl_->name = name;
  impl_->dim = dim;
  impl_->shard_values = std::max<int64_t>(shard_values, dim);
  fs::create_directories(dir);
  impl_->open_shard();
}

void FeatureCacheWriter::append(const std::string& id, const Eigen::MatrixXd& rows) {
  if (int(rows.cols()) != impl_->dim)
    throw std::invalid_argument("feature cache: dimension mismatch");
  impl_->index << id << " " << impl_->offset << " " << rows.rows() << "\n";
  for (int64_t r = 0; r < rows.rows(); ++r) {
    if (impl_->in_shard + impl_->dim > impl_->shard_values) {
      impl_->shard.close();
      ++impl_->shard_idx;
      impl_->open_shard();
    }
    for (int c = 0; c < impl_->dim; ++c) {
      float v = float(rows(r, c));
      impl_->shard.write(reinterpret_cast<char*>(&v), 4);
    }
    impl_->in_shard += impl_->dim;
  }
  impl_->offset += rows.rows();
}

void FeatureCacheWriter::finish() {
  if (impl_->finished) return;
  impl_->finished = true;
  impl_->shard.close();
  std::ofstream idx(fs::path(impl_->dir) / (impl_->name + ".idx"));
  idx << "selfseg-feature-cache v1 dim=" << impl_->dim
      << " shard_values=" << impl_->shard_values << "\n";
  idx << impl_->index.str();
}

FeatureCacheWriter::~FeatureCacheWriter() {
  try {
    finish();
  } catch (...) {
  }
}

struct FeatureCacheReader::Impl {
  std::string dir, name;
  int dim = 0;
  int64_t shard_values = 0;
  std::vector<std::string> id_list;
  struct Entry {
    int64_t offset, count;
  };
  std::vector<Entry> entries;
  int64_t total = 0;

  int64_t vectors_per_shard() const { return shard_values / dim; }
  // reads `count` vectors starting at global vector offset
  Eigen::MatrixXd read_range(int64_t offset, int64_t count) const {
    Eigen::MatrixXd out(count, dim);
    int64_t vps = vectors_per_shard();
    int64_t r = 0;
    while (r < count) {
      int64_t gv = offset + r;
      int shard = int(gv / vps);
      int64_t in = gv % vps;
      char buf[16];
      std::snprintf(buf, sizeof(buf), ".%03d.bin", shard);
      std::ifstream f(fs::path(dir) / (name + buf), std::ios::binary);
      if (!f) throw MissingArtifactError("feature shard missing");
      int64_t take = std::min(count - r, vps - in);
      f.seekg(in * dim * 4);
      std::vector<float> tmp(size_t(take * dim));
      f.read(reinterpret_cast<char*>(tmp.data()), take * dim * 4);
      if (!f) throw std::runtime_error("feature cache corrupt: short shard read");
      for (int64_t i = 0; i < take; ++i)
        for (int c = 0; c < dim; ++c)
          out(r + i, c) = double(tmp[size_t(i * dim + c)]);
      r += take;
    }
    return out;
  }
};

FeatureCacheReader::FeatureCacheReader(const std::string& dir, const std::string& name)
    : impl_(std::make_shared<Impl>()) {
  impl_->dir = dir;
  impl_->name = name;
  std::ifstream idx(fs::path(dir) / (name + ".idx"));
  if (!idx) throw MissingArtifactError("feature cache index missing: " + dir + "/" + name);
  std::string header;
  std::getline(idx, header);
  if (header.rfind("selfseg-feature-cache v1", 0) != 0)
    throw std::runtime_error("bad feature cache index header");
  if (std::sscanf(header.c_str(), "selfseg-feature-cache v1 dim=%d shard_values=%ld",
                  &impl_->dim, &impl_->shard_values) != 2)
    throw std::runtime_error("bad feature cache index header");
  std::string id;
  int64_t off, cnt;
  while (idx >> id >> off >> cnt) {
    impl_->id_list.push_back(id);
    impl_->entries.push_back({off, cnt});
    impl_->total = std::max(impl_->total, off + cnt);
  }
}

FeatureCacheReader::~FeatureCacheReader() = default;
int FeatureCacheReader::dim() const { return impl_->dim; }
const std::vector<std::string>& FeatureCacheReader::ids() const {
  return impl_->id_list;
}

Eigen::MatrixXd FeatureCacheReader::read(const std::string& id) const {
  for (size_t i = 0; i < impl_->id_list.size(); ++i)
    if (impl_->id_list[i] == id)
      return impl_->read_range(impl_->entries[i].offset, impl_->entries[i].count);
  throw MissingArtifactError("feature cache has no entry for id: " + id);
}

namespace {

class ShardSource : public FeatureSource {
 public:
  explicit ShardSource(std::shared_ptr<FeatureCacheReader::Impl> impl)
      : impl_(std::move(impl)) {}
  int64_t count() const override { return impl_->total; }
  int dim() const override { return impl_->dim; }
  void reset() override { pos_ = 0; }
  int64_t next_chunk(Eigen::MatrixXd& out, int64_t max_rows) override {
    int64_t n = std::min(max_rows, impl_->total - pos_);
    if (n <= 0) return 0;
    out = impl_->read_range(pos_, n);
    pos_ += n;
    return n;
  }
  Eigen::VectorXd row(int64_t i) override {
    return impl_->read_range(i, 1).row(0);
  }

 private:
  std::shared_ptr<FeatureCacheReader::Impl> impl_;
  int64_t pos_ = 0;
};

}  // namespace

std::unique_ptr<FeatureSource> FeatureCacheReader::source() const {
  return std::make_unique<ShardSource>(impl_);
}

}  // namespace selfseg
