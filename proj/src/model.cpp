#include "selfseg/model.hpp"

#include <cmath>
#include <fstream>
#include <unordered_map>

#include "selfseg/common.hpp"

namespace selfseg {

using namespace nn;

namespace {

Tensor he_conv(int out_ch, int in_ch, int k, std::mt19937_64& rng) {
  double std = std::sqrt(2.0 / (double(in_ch) * k * k));
  Eigen::VectorXd v(int64_t(out_ch) * in_ch * k * k);
  for (int64_t i = 0; i < v.size(); ++i) v(i) = std * normal(rng);
  return Tensor::from_data({out_ch, in_ch, k, k}, v, true);
}

Tensor he_linear(int out_d, int in_d, std::mt19937_64& rng) {
  double std = std::sqrt(2.0 / double(in_d));
  Eigen::VectorXd v(int64_t(out_d) * in_d);
  for (int64_t i = 0; i < v.size(); ++i) v(i) = std * normal(rng);
  return Tensor::from_data({out_d, in_d}, v, true);
}

}  // namespace

Tensor to_tensor(const Image& img) {
  Eigen::VectorXd v(int64_t(3) * img.h * img.w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        v((int64_t(c) * img.h + y) * img.w + x) = img.at(y, x, c);
  return Tensor::from_data({3, img.h, img.w}, v);
}

FeatureExtractor::FeatureExtractor(const ModelConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg) {
  if (cfg_.widths.size() != 4)
    throw std::invalid_argument("FeatureExtractor: expects 4 stage widths");
  int in = 3;
  for (int s = 0; s < 4; ++s) {
    stages_.push_back({he_conv(cfg_.widths[s], in, 3, rng),
                       Tensor::zeros({cfg_.widths[s]}, true)});
    in = cfg_.widths[s];
  }
  lat3_ = {he_conv(cfg_.dim, cfg_.widths[2], 1, rng), Tensor::zeros({cfg_.dim}, true)};
  lat4_ = {he_conv(cfg_.dim, cfg_.widths[3], 1, rng), Tensor::zeros({cfg_.dim}, true)};
  smooth_ = {he_conv(cfg_.dim, cfg_.dim, 3, rng), Tensor::zeros({cfg_.dim}, true)};
}

Tensor FeatureExtractor::forward(const Tensor& image) const {
  if (image.shape().size() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("extract_features: input must be [3,H,W]");
  if (image.dim(1) < 32 || image.dim(2) < 32)
    throw std::invalid_argument("extract_features: input smaller than 32x32");
  Tensor x = image;
  Tensor s3, s4;
  for (int s = 0; s < 4; ++s) {
    x = relu(conv2d(x, stages_[s].w, stages_[s].b, 2, 1));
    if (s == 2) s3 = x;
    if (s == 3) s4 = x;
  }
  Tensor p4 = conv2d(s4, lat4_.w, lat4_.b, 1, 0);
  Tensor p3 = conv2d(s3, lat3_.w, lat3_.b, 1, 0);
  Tensor fused = add(p3, interpolate_bilinear(p4, p3.dim(1), p3.dim(2)));
  return conv2d(fused, smooth_.w, smooth_.b, 1, 1);
}

std::vector<Tensor> FeatureExtractor::parameters() {
  std::vector<Tensor> p;
  for (auto& s : stages_) {
    p.push_back(s.w);
    p.push_back(s.b);
  }
  for (auto* c : {&lat3_, &lat4_, &smooth_}) {
    p.push_back(c->w);
    p.push_back(c->b);
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>> FeatureExtractor::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> p;
  for (size_t s = 0; s < stages_.size(); ++s) {
    p.push_back({"net.stage" + std::to_string(s) + ".w", stages_[s].w});
    p.push_back({"net.stage" + std::to_string(s) + ".b", stages_[s].b});
  }
  p.push_back({"net.lat3.w", lat3_.w});
  p.push_back({"net.lat3.b", lat3_.b});
  p.push_back({"net.lat4.w", lat4_.w});
  p.push_back({"net.lat4.b", lat4_.b});
  p.push_back({"net.smooth.w", smooth_.w});
  p.push_back({"net.smooth.b", smooth_.b});
  return p;
}

Projector::Projector(int dim, std::mt19937_64& rng) {
  w1_ = he_linear(dim, dim, rng);
  b1_ = Tensor::zeros({dim}, true);
  w2_ = he_linear(dim, dim, rng);
  b2_ = Tensor::zeros({dim}, true);
}

Tensor Projector::forward(const Tensor& pooled) const {
  return linear(relu(linear(pooled, w1_, b1_)), w2_, b2_);
}

std::vector<Tensor> Projector::parameters() { return {w1_, b1_, w2_, b2_}; }

std::vector<std::pair<std::string, Tensor>> Projector::named_parameters() {
  return {{"projector.w1", w1_},
          {"projector.b1", b1_},
          {"projector.w2", w2_},
          {"projector.b2", b2_}};
}

CamHead::CamHead(CamMode mode, int dim, int n_global_classes, std::mt19937_64& rng)
    : mode_(mode), n_classes_(n_global_classes) {
  g_w = he_conv(n_global_classes, dim, 1, rng);
  g_b = Tensor::zeros({n_global_classes}, true);
  g2_w = he_conv(n_global_classes, dim, 1, rng);
  g2_b = Tensor::zeros({n_global_classes}, true);
  g1_w = he_linear(n_global_classes, n_global_classes, rng);
  g1_b = Tensor::zeros({n_global_classes}, true);
}

Tensor CamHead::logits(const Tensor& fmap) const {
  if (fmap.shape().size() != 3)
    throw std::invalid_argument("cam_logits: feature map must be [D,h,w]");
  if (mode_ == CamMode::classic) {
    Tensor q = gap(conv2d(fmap, g_w, g_b, 1, 0));
    return reshape(q, {1, n_classes_});
  }
  Tensor pooled = gap(conv2d(fmap, g2_w, g2_b, 1, 0));
  return linear(relu(reshape(pooled, {1, n_classes_})), g1_w, g1_b);
}

std::vector<Tensor> CamHead::parameters() {
  if (mode_ == CamMode::classic) return {g_w, g_b};
  return {g2_w, g2_b, g1_w, g1_b};
}

std::vector<std::pair<std::string, Tensor>> CamHead::named_parameters(
    const std::string& prefix) {
  return {{prefix + ".g_w", g_w},   {prefix + ".g_b", g_b},
          {prefix + ".g2_w", g2_w}, {prefix + ".g2_b", g2_b},
          {prefix + ".g1_w", g1_w}, {prefix + ".g1_b", g1_b}};
}

SegModel SegModel::create(const ModelConfig& cfg, int n_global_classes,
                          int nominal_crop, CAEConfig cae_cfg, uint64_t seed) {
  auto rng = make_rng(mix_seed(seed, 0x6d6f64656c));
  SegModel m;
  m.config = cfg;
  m.n_global_classes = n_global_classes;
  m.net = std::make_shared<FeatureExtractor>(cfg, rng);
  m.projector = std::make_shared<Projector>(cfg.dim, rng);
  m.cam_classic = std::make_shared<CamHead>(CamMode::classic, cfg.dim,
                                            n_global_classes, rng);
  m.cam_modified = std::make_shared<CamHead>(CamMode::modified, cfg.dim,
                                             n_global_classes, rng);
  int grid = std::max(1, (nominal_crop + 15) / 16);
  m.cae = std::make_shared<CAEModule>(cfg.dim, grid, grid, rng, cae_cfg);
  return m;
}

std::vector<Tensor> SegModel::parameters() const {
  std::vector<Tensor> p = net->parameters();
  auto append = [&p](std::vector<Tensor> q) {
    p.insert(p.end(), q.begin(), q.end());
  };
  append(projector->parameters());
  append(cam_classic->parameters());
  append(cam_modified->parameters());
  append(cae->parameters());
  return p;
}

std::vector<std::pair<std::string, Tensor>> SegModel::named_parameters() const {
  auto p = net->named_parameters();
  auto append = [&p](std::vector<std::pair<std::string, Tensor>> q) {
    p.insert(p.end(), q.begin(), q.end());
  };
  append(projector->named_parameters());
  append(cam_classic->named_parameters("cam_classic"));
  append(cam_modified->named_parameters("cam_modified"));
  append(cae->named_parameters());
  return p;
}

Tensor embed_forward(const FeatureExtractor& net, const Projector& proj,
                     const Tensor& image) {
  Tensor pooled = gap(net.forward(image));
  Tensor z = proj.forward(reshape(pooled, {1, int(pooled.size())}));
  return l2_normalize_rows(z);
}

Eigen::VectorXd global_embed(const FeatureExtractor& net, const Projector& proj,
                             const Image& image, int resize, int crop) {
  int oh, ow;
  if (image.h <= image.w) {
    oh = resize;
    ow = std::max(resize, int(std::lround(double(image.w) * resize / image.h)));
  } else {
    ow = resize;
    oh = std::max(resize, int(std::lround(double(image.h) * resize / image.w)));
  }
  Image pre = center_crop(resize_bilinear(image, oh, ow), crop);
  try {
    Tensor z = embed_forward(net, proj, to_tensor(pre));
    return z.value();
  } catch (const std::domain_error&) {
    throw NumericalError("global_embed: degenerate (zero) embedding");
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write("SSEGCKPT", 8);
  uint32_t version = ckpt.version;
  f.write(reinterpret_cast<char*>(&version), 4);
  uint64_t clen = ckpt.config_json.size();
  f.write(reinterpret_cast<char*>(&clen), 8);
  f.write(ckpt.config_json.data(), int64_t(clen));
  uint32_t count = uint32_t(ckpt.tensors.size());
  f.write(reinterpret_cast<char*>(&count), 4);
  for (const auto& [name, t] : ckpt.tensors) {
    uint32_t nlen = uint32_t(name.size());
    f.write(reinterpret_cast<char*>(&nlen), 4);
    f.write(name.data(), nlen);
    uint32_t nd = uint32_t(t.shape().size());
    f.write(reinterpret_cast<char*>(&nd), 4);
    for (int d : t.shape()) {
      int32_t v = d;
      f.write(reinterpret_cast<char*>(&v), 4);
    }
    f.write(reinterpret_cast<const char*>(t.value().data()),
            int64_t(t.size()) * 8);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifactError("checkpoint missing: " + path);
  char magic[8];
  f.read(magic, 8);
  if (std::string(magic, 8) != "SSEGCKPT")
    throw std::runtime_error("bad checkpoint file: " + path);
  Checkpoint c;
  f.read(reinterpret_cast<char*>(&c.version), 4);
  uint64_t clen;
  f.read(reinterpret_cast<char*>(&clen), 8);
  c.config_json.resize(clen);
  f.read(c.config_json.data(), int64_t(clen));
  uint32_t count;
  f.read(reinterpret_cast<char*>(&count), 4);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t nlen;
    f.read(reinterpret_cast<char*>(&nlen), 4);
    std::string name(nlen, '\0');
    f.read(name.data(), nlen);
    uint32_t nd;
    f.read(reinterpret_cast<char*>(&nd), 4);
    std::vector<int> shape(nd);
    for (uint32_t d = 0; d < nd; ++d) {
      int32_t v;
      f.read(reinterpret_cast<char*>(&v), 4);
      shape[d] = v;
    }
    Eigen::VectorXd data(shape_numel(shape));
    f.read(reinterpret_cast<char*>(data.data()), data.size() * 8);
    if (!f) throw std::runtime_error("truncated checkpoint: " + path);
    c.tensors.push_back({name, Tensor::from_data(shape, data)});
  }
  return c;
}

void load_model_weights(SegModel& model, const Checkpoint& ckpt) {
  std::unordered_map<std::string, Tensor> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name.emplace(name, t);
  for (auto& [name, param] : model.named_parameters()) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint lacks parameter: " + name);
    if (it->second.size() != param.size())
      throw std::runtime_error("checkpoint shape mismatch for: " + name);
    param.value() = it->second.value();
  }
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, double lr,
                             double weight_decay, double clip_norm, double beta1,
                             double beta2, double eps)
    : params_(std::move(params)),
      lr_(lr),
      wd_(weight_decay),
      clip_(clip_norm),
      b1_(beta1),
      b2_(beta2),
      eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(Eigen::VectorXd::Zero(p.size()));
    v_.push_back(Eigen::VectorXd::Zero(p.size()));
  }
}

void AdamOptimizer::step() {
  // parameters outside the current graph (e.g. an unused head) have no
  // gradient buffer; treat them as zero-gradient
  for (auto& p : params_)
    if (p.grad().size() != p.size()) p.grad() = Eigen::VectorXd::Zero(p.size());
  double sq = 0;
  for (const auto& p : params_) sq += p.grad().squaredNorm();
  if (!std::isfinite(sq)) throw NumericalError("non-finite gradient norm");
  double scale = 1.0;
  if (clip_ > 0) {
    double norm = std::sqrt(sq);
    if (norm > clip_) scale = clip_ / norm;
  }
  ++t_;
  double bc1 = 1.0 - std::pow(b1_, double(t_));
  double bc2 = 1.0 - std::pow(b2_, double(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Eigen::VectorXd g = params_[i].grad() * scale;
    if (wd_ > 0) g += wd_ * params_[i].value();
    m_[i] = b1_ * m_[i] + (1 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1 - b2_) * g.cwiseProduct(g);
    Eigen::VectorXd mhat = m_[i] / bc1;
    Eigen::VectorXd vhat = v_[i] / bc2;
    params_[i].value() -=
        lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
  }
}

std::vector<std::pair<std::string, Tensor>> AdamOptimizer::state_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  Eigen::VectorXd t(1);
  t(0) = double(t_);
  out.push_back({"adam.t", Tensor::from_data({1}, t)});
  for (size_t i = 0; i < params_.size(); ++i) {
    std::string idx = std::to_string(i);
    out.push_back({"adam.m." + idx,
                   Tensor::from_data({int(m_[i].size())}, m_[i])});
    out.push_back({"adam.v." + idx,
                   Tensor::from_data({int(v_[i].size())}, v_[i])});
  }
  return out;
}

void AdamOptimizer::load_state(const Checkpoint& ckpt) {
  std::unordered_map<std::string, Tensor> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name.emplace(name, t);
  auto it = by_name.find("adam.t");
  if (it == by_name.end()) return;  // fresh optimizer
  t_ = int64_t(it->second.value()(0));
  for (size_t i = 0; i < params_.size(); ++i) {
    std::string idx = std::to_string(i);
    auto mi = by_name.find("adam.m." + idx);
    auto vi = by_name.find("adam.v." + idx);
    if (mi == by_name.end() || vi == by_name.end())
      throw std::runtime_error("checkpoint optimizer state incomplete");
    m_[i] = mi->second.value();
    v_[i] = vi->second.value();
  }
}

}  // namespace selfseg
