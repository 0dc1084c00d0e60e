#include "selfseg/pgg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "selfseg/common.hpp"

namespace selfseg {

const char* slot_name(ViewSlot s) {
  switch (s) {
    case ViewSlot::full: return "full";
    case ViewSlot::tl: return "tl";
    case ViewSlot::tr: return "tr";
    case ViewSlot::bl: return "bl";
    case ViewSlot::br: return "br";
    case ViewSlot::center: return "center";
  }
  return "?";
}

std::vector<PyramidView> extract_pyramid_views(const ImageSample& sample,
                                               int view_resize) {
  int h = sample.image.h, w = sample.image.w;
  if (h < 2 || w < 2)
    throw std::invalid_argument("extract_pyramid_views: image too small");
  int ch = (h + 1) / 2, cw = (w + 1) / 2;

  struct Box {
    ViewSlot slot;
    int top, left, bh, bw;
  };
  std::vector<Box> boxes{
      {ViewSlot::full, 0, 0, h, w},
      {ViewSlot::tl, 0, 0, ch, cw},
      {ViewSlot::tr, 0, w - cw, ch, cw},
      {ViewSlot::bl, h - ch, 0, ch, cw},
      {ViewSlot::br, h - ch, w - cw, ch, cw},
      {ViewSlot::center, (h - ch) / 2, (w - cw) / 2, ch, cw},
  };

  std::vector<PyramidView> views;
  for (const auto& b : boxes) {
    PyramidView v;
    v.parent_id = sample.id;
    v.slot = b.slot;
    v.top = b.top;
    v.left = b.left;
    v.h = b.bh;
    v.w = b.bw;
    Image cropped = crop(sample.image, b.top, b.left, b.bh, b.bw);
    v.resized_image = resize_bilinear(cropped, view_resize, view_resize);
    views.push_back(std::move(v));
  }
  return views;
}

ClusterModel build_global_clusters(const std::vector<ImageSample>& dataset,
                                   const FeatureExtractor& net,
                                   const Projector& proj, int k_global,
                                   uint64_t seed, int embed_resize,
                                   int embed_crop, int max_iters) {
  if (int(dataset.size()) < k_global)
    throw UsageError("build_global_clusters: dataset smaller than k_global");
  Eigen::MatrixXd x(dataset.size(), 0);
  for (size_t i = 0; i < dataset.size(); ++i) {
    Eigen::VectorXd z =
        global_embed(net, proj, dataset[i].image, embed_resize, embed_crop);
    if (x.cols() == 0) x.resize(dataset.size(), z.size());
    x.row(i) = z;
  }
  return kmeans_fit(x, k_global, max_iters, seed);
}

PseudoLabelSet assign_pseudo_labels(const std::vector<ImageSample>& dataset,
                                    const ClusterModel& centers,
                                    const FeatureExtractor& net,
                                    const Projector& proj, int view_resize,
                                    int embed_resize, int embed_crop) {
  PseudoLabelSet set;
  set.k_global = centers.k;
  for (const auto& sample : dataset) {
    for (const auto& view : extract_pyramid_views(sample, view_resize)) {
      Eigen::VectorXd z = global_embed(net, proj, view.resized_image,
                                       embed_resize, embed_crop);
      Eigen::VectorXd cos = centers.centers * z;  // unit rows x unit vector
      int best = 0;
      for (int k = 1; k < centers.k; ++k)
        if (cos(k) > cos(best)) best = k;
      PseudoLabel e;
      e.parent_id = view.parent_id;
      e.slot = view.slot;
      e.top = view.top;
      e.left = view.left;
      e.h = view.h;
      e.w = view.w;
      e.label = best;
      e.confidence = cos(best);
      set.entries.push_back(std::move(e));
    }
  }
  return set;
}

void active_select(PseudoLabelSet& set, double keep_frac) {
  if (set.entries.empty())
    throw std::invalid_argument("active_select: empty label set");
  if (!(keep_frac > 0.0 && keep_frac <= 1.0))
    throw UsageError("active_select: keep_frac must be in (0,1]");

  std::vector<size_t> crops;
  for (size_t i = 0; i < set.entries.size(); ++i) {
    if (set.entries[i].slot == ViewSlot::full)
      set.entries[i].selected = true;
    else {
      set.entries[i].selected = false;
      crops.push_back(i);
    }
  }
  if (crops.empty()) return;
  std::sort(crops.begin(), crops.end(), [&](size_t a, size_t b) {
    const auto& x = set.entries[a];
    const auto& y = set.entries[b];
    if (x.confidence != y.confidence) return x.confidence > y.confidence;
    if (x.parent_id != y.parent_id) return x.parent_id < y.parent_id;
    return int(x.slot) < int(y.slot);
  });
  size_t keep = size_t(std::ceil(keep_frac * double(crops.size())));
  for (size_t j = 0; j < keep && j < crops.size(); ++j)
    set.entries[crops[j]].selected = true;
}

void save_pseudo_labels(const PseudoLabelSet& set, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write pseudo labels: " + path);
  f.write("SSEGPGG1", 8);
  int32_t kg = set.k_global;
  f.write(reinterpret_cast<char*>(&kg), 4);
  uint64_t n = set.entries.size();
  f.write(reinterpret_cast<char*>(&n), 8);
  for (const auto& e : set.entries) {
    uint32_t len = uint32_t(e.parent_id.size());
    f.write(reinterpret_cast<char*>(&len), 4);
    f.write(e.parent_id.data(), len);
    uint8_t slot = uint8_t(e.slot);
    f.write(reinterpret_cast<char*>(&slot), 1);
    int32_t box[4] = {e.top, e.left, e.h, e.w};
    f.write(reinterpret_cast<char*>(box), 16);
    int32_t label = e.label;
    f.write(reinterpret_cast<char*>(&label), 4);
    double conf = e.confidence;
    f.write(reinterpret_cast<char*>(&conf), 8);
    uint8_t sel = e.selected ? 1 : 0;
    f.write(reinterpret_cast<char*>(&sel), 1);
  }

  std::ofstream txt(path + ".txt");
  txt << "# parent_id slot top left h w label confidence selected\n";
  char buf[64];
  for (const auto& e : set.entries) {
    std::snprintf(buf, sizeof(buf), "%.9f", e.confidence);
    txt << e.parent_id << ' ' << slot_name(e.slot) << ' ' << e.top << ' '
        << e.left << ' ' << e.h << ' ' << e.w << ' ' << e.label << ' ' << buf
        << ' ' << (e.selected ? 1 : 0) << '\n';
  }
}

PseudoLabelSet load_pseudo_labels(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifactError("pseudo-label cache missing: " + path);
  char magic[8];
  f.read(magic, 8);
  if (std::string(magic, 8) != "SSEGPGG1")
    throw std::runtime_error("bad pseudo-label cache: " + path);
  PseudoLabelSet set;
  int32_t kg;
  f.read(reinterpret_cast<char*>(&kg), 4);
  set.k_global = kg;
  uint64_t n;
  f.read(reinterpret_cast<char*>(&n), 8);
  for (uint64_t i = 0; i < n; ++i) {
    PseudoLabel e;
    uint32_t len;
    f.read(reinterpret_cast<char*>(&len), 4);
    e.parent_id.resize(len);
    f.read(e.parent_id.data(), len);
    uint8_t slot;
    f.read(reinterpret_cast<char*>(&slot), 1);
    e.slot = ViewSlot(slot);
    int32_t box[4];
    f.read(reinterpret_cast<char*>(box), 16);
    e.top = box[0];
    e.left = box[1];
    e.h = box[2];
    e.w = box[3];
    int32_t label;
    f.read(reinterpret_cast<char*>(&label), 4);
    e.label = label;
    f.read(reinterpret_cast<char*>(&e.confidence), 8);
    uint8_t sel;
    f.read(reinterpret_cast<char*>(&sel), 1);
    e.selected = sel != 0;
    if (!f) throw std::runtime_error("truncated pseudo-label cache: " + path);
    set.entries.push_back(std::move(e));
  }
  return set;
}

uint64_t pseudo_label_fingerprint(const PseudoLabelSet& set) {
  uint64_t h = fnv1a(std::string_view(reinterpret_cast<const char*>(&set.k_global),
                                      sizeof(set.k_global)));
  for (const auto& e : set.entries) {
    h = fnv1a(e.parent_id, h);
    char fixed[sizeof(int) * 6 + sizeof(double) + 2];
    char* p = fixed;
    auto put = [&p](const void* v, size_t n) {
      std::memcpy(p, v, n);
      p += n;
    };
    int slot = int(e.slot);
    put(&slot, sizeof(int));
    put(&e.top, sizeof(int));
    put(&e.left, sizeof(int));
    put(&e.h, sizeof(int));
    put(&e.w, sizeof(int));
    put(&e.label, sizeof(int));
    put(&e.confidence, sizeof(double));
    fixed[sizeof(fixed) - 2] = e.selected ? 1 : 0;
    fixed[sizeof(fixed) - 1] = ';';
    h = fnv1a(std::string_view(fixed, sizeof(fixed)), h);
  }
  return h;
}

}  // namespace selfseg
