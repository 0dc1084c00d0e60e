#pragma once

#include <string>
#include <vector>

#include "selfseg/clustering.hpp"
#include "selfseg/data_pipeline.hpp"
#include "selfseg/model.hpp"

namespace selfseg {

// Slot order doubles as the deterministic tie order in ranking.
enum class ViewSlot { full = 0, tl, tr, bl, br, center };
const char* slot_name(ViewSlot s);

struct PyramidView {
  std::string parent_id;
  ViewSlot slot = ViewSlot::full;
  int top = 0, left = 0, h = 0, w = 0;  // crop box in source pixels
  Image resized_image;
};

// One full view plus 5 half-size crops (4 corners + center), each resized to
// view_resize square for label inference.
std::vector<PyramidView> extract_pyramid_views(const ImageSample& sample,
                                               int view_resize);

struct PseudoLabel {
  std::string parent_id;
  ViewSlot slot = ViewSlot::full;
  int top = 0, left = 0, h = 0, w = 0;
  int label = 0;
  double confidence = 0.0;  // cosine to the assigned center
  bool selected = false;
};

struct PseudoLabelSet {
  int k_global = 0;
  std::vector<PseudoLabel> entries;  // 6 per image, slot order within image
};

// K-means over global embeddings of the full images; centers stay frozen.
ClusterModel build_global_clusters(const std::vector<ImageSample>& dataset,
                                   const FeatureExtractor& net,
                                   const Projector& proj, int k_global,
                                   uint64_t seed, int embed_resize,
                                   int embed_crop, int max_iters = 100);

// Nearest-center (max cosine, ties toward the lowest index) label for every
// pyramid view of every image. No selection flags yet.
PseudoLabelSet assign_pseudo_labels(const std::vector<ImageSample>& dataset,
                                    const ClusterModel& centers,
                                    const FeatureExtractor& net,
                                    const Projector& proj, int view_resize,
                                    int embed_resize, int embed_crop);

// Dataset-wide ranking of crop views by confidence; marks the top
// ceil(keep_frac * n_crops) selected. Full views are always selected.
void active_select(PseudoLabelSet& set, double keep_frac);

// Binary cache plus a human-readable ".txt" sidecar next to it.
void save_pseudo_labels(const PseudoLabelSet& set, const std::string& path);
PseudoLabelSet load_pseudo_labels(const std::string& path);

// Content fingerprint for the frozen-label invariant.
uint64_t pseudo_label_fingerprint(const PseudoLabelSet& set);

}  // namespace selfseg
