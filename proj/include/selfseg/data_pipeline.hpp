#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "selfseg/image.hpp"
#include "selfseg/tensor.hpp"

namespace selfseg {

struct ImageSample {
  std::string id;
  Image image;
  std::optional<LabelMap> gt_labels;
};

// Photometric transform parameters; all fields are sampled even when the
// corresponding flag is off, so replay is position-independent.
struct PhotometricSpec {
  bool apply_jitter = false;  // prob 0.8
  double brightness = 1.0, contrast = 1.0, saturation = 1.0;  // [0.7, 1.3]
  double hue = 0.0;                                           // [-0.1, 0.1]
  bool apply_grayscale = false;  // prob 0.2
  bool apply_blur = false;       // prob 0.5
  double blur_sigma = 0.1;       // [0.1, 2.0]

  static PhotometricSpec identity() { return {}; }
};

struct GeometricSpec {
  int top = 0, left = 0, crop_h = 0, crop_w = 0;  // source-pixel crop box
  bool hflip = false;                             // prob 0.5
  int out_h = 0, out_w = 0;

  static GeometricSpec identity_for(int h, int w) {
    return {0, 0, h, w, false, h, w};
  }
};

struct BranchViews {
  Image view1_image;  // photometric only; geometric deferred to feature space
  Image view2_image;  // photometric then geometric
  GeometricSpec shared_geo;
  PhotometricSpec photo1, photo2;
};

struct DatasetMeta {
  int n_classes = 0;
  std::vector<int> things;  // foreground classes
  std::vector<int> stuff;   // background classes
};

// Loads <root>/<split>/{images,labels}; every sample is resized (shorter
// side) then center-cropped to resize x resize; ordering is by id.
std::vector<ImageSample> load_dataset(const std::string& root,
                                      const std::string& split, int resize);
DatasetMeta load_dataset_meta(const std::string& root);

// Colored shapes on textured backgrounds with exact labels. Classes 0,1 are
// the two background textures ("stuff"); 2..n_classes-1 are shape classes
// ("things": disk, square, triangle). Deterministic in all arguments.
std::vector<ImageSample> gen_synthetic_dataset(int n, int size, int n_classes,
                                               uint64_t seed);
// Writes the standard folder layout (images/, labels/, meta.json).
void write_dataset(const std::vector<ImageSample>& samples,
                   const std::string& root, const std::string& split,
                   const DatasetMeta& meta);

struct TransformSpecs {
  PhotometricSpec photo1, photo2;
  GeometricSpec geo;
};

TransformSpecs sample_transform_specs(std::mt19937_64& rng, int src_h, int src_w,
                                      int out_size);
PhotometricSpec sample_photometric(std::mt19937_64& rng);

Image apply_photometric(const Image& image, const PhotometricSpec& spec);
Image apply_geometric(const Image& image, const GeometricSpec& spec);

// Feature-domain variant: the crop box is rescaled by the feature stride and
// rounded to the grid; differentiable. Throws on a crop degenerating to <1 cell.
nn::Tensor apply_geometric_features(const nn::Tensor& fmap,
                                    const GeometricSpec& spec, int stride);

BranchViews make_branch_views(const ImageSample& sample, std::mt19937_64& rng,
                              int out_size);
BranchViews make_branch_views(const ImageSample& sample, const TransformSpecs& specs);

}  // namespace selfseg
