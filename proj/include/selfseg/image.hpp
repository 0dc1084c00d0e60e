#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace selfseg {

// RGB image, values in [0,1], row-major interleaved (y, x, channel).
struct Image {
  int h = 0, w = 0;
  std::vector<double> px;

  Image() = default;
  Image(int h_, int w_) : h(h_), w(w_), px(size_t(h_) * w_ * 3, 0.0) {}
  double& at(int y, int x, int c) { return px[(size_t(y) * w + x) * 3 + c]; }
  double at(int y, int x, int c) const { return px[(size_t(y) * w + x) * 3 + c]; }
};

// Index label map; 255 is the ignore value.
struct LabelMap {
  int h = 0, w = 0;
  std::vector<uint8_t> v;

  LabelMap() = default;
  LabelMap(int h_, int w_, uint8_t fill = 0)
      : h(h_), w(w_), v(size_t(h_) * w_, fill) {}
  uint8_t& at(int y, int x) { return v[size_t(y) * w + x]; }
  uint8_t at(int y, int x) const { return v[size_t(y) * w + x]; }
};

inline constexpr uint8_t kIgnoreLabel = 255;

Image resize_bilinear(const Image& img, int oh, int ow);
Image crop(const Image& img, int top, int left, int h, int w);
Image center_crop(const Image& img, int size);
Image hflip(const Image& img);
Image gaussian_blur(const Image& img, double sigma);
Image to_grayscale(const Image& img);

LabelMap resize_nearest(const LabelMap& m, int oh, int ow);
LabelMap crop(const LabelMap& m, int top, int left, int h, int w);
LabelMap center_crop(const LabelMap& m, int size);

// Generic half-pixel bilinear resize of a multi-channel plane grid,
// data laid out [c][y][x]; shared by feature-map and probability upsampling.
void resize_bilinear_planes(const double* src, int c, int h, int w, double* dst,
                            int oh, int ow);

Image load_image_png(const std::string& path);   // any 8-bit image file
LabelMap load_label_png(const std::string& path);
void save_image_png(const Image& img, const std::string& path);
void save_label_png(const LabelMap& m, const std::string& path);

}  // namespace selfseg
