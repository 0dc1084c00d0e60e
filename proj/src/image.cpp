#include "selfseg/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "selfseg/common.hpp"

namespace selfseg {

void resize_bilinear_planes(const double* src, int c, int h, int w, double* dst,
                            int oh, int ow) {
  double sy = double(h) / oh, sx = double(w) / ow;
  for (int oy = 0; oy < oh; ++oy) {
    double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, double(h - 1));
    int y0 = int(std::floor(fy));
    int y1 = std::min(y0 + 1, h - 1);
    double wy = fy - y0;
    for (int ox = 0; ox < ow; ++ox) {
      double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, double(w - 1));
      int x0 = int(std::floor(fx));
      int x1 = std::min(x0 + 1, w - 1);
      double wx = fx - x0;
      for (int ci = 0; ci < c; ++ci) {
        const double* p = src + size_t(ci) * h * w;
        double v = (1 - wy) * ((1 - wx) * p[size_t(y0) * w + x0] +
                               wx * p[size_t(y0) * w + x1]) +
                   wy * ((1 - wx) * p[size_t(y1) * w + x0] +
                         wx * p[size_t(y1) * w + x1]);
        dst[(size_t(ci) * oh + oy) * ow + ox] = v;
      }
    }
  }
}

Image resize_bilinear(const Image& img, int oh, int ow) {
  // Deinterleave, resize per plane, reinterleave; keeps one bilinear kernel.
  std::vector<double> planes(size_t(3) * img.h * img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c)
        planes[(size_t(c) * img.h + y) * img.w + x] = img.at(y, x, c);
  std::vector<double> out_planes(size_t(3) * oh * ow);
  resize_bilinear_planes(planes.data(), 3, img.h, img.w, out_planes.data(), oh, ow);
  Image out(oh, ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = out_planes[(size_t(c) * oh + y) * ow + x];
  return out;
}

Image crop(const Image& img, int top, int left, int h, int w) {
  if (top < 0 || left < 0 || h < 1 || w < 1 || top + h > img.h || left + w > img.w)
    throw std::invalid_argument("crop: box outside image");
  Image out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(top + y, left + x, c);
  return out;
}

Image center_crop(const Image& img, int size) {
  return crop(img, (img.h - size) / 2, (img.w - size) / 2, size, size);
}

Image hflip(const Image& img) {
  Image out(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.w - 1 - x, c);
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double s = 0;
  for (int i = -radius; i <= radius; ++i)
    s += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= s;

  auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi); };
  Image tmp(img.h, img.w), out(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * img.at(y, clampi(x + i, img.w - 1), c);
        tmp.at(y, x, c) = acc;
      }
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * tmp.at(clampi(y + i, img.h - 1), x, c);
        out.at(y, x, c) = acc;
      }
  return out;
}

Image to_grayscale(const Image& img) {
  Image out(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double g = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) +
                 0.114 * img.at(y, x, 2);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = g;
    }
  return out;
}

LabelMap resize_nearest(const LabelMap& m, int oh, int ow) {
  LabelMap out(oh, ow);
  for (int y = 0; y < oh; ++y) {
    int sy = std::min(int((y + 0.5) * m.h / oh), m.h - 1);
    for (int x = 0; x < ow; ++x) {
      int sx = std::min(int((x + 0.5) * m.w / ow), m.w - 1);
      out.at(y, x) = m.at(sy, sx);
    }
  }
  return out;
}

LabelMap crop(const LabelMap& m, int top, int left, int h, int w) {
  if (top < 0 || left < 0 || h < 1 || w < 1 || top + h > m.h || left + w > m.w)
    throw std::invalid_argument("crop: box outside label map");
  LabelMap out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = m.at(top + y, left + x);
  return out;
}

LabelMap center_crop(const LabelMap& m, int size) {
  return crop(m, (m.h - size) / 2, (m.w - size) / 2, size, size);
}

Image load_image_png(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw MissingArtifactError("cannot read image: " + path);
  Image out(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y)
    for (int x = 0; x < bgr.cols; ++x) {
      auto p = bgr.at<cv::Vec3b>(y, x);
      out.at(y, x, 0) = p[2] / 255.0;
      out.at(y, x, 1) = p[1] / 255.0;
      out.at(y, x, 2) = p[0] / 255.0;
    }
  return out;
}

LabelMap load_label_png(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw MissingArtifactError("cannot read label map: " + path);
  LabelMap out(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) out.at(y, x) = m.at<uint8_t>(y, x);
  return out;
}

void save_image_png(const Image& img, const std::string& path) {
  cv::Mat bgr(img.h, img.w, CV_8UC3);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      auto to8 = [](double v) {
        return uint8_t(std::clamp(std::lround(v * 255.0), 0L, 255L));
      };
      bgr.at<cv::Vec3b>(y, x) =
          cv::Vec3b(to8(img.at(y, x, 2)), to8(img.at(y, x, 1)), to8(img.at(y, x, 0)));
    }
  if (!cv::imwrite(path, bgr))
    throw std::runtime_error("cannot write image: " + path);
}

void save_label_png(const LabelMap& m, const std::string& path) {
  cv::Mat g(m.h, m.w, CV_8UC1);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) g.at<uint8_t>(y, x) = m.at(y, x);
  if (!cv::imwrite(path, g))
    throw std::runtime_error("cannot write label map: " + path);
}

}  // namespace selfseg
