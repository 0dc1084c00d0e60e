#include "selfseg/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <nlohmann/json.hpp>

#include "selfseg/common.hpp"

namespace fs = std::filesystem;

namespace selfseg {

namespace {

Image resize_shorter_then_center_crop(const Image& img, int size) {
  int oh, ow;
  if (img.h <= img.w) {
    oh = size;
    ow = std::max(size, int(std::lround(double(img.w) * size / img.h)));
  } else {
    ow = size;
    oh = std::max(size, int(std::lround(double(img.h) * size / img.w)));
  }
  return center_crop(resize_bilinear(img, oh, ow), size);
}

LabelMap resize_shorter_then_center_crop(const LabelMap& m, int size) {
  int oh, ow;
  if (m.h <= m.w) {
    oh = size;
    ow = std::max(size, int(std::lround(double(m.w) * size / m.h)));
  } else {
    ow = size;
    oh = std::max(size, int(std::lround(double(m.h) * size / m.w)));
  }
  return center_crop(resize_nearest(m, oh, ow), size);
}

}  // namespace

std::vector<ImageSample> load_dataset(const std::string& root,
                                      const std::string& split, int resize) {
  fs::path dir = fs::path(root) / split / "images";
  if (!fs::is_directory(dir))
    throw MissingArtifactError("dataset directory missing: " + dir.string());
  fs::path label_dir = fs::path(root) / split / "labels";

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.stem() < b.stem(); });
  if (files.empty())
    std::cerr << "warning: no images found under " << dir << "\n";

  std::vector<ImageSample> out;
  for (const auto& f : files) {
    ImageSample s;
    s.id = f.stem().string();
    Image img = load_image_png(f.string());
    fs::path lp = label_dir / (s.id + ".png");
    if (fs::exists(lp)) {
      LabelMap lm = load_label_png(lp.string());
      if (lm.h != img.h || lm.w != img.w)
        throw std::runtime_error("label/image size mismatch for sample '" + s.id + "'");
      s.gt_labels = resize_shorter_then_center_crop(lm, resize);
    }
    s.image = resize_shorter_then_center_crop(img, resize);
    out.push_back(std::move(s));
  }
  return out;
}

DatasetMeta load_dataset_meta(const std::string& root) {
  fs::path p = fs::path(root) / "meta.json";
  std::ifstream f(p);
  if (!f) throw MissingArtifactError("dataset meta missing: " + p.string());
  nlohmann::json j = nlohmann::json::parse(f);
  DatasetMeta m;
  m.n_classes = j.at("n_classes").get<int>();
  m.things = j.at("things").get<std::vector<int>>();
  m.stuff = j.at("stuff").get<std::vector<int>>();
  return m;
}

namespace {

void draw_background(Image& img, LabelMap& lm, int kind, std::mt19937_64& rng) {
  int s = img.h;
  double phase = uniform(rng, 0.0, 6.28);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      double n = 0.04 * (uniform(rng) - 0.5);
      if (kind == 0) {
        // cool gradient with horizontal stripes
        double g = 0.35 + 0.25 * y / s + 0.08 * std::sin(0.5 * y + phase);
        img.at(y, x, 0) = std::clamp(0.10 + 0.05 * g + n, 0.0, 1.0);
        img.at(y, x, 1) = std::clamp(0.35 * g + 0.25 + n, 0.0, 1.0);
        img.at(y, x, 2) = std::clamp(0.55 + 0.35 * g + n, 0.0, 1.0);
      } else {
        // warm checker texture
        double c = ((x / 4 + y / 4) % 2 == 0) ? 0.12 : 0.0;
        img.at(y, x, 0) = std::clamp(0.62 + c + n, 0.0, 1.0);
        img.at(y, x, 1) = std::clamp(0.42 + c + n, 0.0, 1.0);
        img.at(y, x, 2) = std::clamp(0.16 + c / 2 + n, 0.0, 1.0);
      }
      lm.at(y, x) = uint8_t(kind);
    }
}

// class ids: 2 = disk, 3 = square, 4 = triangle
void draw_shape(Image& img, LabelMap& lm, int cls, double cx, double cy,
                double radius, std::mt19937_64& rng) {
  static const double base[3][3] = {{0.85, 0.15, 0.15},   // disk: red
                                    {0.92, 0.80, 0.12},   // square: yellow
                                    {0.78, 0.12, 0.80}};  // triangle: magenta
  double col[3];
  for (int c = 0; c < 3; ++c)
    col[c] = std::clamp(base[cls - 2][c] + uniform(rng, -0.06, 0.06), 0.0, 1.0);
  int s = img.h;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      double dx = x - cx, dy = y - cy;
      bool inside = false;
      if (cls == 2) {
        inside = dx * dx + dy * dy <= radius * radius;
      } else if (cls == 3) {
        inside = std::abs(dx) <= radius && std::abs(dy) <= radius;
      } else {
        // upright isoceles triangle, apex at cy - radius
        double t = (dy + radius) / (2.0 * radius);  // 0 at apex, 1 at base
        inside = dy >= -radius && dy <= radius && std::abs(dx) <= radius * t;
      }
      if (!inside) continue;
      double n = 0.03 * (uniform(rng) - 0.5);
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = std::clamp(col[c] + n, 0.0, 1.0);
      lm.at(y, x) = uint8_t(cls);
    }
}

}  // namespace

std::vector<ImageSample> gen_synthetic_dataset(int n, int size, int n_classes,
                                               uint64_t seed) {
  if (n_classes < 2 || size < 32)
    throw std::invalid_argument("gen_synthetic_dataset: need n_classes >= 2 and size >= 32");
  if (n_classes > 5)
    throw std::invalid_argument(
        "gen_synthetic_dataset: only 2 backgrounds + 3 shape templates available "
        "(n_classes <= 5)");
  int n_shapes = n_classes - 2;
  std::vector<ImageSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    auto rng = make_rng(mix_seed(seed, 0x5e7a11, uint64_t(i)));
    ImageSample s;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth_%06d", i);
    s.id = buf;
    s.image = Image(size, size);
    LabelMap lm(size, size);
    draw_background(s.image, lm, i % 2, rng);
    if (n_shapes > 0) {
      // two shapes per image: one round-robin (keeps every class frequent),
      // one random; anchored in opposite halves to limit occlusion
      int c1 = 2 + (i % n_shapes);
      int c2 = 2 + uniform_int(rng, 0, n_shapes - 1);
      double r1 = uniform(rng, size / 5.5, size / 3.8);
      double r2 = uniform(rng, size / 5.5, size / 3.8);
      double m = size / 3.4;  // anchor margin
      draw_shape(s.image, lm, c1, uniform(rng, m, size / 2.0 - 2),
                 uniform(rng, m, size - m), r1, rng);
      draw_shape(s.image, lm, c2, uniform(rng, size / 2.0 + 2, size - m),
                 uniform(rng, m, size - m), r2, rng);
    }
    s.gt_labels = std::move(lm);
    out.push_back(std::move(s));
  }
  return out;
}

void write_dataset(const std::vector<ImageSample>& samples, const std::string& root,
                   const std::string& split, const DatasetMeta& meta) {
  fs::path base = fs::path(root) / split;
  fs::create_directories(base / "images");
  fs::create_directories(base / "labels");
  for (const auto& s : samples) {
    save_image_png(s.image, (base / "images" / (s.id + ".png")).string());
    if (s.gt_labels)
      save_label_png(*s.gt_labels, (base / "labels" / (s.id + ".png")).string());
  }
  nlohmann::json j{{"n_classes", meta.n_classes},
                   {"things", meta.things},
                   {"stuff", meta.stuff}};
  std::ofstream f(fs::path(root) / "meta.json");
  f << j.dump(2) << "\n";
}

PhotometricSpec sample_photometric(std::mt19937_64& rng) {
  PhotometricSpec p;
  p.apply_jitter = bernoulli(rng, 0.8);
  p.brightness = uniform(rng, 0.7, 1.3);
  p.contrast = uniform(rng, 0.7, 1.3);
  p.saturation = uniform(rng, 0.7, 1.3);
  p.hue = uniform(rng, -0.1, 0.1);
  p.apply_grayscale = bernoulli(rng, 0.2);
  p.apply_blur = bernoulli(rng, 0.5);
  p.blur_sigma = uniform(rng, 0.1, 2.0);
  return p;
}

TransformSpecs sample_transform_specs(std::mt19937_64& rng, int src_h, int src_w,
                                      int out_size) {
  TransformSpecs t;
  t.photo1 = sample_photometric(rng);
  t.photo2 = sample_photometric(rng);
  double area_frac = uniform(rng, 0.5, 1.0);
  int side = int(std::floor(std::sqrt(area_frac * src_h * src_w)));
  side = std::clamp(side, 1, std::min(src_h, src_w));
  t.geo.crop_h = t.geo.crop_w = side;
  t.geo.top = uniform_int(rng, 0, src_h - side);
  t.geo.left = uniform_int(rng, 0, src_w - side);
  t.geo.hflip = bernoulli(rng, 0.5);
  t.geo.out_h = t.geo.out_w = out_size;
  return t;
}

namespace {

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  v = mx;
  double d = mx - mn;
  s = mx == 0 ? 0 : d / mx;
  if (d == 0)
    h = 0;
  else if (mx == r)
    h = std::fmod((g - b) / d, 6.0) / 6.0;
  else if (mx == g)
    h = ((b - r) / d + 2.0) / 6.0;
  else
    h = ((r - g) / d + 4.0) / 6.0;
  if (h < 0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  double hh = std::fmod(h, 1.0) * 6.0;
  int i = int(hh) % 6;
  double f = hh - std::floor(hh);
  double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

double luma(const Image& img, int y, int x) {
  return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
}

}  // namespace

Image apply_photometric(const Image& image, const PhotometricSpec& spec) {
  Image out = image;
  bool touched = false;
  if (spec.apply_jitter) {
    touched = true;
    for (auto& v : out.px) v *= spec.brightness;
    double m = 0;
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) m += luma(out, y, x);
    m /= double(out.h) * out.w;
    for (auto& v : out.px) v = (v - m) * spec.contrast + m;
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        double g = luma(out, y, x);
        for (int c = 0; c < 3; ++c)
          out.at(y, x, c) = g + (out.at(y, x, c) - g) * spec.saturation;
      }
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        double h, s, v;
        double r = std::clamp(out.at(y, x, 0), 0.0, 1.0);
        double g = std::clamp(out.at(y, x, 1), 0.0, 1.0);
        double b = std::clamp(out.at(y, x, 2), 0.0, 1.0);
        rgb_to_hsv(r, g, b, h, s, v);
        hsv_to_rgb(h + spec.hue, s, v, out.at(y, x, 0), out.at(y, x, 1),
                   out.at(y, x, 2));
      }
  }
  if (spec.apply_grayscale) {
    touched = true;
    out = to_grayscale(out);
  }
  if (spec.apply_blur) {
    touched = true;
    out = gaussian_blur(out, spec.blur_sigma);
  }
  if (touched)
    for (auto& v : out.px) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Image apply_geometric(const Image& image, const GeometricSpec& spec) {
  Image out = crop(image, spec.top, spec.left, spec.crop_h, spec.crop_w);
  if (spec.hflip) out = hflip(out);
  return resize_bilinear(out, spec.out_h, spec.out_w);
}

nn::Tensor apply_geometric_features(const nn::Tensor& fmap,
                                    const GeometricSpec& spec, int stride) {
  int gh = fmap.dim(1), gw = fmap.dim(2);
  auto scaled = [&](int v) { return int(std::lround(double(v) / stride)); };
  int h = scaled(spec.crop_h), w = scaled(spec.crop_w);
  if (h < 1 || w < 1)
    throw std::invalid_argument("apply_geometric_features: crop degenerates on grid");
  int top = std::clamp(scaled(spec.top), 0, gh - 1);
  int left = std::clamp(scaled(spec.left), 0, gw - 1);
  h = std::min(h, gh - top);
  w = std::min(w, gw - left);
  nn::Tensor out = nn::crop_chw(fmap, top, left, h, w);
  if (spec.hflip) out = nn::flip_w(out);
  int oh = scaled(spec.out_h), ow = scaled(spec.out_w);
  if (oh < 1 || ow < 1)
    throw std::invalid_argument("apply_geometric_features: output degenerates on grid");
  return nn::interpolate_bilinear(out, oh, ow);
}

BranchViews make_branch_views(const ImageSample& sample, const TransformSpecs& specs) {
  BranchViews v;
  v.photo1 = specs.photo1;
  v.photo2 = specs.photo2;
  v.shared_geo = specs.geo;
  v.view1_image = apply_photometric(sample.image, specs.photo1);
  v.view2_image = apply_geometric(apply_photometric(sample.image, specs.photo2),
                                  specs.geo);
  return v;
}

BranchViews make_branch_views(const ImageSample& sample, std::mt19937_64& rng,
                              int out_size) {
  return make_branch_views(
      sample, sample_transform_specs(rng, sample.image.h, sample.image.w, out_size));
}

}  // namespace selfseg
