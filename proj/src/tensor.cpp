#include "selfseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace selfseg::nn {

namespace {

std::shared_ptr<TensorNode> make_node(std::vector<int> shape, bool rg) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value.resize(shape_numel(n->shape));
  n->requires_grad = rg;
  return n;
}

// Attaches parents and a backward closure only when gradients can flow;
// constant subgraphs stay leaf nodes.
Tensor finish(std::shared_ptr<TensorNode> out, std::initializer_list<Tensor> parents,
              std::function<void()> fn) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  out->requires_grad = rg;
  if (rg) {
    for (const auto& p : parents) out->parents.push_back(p.node());
    out->backward_fn = std::move(fn);
  }
  return Tensor(std::move(out));
}

}  // namespace

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("non-positive tensor dimension");
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = make_node(std::move(shape), requires_grad);
  n->value.setZero();
  return Tensor(std::move(n));
}

Tensor Tensor::from_data(std::vector<int> shape, const Eigen::VectorXd& v,
                         bool requires_grad) {
  auto n = make_node(std::move(shape), requires_grad);
  if (v.size() != n->value.size())
    throw std::invalid_argument("from_data: size mismatch");
  n->value = v;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  auto n = make_node({1}, requires_grad);
  n->value(0) = v;
  return Tensor(std::move(n));
}

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("item() on non-scalar tensor");
  return node_->value(0);
}

void Tensor::backward() {
  if (size() != 1) throw std::logic_error("backward() requires a scalar output");
  // Topological order by DFS post-order.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      TensorNode* p = n->parents[i++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (TensorNode* n : order) n->grad = Eigen::VectorXd::Zero(n->size());
  node_->grad(0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn();
}

namespace {

// Elementwise binary op with scalar broadcast. fa/fb give d(out)/d(a or b).
template <class F, class Da, class Db>
Tensor ewise2(const Tensor& a, const Tensor& b, F f, Da da, Db db) {
  bool as = a.size() == 1, bs = b.size() == 1;
  if (!as && !bs && a.shape() != b.shape())
    throw std::invalid_argument("elementwise op: shape mismatch");
  const Tensor& big = bs ? a : b;
  auto out = make_node(big.shape(), false);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (int64_t i = 0; i < out->value.size(); ++i)
    out->value(i) = f(av(as ? 0 : i), bv(bs ? 0 : i));
  TensorNode* o = out.get();
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  bool arg = a.requires_grad(), brg = b.requires_grad();
  return finish(out, {a, b}, [=]() {
    for (int64_t i = 0; i < o->value.size(); ++i) {
      double x = an->value(as ? 0 : i), y = bn->value(bs ? 0 : i);
      double g = o->grad(i);
      if (arg) an->grad(as ? 0 : i) += g * da(x, y);
      if (brg) bn->grad(bs ? 0 : i) += g * db(x, y);
    }
  });
}

template <class F, class D>
Tensor ewise1(const Tensor& a, F f, D d) {
  auto out = make_node(a.shape(), false);
  for (int64_t i = 0; i < out->value.size(); ++i) out->value(i) = f(a.value()(i));
  TensorNode* o = out.get();
  TensorNode* an = a.node().get();
  return finish(out, {a}, [=]() {
    for (int64_t i = 0; i < o->value.size(); ++i)
      an->grad(i) += o->grad(i) * d(an->value(i), o->value(i));
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return ewise2(
      a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return ewise2(
      a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return ewise2(
      a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double s) {
  return ewise1(
      a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_const(const Tensor& a, double c) {
  return ewise1(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp_elem(const Tensor& a) {
  return ewise1(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor relu(const Tensor& a) {
  return ewise1(
      a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& a) {
  // log(1+e^x), stable form for large |x|
  return ewise1(
      a,
      [](double x) { return x > 30 ? x : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor reciprocal(const Tensor& a) {
  return ewise1(
      a, [](double x) { return 1.0 / x; },
      [](double x, double) { return -1.0 / (x * x); });
}

Tensor square(const Tensor& a) {
  return ewise1(
      a, [](double x) { return x * x; }, [](double x, double) { return 2 * x; });
}

Tensor sum(const Tensor& a) {
  auto out = make_node({1}, false);
  out->value(0) = a.value().sum();
  TensorNode* o = out.get();
  TensorNode* an = a.node().get();
  return finish(out, {a}, [=]() { an->grad.array() += o->grad(0); });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / double(a.size())); }

using MatRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes");
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = make_node({m, n}, false);
  CMapRM am(a.value().data(), m, k), bm(b.value().data(), k, n);
  MapRM(out->value.data(), m, n) = am * bm;
  TensorNode* o = out.get();
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  bool arg = a.requires_grad(), brg = b.requires_grad();
  return finish(out, {a, b}, [=]() {
    CMapRM go(o->grad.data(), m, n);
    CMapRM av(an->value.data(), m, k), bv(bn->value.data(), k, n);
    if (arg) MapRM(an->grad.data(), m, k) += go * bv.transpose();
    if (brg) MapRM(bn->grad.data(), k, n) += av.transpose() * go;
  });
}

Tensor transpose2d(const Tensor& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("transpose2d: rank != 2");
  int m = a.dim(0), n = a.dim(1);
  auto out = make_node({n, m}, false);
  CMapRM am(a.value().data(), m, n);
  MapRM(out->value.data(), n, m) = am.transpose();
  TensorNode* o = out.get();
  TensorNode* an = a.node().get();
  return finish(out, {a}, [=]() {
    MapRM(an->grad.data(), m, n) += CMapRM(o->grad.data(), n, m).transpose();
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, transpose2d(w));
  // broadcast bias over rows
  int n = y.dim(0), d = y.dim(1);
  if (b.size() != d) throw std::invalid_argument("linear: bias size mismatch");
  auto out = make_node(y.shape(), false);
  MapRM(out->value.data(), n, d) =
      CMapRM(y.value().data(), n, d).rowwise() +
      Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), d);
  TensorNode* o = out.get();
  TensorNode* yn = y.node().get();
  TensorNode* bn = b.node().get();
  bool yrg = y.requires_grad(), brg = b.requires_grad();
  return finish(out, {y, b}, [=]() {
    CMapRM go(o->grad.data(), n, d);
    if (yrg) MapRM(yn->grad.data(), n, d) += go;
    if (brg)
      Eigen::Map<Eigen::RowVectorXd>(bn->grad.data(), d) += go.colwise().sum();
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  if (x.shape().size() != 2 || s.size() != x.dim(0))
    throw std::invalid_argument("scale_rows: shape mismatch");
  int n = x.dim(0), d = x.dim(1);
  auto out = make_node(x.shape(), false);
  for (int i = 0; i < n; ++i)
    out->value.segment(int64_t(i) * d, d) =
        x.value().segment(int64_t(i) * d, d) * s.value()(i);
  TensorNode* o = out.get();
  TensorNode* xn = x.node().get();
  TensorNode* sn = s.node().get();
  bool xrg = x.requires_grad(), srg = s.requires_grad();
  return finish(out, {x, s}, [=]() {
    for (int i = 0; i < n; ++i) {
      auto go = o->grad.segment(int64_t(i) * d, d);
      if (xrg) xn->grad.segment(int64_t(i) * d, d) += go * sn->value(i);
      if (srg) sn->grad(i) += go.dot(xn->value.segment(int64_t(i) * d, d));
    }
  });
}

Tensor row_sums(const Tensor& x) {
  if (x.shape().size() != 2) throw std::invalid_argument("row_sums: rank != 2");
  int n = x.dim(0), d = x.dim(1);
  auto out = make_node({n}, false);
  for (int i = 0; i < n; ++i)
    out->value(i) = x.value().segment(int64_t(i) * d, d).sum();
  TensorNode* o = out.get();
  TensorNode* xn = x.node().get();
  return finish(out, {x}, [=]() {
    for (int i = 0; i < n; ++i)
      xn->grad.segment(int64_t(i) * d, d).array() += o->grad(i);
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad) {
  if (x.shape().size() != 3 || w.shape().size() != 4)
    throw std::invalid_argument("conv2d: expects x[C,H,W], w[O,C,k,k]");
  int c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  int o_ch = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c || w.dim(3) != k || b.size() != o_ch)
    throw std::invalid_argument("conv2d: weight/bias shape mismatch");
  int oh = (h + 2 * pad - k) / stride + 1;
  int ow = (wd + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");
  int ckk = c * k * k;
  int64_t np = int64_t(oh) * ow;

  // Gather map: cols(r, p) = x[idx], -1 marks zero padding.
  auto idx = std::make_shared<std::vector<int64_t>>(int64_t(ckk) * np);
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        int r = (ci * k + ky) * k + kx;
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            int iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
            int64_t p = int64_t(oy) * ow + ox;
            (*idx)[int64_t(r) * np + p] =
                (iy >= 0 && iy < h && ix >= 0 && ix < wd)
                    ? (int64_t(ci) * h + iy) * wd + ix
                    : -1;
          }
      }
  Eigen::MatrixXd cols(ckk, np);
  for (int r = 0; r < ckk; ++r)
    for (int64_t p = 0; p < np; ++p) {
      int64_t j = (*idx)[int64_t(r) * np + p];
      cols(r, p) = j >= 0 ? x.value()(j) : 0.0;
    }

  auto out = make_node({o_ch, oh, ow}, false);
  CMapRM wm(w.value().data(), o_ch, ckk);
  MapRM om(out->value.data(), o_ch, np);
  om = (wm * cols).eval();
  om.colwise() += Eigen::Map<const Eigen::VectorXd>(b.value().data(), o_ch);

  TensorNode* on = out.get();
  TensorNode* xn = x.node().get();
  TensorNode* wn = w.node().get();
  TensorNode* bn = b.node().get();
  bool xrg = x.requires_grad(), wrg = w.requires_grad(), brg = b.requires_grad();
  auto cols_sp = std::make_shared<Eigen::MatrixXd>(std::move(cols));
  return finish(out, {x, w, b}, [=]() {
    CMapRM go(on->grad.data(), o_ch, np);
    if (brg)
      Eigen::Map<Eigen::VectorXd>(bn->grad.data(), o_ch) += go.rowwise().sum();
    if (wrg) MapRM(wn->grad.data(), o_ch, ckk) += go * cols_sp->transpose();
    if (xrg) {
      Eigen::MatrixXd dcols =
          CMapRM(wn->value.data(), o_ch, ckk).transpose() * go;
      for (int r = 0; r < ckk; ++r)
        for (int64_t p = 0; p < np; ++p) {
          int64_t j = (*idx)[int64_t(r) * np + p];
          if (j >= 0) xn->grad(j) += dcols(r, p);
        }
    }
  });
}

Tensor gap(const Tensor& x) {
  if (x.shape().size() != 3) throw std::invalid_argument("gap: expects [C,H,W]");
  int c = x.dim(0);
  int64_t hw = int64_t(x.dim(1)) * x.dim(2);
  auto out = make_node({c}, false);
  for (int i = 0; i < c; ++i)
    out->value(i) = x.value().segment(i * hw, hw).mean();
  TensorNode* o = out.get();
  TensorNode* xn = x.node().get();
  return finish(out, {x}, [=]() {
    for (int i = 0; i < c; ++i)
      xn->grad.segment(i * hw, hw).array() += o->grad(i) / double(hw);
  });
}

Tensor interpolate_bilinear(const Tensor& x, int oh, int ow) {
  if (x.shape().size() != 3)
    throw std::invalid_argument("interpolate_bilinear: expects [C,H,W]");
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (oh <= 0 || ow <= 0)
    throw std::invalid_argument("interpolate_bilinear: bad output size");
  // Half-pixel centers (align_corners=false).
  struct Tap {
    int i0, i1;
    double w0, w1;
  };
  auto taps = [](int in, int on) {
    std::vector<Tap> t(on);
    double s = double(in) / on;
    for (int o = 0; o < on; ++o) {
      double src = (o + 0.5) * s - 0.5;
      src = std::max(0.0, std::min(src, double(in - 1)));
      int i0 = int(std::floor(src));
      int i1 = std::min(i0 + 1, in - 1);
      double f = src - i0;
      t[o] = {i0, i1, 1.0 - f, f};
    }
    return t;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(h, oh));
  auto tx = std::make_shared<std::vector<Tap>>(taps(w, ow));
  auto out = make_node({c, oh, ow}, false);
  for (int ci = 0; ci < c; ++ci) {
    const double* src = x.value().data() + int64_t(ci) * h * w;
    double* dst = out->value.data() + int64_t(ci) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const Tap& a = (*ty)[oy];
      for (int ox = 0; ox < ow; ++ox) {
        const Tap& b = (*tx)[ox];
        dst[int64_t(oy) * ow + ox] =
            a.w0 * (b.w0 * src[int64_t(a.i0) * w + b.i0] +
                    b.w1 * src[int64_t(a.i0) * w + b.i1]) +
            a.w1 * (b.w0 * src[int64_t(a.i1) * w + b.i0] +
                    b.w1 * src[int64_t(a.i1) * w + b.i1]);
      }
    }
  }
  TensorNode* o = out.get();
  TensorNode* xn = x.node().get();
  return finish(out, {x}, [=]() {
    for (int ci = 0; ci < c; ++ci) {
      double* gsrc = xn->grad.data() + int64_t(ci) * h * w;
      const double* gdst = o->grad.data() + int64_t(ci) * oh * ow;
      for (int oy = 0; oy < oh; ++oy) {
        const Tap& a = (*ty)[oy];
        for (int ox = 0; ox < ow; ++ox) {
          const Tap& b = (*tx)[ox];
          double g = gdst[int64_t(oy) * ow + ox];
          gsrc[int64_t(a.i0) * w + b.i0] += g * a.w0 * b.w0;
          gsrc[int64_t(a.i0) * w + b.i1] += g * a.w0 * b.w1;
          gsrc[int64_t(a.i1) * w + b.i0] += g * a.w1 * b.w0;
          gsrc[int64_t(a.i1) * w + b.i1] += g * a.w1 * b.w1;
        }
      }
    }
  });
}

namespace {

// Pure index permutation/selection: out[i] = x[map[i]].
Tensor gather_map(const Tensor& x, std::vector<int> shape,
                  std::shared_ptr<std::vector<int64_t>> map) {
  auto out = make_node(std::move(shape), false);
  for (int64_t i = 0; i < out->value.size(); ++i)
    out->value(i) = x.value()((*map)[i]);
  TensorNode* o = out.get();
  TensorNode* xn = x.node().get();
  return finish(out, {x}, [=]() {
    for (int64_t i = 0; i < o->value.size(); ++i)
      xn->grad((*map)[i]) += o->grad(i);
  });
}

}  // namespace

Tensor crop_chw(const Tensor& x, int top, int left, int h, int w) {
  if (x.shape().size() != 3) throw std::invalid_argument("crop_chw: expects [C,H,W]");
  int c = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (h < 1 || w < 1 || top < 0 || left < 0 || top + h > H || left + w > W)
    throw std::invalid_argument("crop_chw: box outside input");
  auto map = std::make_shared<std::vector<int64_t>>(int64_t(c) * h * w);
  int64_t i = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        (*map)[i++] = (int64_t(ci) * H + top + y) * W + left + xx;
  return gather_map(x, {c, h, w}, std::move(map));
}

Tensor flip_w(const Tensor& x) {
  if (x.shape().size() != 3) throw std::invalid_argument("flip_w: expects [C,H,W]");
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto map = std::make_shared<std::vector<int64_t>>(x.size());
  int64_t i = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        (*map)[i++] = (int64_t(ci) * h + y) * w + (w - 1 - xx);
  return gather_map(x, x.shape(), std::move(map));
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (shape_numel(shape) != x.size())
    throw std::invalid_argument("reshape: element count mismatch");
  auto map = std::make_shared<std::vector<int64_t>>(x.size());
  for (int64_t i = 0; i < x.size(); ++i) (*map)[i] = i;
  return gather_map(x, std::move(shape), std::move(map));
}

Tensor chw_to_rows(const Tensor& x) {
  if (x.shape().size() != 3)
    throw std::invalid_argument("chw_to_rows: expects [C,H,W]");
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto map = std::make_shared<std::vector<int64_t>>(x.size());
  int64_t i = 0;
  for (int64_t p = 0; p < int64_t(h) * w; ++p)
    for (int ci = 0; ci < c; ++ci) (*map)[i++] = int64_t(ci) * h * w + p;
  return gather_map(x, {h * w, c}, std::move(map));
}

Tensor rows_to_chw(const Tensor& x, int h, int w) {
  if (x.shape().size() != 2 || x.dim(0) != h * w)
    throw std::invalid_argument("rows_to_chw: shape mismatch");
  int c = x.dim(1);
  auto map = std::make_shared<std::vector<int64_t>>(x.size());
  int64_t i = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int64_t p = 0; p < int64_t(h) * w; ++p) (*map)[i++] = p * c + ci;
  return gather_map(x, {c, h, w}, std::move(map));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  int d = -1;
  int64_t rows = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 2) throw std::invalid_argument("concat_rows: rank != 2");
    if (d < 0) d = p.dim(1);
    if (p.dim(1) != d) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.dim(0);
  }
  auto out = make_node({int(rows), d}, false);
  int64_t pos = 0;
  for (const auto& p : parts) {
    out->value.segment(pos, p.size()) = p.value();
    pos += p.size();
  }
  bool rg = false;
  for (const auto& p : parts) rg = rg || p.requires_grad();
  out->requires_grad = rg;
  if (rg) {
    for (const auto& p : parts) out->parents.push_back(p.node());
    TensorNode* o = out.get();
    auto srcs = std::make_shared<std::vector<std::shared_ptr<TensorNode>>>();
    for (const auto& p : parts) srcs->push_back(p.node());
    out->backward_fn = [o, srcs]() {
      int64_t at = 0;
      for (auto& s : *srcs) {
        s->grad += o->grad.segment(at, s->size());
        at += s->size();
      }
    };
  }
  return Tensor(std::move(out));
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("l2_normalize_rows: rank != 2");
  int n = x.dim(0), d = x.dim(1);
  auto norms = std::make_shared<Eigen::VectorXd>(n);
  auto out = make_node(x.shape(), false);
  for (int i = 0; i < n; ++i) {
    double nr = x.value().segment(int64_t(i) * d, d).norm();
    if (nr <= eps || nr == 0.0)
      throw std::domain_error("l2_normalize_rows: zero-norm row " + std::to_string(i));
    (*norms)(i) = nr;
    out->value.segment(int64_t(i) * d, d) = x.value().segment(int64_t(i) * d, d) / nr;
  }
  TensorNode* o = out.get();
  TensorNode* xn = x.node().get();
  return finish(out, {x}, [=]() {
    for (int i = 0; i < n; ++i) {
      auto xi = xn->value.segment(int64_t(i) * d, d);
      auto gi = o->grad.segment(int64_t(i) * d, d);
      double nr = (*norms)(i);
      // d/dx (x/|x|) applied to gi
      xn->grad.segment(int64_t(i) * d, d) +=
          gi / nr - xi * (xi.dot(gi) / (nr * nr * nr));
    }
  });
}

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels,
                            const std::vector<uint8_t>& mask,
                            const std::vector<double>& weights) {
  if (logits.shape().size() != 2)
    throw std::invalid_argument("cross_entropy_logits: rank != 2");
  int n = logits.dim(0), k = logits.dim(1);
  if (int(labels.size()) != n)
    throw std::invalid_argument("cross_entropy_logits: label count mismatch");
  if (!mask.empty() && int(mask.size()) != n)
    throw std::invalid_argument("cross_entropy_logits: mask size mismatch");
  if (!weights.empty() && int(weights.size()) != n)
    throw std::invalid_argument("cross_entropy_logits: weight size mismatch");

  auto probs = std::make_shared<Eigen::MatrixXd>(n, k);  // softmax rows
  auto wsum = std::make_shared<double>(0.0);
  auto active = std::make_shared<std::vector<double>>(n, 0.0);  // per-row weight
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    int y = labels[i];
    if (y < 0 || y >= k)
      throw std::out_of_range("cross_entropy_logits: label out of range");
    auto row = logits.value().segment(int64_t(i) * k, k);
    double m = row.maxCoeff();
    Eigen::VectorXd e = (row.array() - m).exp();
    double z = e.sum();
    probs->row(i) = e / z;
    double wi = weights.empty() ? 1.0 : weights[i];
    (*active)[i] = wi;
    *wsum += wi;
    total += wi * (std::log(z) + m - row(y));
  }
  auto out = make_node({1}, false);
  out->value(0) = *wsum > 0 ? total / *wsum : 0.0;
  TensorNode* o = out.get();
  TensorNode* ln = logits.node().get();
  auto labels_sp = std::make_shared<std::vector<int>>(labels);
  return finish(out, {logits}, [=]() {
    if (*wsum <= 0) return;
    double g = o->grad(0) / *wsum;
    for (int i = 0; i < n; ++i) {
      double wi = (*active)[i];
      if (wi == 0.0) continue;
      auto gi = ln->grad.segment(int64_t(i) * k, k);
      gi += g * wi * probs->row(i).transpose();
      gi((*labels_sp)[i]) -= g * wi;
    }
  });
}

}  // namespace selfseg::nn
