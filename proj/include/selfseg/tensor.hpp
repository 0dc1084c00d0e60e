#pragma once

#include <Eigen/Dense>

#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

// Minimal reverse-mode autodiff over dense double tensors.
// Shapes are row-major; a tensor is a handle to a graph node, so copies
// share storage. Only what the models below need is implemented.
namespace selfseg::nn {

struct TensorNode {
  std::vector<int> shape;
  Eigen::VectorXd value;
  Eigen::VectorXd grad;  // allocated on demand during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward_fn;  // pushes this->grad into parents

  int64_t size() const { return value.size(); }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, const Eigen::VectorXd& v,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape.at(i); }
  int64_t size() const { return node_->size(); }
  double item() const;

  Eigen::VectorXd& value() { return node_->value; }
  const Eigen::VectorXd& value() const { return node_->value; }
  Eigen::VectorXd& grad() { return node_->grad; }
  const Eigen::VectorXd& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }

  // Runs reverse-mode accumulation from this scalar tensor.
  void backward();

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

int64_t shape_numel(const std::vector<int>& shape);

// Elementwise; operands must have equal shapes, or one of them is a scalar
// (size 1), which broadcasts.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_const(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp_elem(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor square(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// a: [m,k], b: [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);
// x: [n,din], w: [dout,din], b: [dout] -> [n,dout]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// rows of x scaled by s: x [n,d], s [n]
Tensor scale_rows(const Tensor& x, const Tensor& s);
Tensor row_sums(const Tensor& x);  // [n,d] -> [n]

// x: [C,H,W]; w: [O,C,k,k]; b: [O]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad);
Tensor gap(const Tensor& x);  // [C,H,W] -> [C]
Tensor interpolate_bilinear(const Tensor& x, int oh, int ow);  // [C,H,W]
Tensor crop_chw(const Tensor& x, int top, int left, int h, int w);
Tensor flip_w(const Tensor& x);  // horizontal flip of [C,H,W]
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor chw_to_rows(const Tensor& x);  // [C,H,W] -> [H*W, C]
Tensor rows_to_chw(const Tensor& x, int h, int w);  // [h*w, C] -> [C,h,w]

// Stacks 2-d tensors with equal column counts along rows.
Tensor concat_rows(const std::vector<Tensor>& parts);

// L2-normalizes each row; throws on a zero row.
Tensor l2_normalize_rows(const Tensor& x, double eps = 0.0);

// Mean of -log softmax(logits_i)[labels_i] over rows where mask is true
// (empty mask = all rows). weights, when given, reweight each row's term;
// the mean is then weighted. Throws on out-of-range labels.
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels,
                            const std::vector<uint8_t>& mask = {},
                            const std::vector<double>& weights = {});

}  // namespace selfseg::nn
