#pragma once

// Shape-tagged dense tensors of 64-bit reals with reverse-mode gradients.
//
// Every tensor is viewed as a matrix for the purpose of the kernels: the
// last dimension is the column count and all leading dimensions fold into
// rows. The first dimension indexes "items" (nodes, edges, incidences) for
// the gather/segment operations used by message passing.
//
// Operations are recorded on the innermost active Tape of the calling thread
// whenever at least one input requires a gradient. Parameters are leaves
// with requires_grad set; constants never receive gradients.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mpnflow::tk {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient flows in
  bool requires_grad = false;
  std::function<void(TensorNode&)> backward;

  std::vector<double>& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t items() const { return shape().empty() ? 1 : shape()[0]; }
  std::size_t item_size() const { return items() == 0 ? 0 : size() / items(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double at(std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& impl() const { return node_; }

  /// Value copy that does not participate in gradient flow.
  Tensor detach() const;

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  friend Tensor make_tensor(std::shared_ptr<TensorNode>);
  std::shared_ptr<TensorNode> node_;
};

Tensor make_tensor(std::shared_ptr<TensorNode> n);

/// Records operations performed on the constructing thread until destroyed.
/// Tapes nest; the innermost one is active.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();
  void record(std::shared_ptr<TensorNode> node);
  std::size_t size() const { return nodes_.size(); }

  /// Reverse accumulation from a scalar recorded on this tape.
  void backward(const Tensor& loss);

 private:
  std::vector<std::shared_ptr<TensorNode>> nodes_;
  Tape* previous_;
};

/// Backward pass on the active tape. Throws ShapeError for non-scalar loss
/// and std::logic_error when no tape is active or the loss is untracked.
void backward(const Tensor& loss);

// ---- operations ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// x[rows x k] * w[k x n] + b[n]. `b` may be undefined.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor matmul(const Tensor& x, const Tensor& w);

/// Concatenation along the last dimension; leading dimensions must agree.
Tensor concat_cols(const std::vector<Tensor>& parts);

/// Picks items (first-dimension slices) by index; repeats allowed.
Tensor gather_items(const Tensor& x, std::span<const std::size_t> index);

/// out[s] = sum of x[e] over items e with segment[e] == s. Empty segments
/// give exact zeros. The forward sum is independent of item order.
Tensor segment_sum(const Tensor& x, std::span<const std::size_t> segment, std::size_t segments);

/// Multiplies item e of x by the scalar weights[e]; weights has one value per item.
Tensor scale_items(const Tensor& x, const Tensor& weights);

/// Softmax of per-item logits (shape {E} or {E,1}) within each segment.
Tensor segment_softmax(const Tensor& logits, std::span<const std::size_t> segment,
                       std::size_t segments);

/// Zero-padded same-size 2-D cross-correlation. x has shape {n,H,W,Cin},
/// w has shape {k,k,Cin,Cout}, b has shape {Cout} (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);

/// Sum over elements of weight * binary cross-entropy(p, target), with p
/// clamped to [eps, 1-eps]. Targets and weights are constants.
Tensor weighted_bce(const Tensor& p, std::span<const double> target, std::span<const double> weight,
                    double eps = 1e-7);

}  // namespace mpnflow::tk
