#include "mpnflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mpnflow/error.hpp"
#include "mpnflow/kernels.hpp"

namespace mpnflow::tk {

namespace {

thread_local Tape* g_active_tape = nullptr;

using Backward = std::function<void(TensorNode&)>;

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Wraps a freshly computed value. The backward closure is attached, and the
// node recorded, only when a tape is active and some input needs a gradient.
Tensor finish(Shape shape, std::vector<double> value, std::initializer_list<const Tensor*> inputs,
              Backward backward) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  Tape* tape = Tape::active();
  if (tape != nullptr && any_requires_grad(inputs)) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    tape->record(node);
  }
  return make_tensor(node);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

std::vector<double>* grad_of(const std::shared_ptr<TensorNode>& n) {
  return n->requires_grad ? &n->ensure_grad() : nullptr;
}

// Members of each segment, in item order.
std::vector<std::vector<std::size_t>> segment_members(std::span<const std::size_t> segment,
                                                      std::size_t segments) {
  std::vector<std::vector<std::size_t>> members(segments);
  for (std::size_t e = 0; e < segment.size(); ++e) {
    if (segment[e] >= segments) throw ShapeError("segment index out of range");
    members[segment[e]].push_back(e);
  }
  return members;
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<double>& TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor make_tensor(std::shared_ptr<TensorNode> n) { return Tensor(std::move(n)); }

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = element_count(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (element_count(shape) != values.size()) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + to_string(shape));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(node);
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

std::size_t Tensor::rows() const {
  const Shape& s = shape();
  if (s.empty()) return 1;
  return s.back() == 0 ? 0 : size() / s.back();
}

std::size_t Tensor::cols() const { return shape().empty() ? 1 : shape().back(); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

Tensor Tensor::detach() const { return constant(shape(), node_->value); }

// ---- tape ------------------------------------------------------------------

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<TensorNode> node) { nodes_.push_back(std::move(node)); }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad() || !loss.node()->backward) {
    throw std::logic_error("backward: loss is not recorded on the tape");
  }
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    TensorNode& n = **it;
    if (!n.grad.empty() && n.backward) n.backward(n);
  }
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw std::logic_error("backward: no active tape");
  tape->backward(loss);
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  auto pa = a.impl(), pb = b.impl();
  return finish(a.shape(), std::move(out), {&a, &b}, [pa, pb](TensorNode& o) {
    for (auto* g : {grad_of(pa), grad_of(pb)}) {
      if (g == nullptr) continue;
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  auto pa = a.impl(), pb = b.impl();
  return finish(a.shape(), std::move(out), {&a, &b}, [pa, pb](TensorNode& o) {
    if (auto* g = grad_of(pa)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
    }
    if (auto* g = grad_of(pb)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  auto pa = a.impl(), pb = b.impl();
  return finish(a.shape(), std::move(out), {&a, &b}, [pa, pb](TensorNode& o) {
    if (auto* g = grad_of(pa)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i] * pb->value[i];
    }
    if (auto* g = grad_of(pb)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i] * pa->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  auto pa = a.impl();
  return finish(a.shape(), std::move(out), {&a}, [pa, factor](TensorNode& o) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * factor;
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  auto pa = a.impl();
  return finish({1}, {s}, {&a}, [pa](TensorNode& o) {
    auto& g = pa->ensure_grad();
    for (double& v : g) v += o.grad[0];
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.at(i) * b.at(i);
  auto pa = a.impl(), pb = b.impl();
  return finish({1}, {s}, {&a, &b}, [pa, pb](TensorNode& o) {
    if (auto* g = grad_of(pa)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[0] * pb->value[i];
    }
    if (auto* g = grad_of(pb)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[0] * pa->value[i];
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) > 0.0 ? x.at(i) : 0.0;
  auto px = x.impl();
  return finish(x.shape(), std::move(out), {&x}, [px](TensorNode& o) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (px->value[i] > 0.0) g[i] += o.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x.at(i)));
  auto px = x.impl();
  return finish(x.shape(), std::move(out), {&x}, [px](TensorNode& o) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = o.value[i];
      g[i] += o.grad[i] * s * (1.0 - s);
    }
  });
}

// ---- dense -----------------------------------------------------------------

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t rows = x.rows(), inner = x.cols();
  if (w.shape().size() != 2 || w.shape()[0] != inner) {
    throw ShapeError("affine: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(w.shape()));
  }
  const std::size_t cols = w.shape()[1];
  if (b.defined() && b.size() != cols) {
    throw ShapeError("affine: bias " + to_string(b.shape()) + " incompatible with weight " +
                     to_string(w.shape()));
  }
  std::vector<double> out(rows * cols, 0.0);
  if (b.defined()) {
    for (std::size_t i = 0; i < rows; ++i) std::copy_n(b.values().data(), cols, out.data() + i * cols);
  }
  kernels::gemm_nn(x.values(), w.values(), out, rows, inner, cols);

  Shape shape = x.shape();
  if (shape.empty()) shape = {1};
  shape.back() = cols;
  auto px = x.impl(), pw = w.impl();
  auto pb = b.defined() ? b.impl() : nullptr;
  return finish(std::move(shape), std::move(out), {&x, &w, &b},
                [px, pw, pb, rows, inner, cols](TensorNode& o) {
                  if (auto* g = grad_of(px)) kernels::gemm_nt(o.grad, pw->value, *g, rows, cols, inner);
                  if (auto* g = grad_of(pw)) kernels::gemm_tn(px->value, o.grad, *g, rows, inner, cols);
                  if (pb != nullptr) {
                    if (auto* g = grad_of(pb)) {
                      for (std::size_t i = 0; i < rows; ++i) {
                        for (std::size_t j = 0; j < cols; ++j) (*g)[j] += o.grad[i * cols + j];
                      }
                    }
                  }
                });
}

Tensor matmul(const Tensor& x, const Tensor& w) { return affine(x, w, Tensor()); }

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  Shape lead = parts.front().shape();
  lead.pop_back();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape l = p.shape();
    l.pop_back();
    if (l != lead) {
      throw ShapeError("concat_cols: shape mismatch " + to_string(parts.front().shape()) + " vs " +
                       to_string(p.shape()));
    }
    total += p.cols();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy_n(p.values().data() + i * c, c, out.data() + i * total + offset);
    }
    offset += c;
  }
  Shape shape = lead;
  shape.push_back(total);

  std::vector<std::shared_ptr<TensorNode>> inputs;
  const Tensor* tracked = nullptr;  // any input needing a gradient
  for (const Tensor& p : parts) {
    inputs.push_back(p.impl());
    if (p.requires_grad()) tracked = &p;
  }
  return finish(std::move(shape), std::move(out), {tracked}, [inputs, rows, total](TensorNode& o) {
    std::size_t off = 0;
    for (const auto& in : inputs) {
      const std::size_t c = in->shape.back();
      if (auto* g = grad_of(in)) {
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += o.grad[i * total + off + j];
        }
      }
      off += c;
    }
  });
}

// ---- item-wise gather / scatter ---------------------------------------------

Tensor gather_items(const Tensor& x, std::span<const std::size_t> index) {
  const std::size_t isz = x.item_size();
  std::vector<double> out(index.size() * isz);
  for (std::size_t e = 0; e < index.size(); ++e) {
    if (index[e] >= x.items()) throw ShapeError("gather_items: index out of range");
    std::copy_n(x.values().data() + index[e] * isz, isz, out.data() + e * isz);
  }
  Shape shape = x.shape();
  shape[0] = index.size();
  auto px = x.impl();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return finish(std::move(shape), std::move(out), {&x}, [px, idx, isz](TensorNode& o) {
    auto& g = px->ensure_grad();
    for (std::size_t e = 0; e < idx.size(); ++e) {
      for (std::size_t k = 0; k < isz; ++k) g[idx[e] * isz + k] += o.grad[e * isz + k];
    }
  });
}

Tensor segment_sum(const Tensor& x, std::span<const std::size_t> segment, std::size_t segments) {
  if (segment.size() != x.items()) {
    throw ShapeError("segment_sum: " + std::to_string(segment.size()) + " segment ids for tensor " +
                     to_string(x.shape()));
  }
  const std::size_t isz = x.item_size();
  const auto members = segment_members(segment, segments);
  std::vector<double> out(segments * isz, 0.0);
  std::vector<double> buf;
  for (std::size_t s = 0; s < segments; ++s) {
    const auto& m = members[s];
    if (m.empty()) continue;
    buf.resize(m.size());
    for (std::size_t k = 0; k < isz; ++k) {
      for (std::size_t t = 0; t < m.size(); ++t) buf[t] = x.at(m[t] * isz + k);
      out[s * isz + k] = kernels::order_invariant_sum(buf);
    }
  }
  Shape shape = x.shape();
  shape[0] = segments;
  auto px = x.impl();
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  return finish(std::move(shape), std::move(out), {&x}, [px, seg, isz](TensorNode& o) {
    auto& g = px->ensure_grad();
    for (std::size_t e = 0; e < seg.size(); ++e) {
      for (std::size_t k = 0; k < isz; ++k) g[e * isz + k] += o.grad[seg[e] * isz + k];
    }
  });
}

Tensor scale_items(const Tensor& x, const Tensor& weights) {
  if (weights.size() != x.items()) {
    throw ShapeError("scale_items: weights " + to_string(weights.shape()) + " vs tensor " +
                     to_string(x.shape()));
  }
  const std::size_t isz = x.item_size();
  std::vector<double> out(x.size());
  for (std::size_t e = 0; e < x.items(); ++e) {
    for (std::size_t k = 0; k < isz; ++k) out[e * isz + k] = weights.at(e) * x.at(e * isz + k);
  }
  auto px = x.impl(), pw = weights.impl();
  return finish(x.shape(), std::move(out), {&x, &weights}, [px, pw, isz](TensorNode& o) {
    const std::size_t items = pw->value.size();
    if (auto* g = grad_of(px)) {
      for (std::size_t e = 0; e < items; ++e) {
        for (std::size_t k = 0; k < isz; ++k) (*g)[e * isz + k] += o.grad[e * isz + k] * pw->value[e];
      }
    }
    if (auto* g = grad_of(pw)) {
      for (std::size_t e = 0; e < items; ++e) {
        double s = 0.0;
        for (std::size_t k = 0; k < isz; ++k) s += o.grad[e * isz + k] * px->value[e * isz + k];
        (*g)[e] += s;
      }
    }
  });
}

Tensor segment_softmax(const Tensor& logits, std::span<const std::size_t> segment,
                       std::size_t segments) {
  if (logits.size() != segment.size() || logits.size() != logits.items()) {
    throw ShapeError("segment_softmax: expected one logit per item, got " + to_string(logits.shape()));
  }
  const auto members = segment_members(segment, segments);
  std::vector<double> out(logits.size(), 0.0);
  std::vector<double> buf;
  for (const auto& m : members) {
    if (m.empty()) continue;
    double mx = -INFINITY;
    for (std::size_t e : m) mx = std::max(mx, logits.at(e));
    buf.resize(m.size());
    for (std::size_t t = 0; t < m.size(); ++t) buf[t] = std::exp(logits.at(m[t]) - mx);
    std::vector<double> tmp = buf;
    const double z = kernels::order_invariant_sum(tmp);
    for (std::size_t t = 0; t < m.size(); ++t) out[m[t]] = buf[t] / z;
  }
  auto pl = logits.impl();
  return finish(logits.shape(), std::move(out), {&logits}, [pl, members](TensorNode& o) {
    auto& g = pl->ensure_grad();
    for (const auto& m : members) {
      double inner = 0.0;
      for (std::size_t e : m) inner += o.value[e] * o.grad[e];
      for (std::size_t e : m) g[e] += o.value[e] * (o.grad[e] - inner);
    }
  });
}

// ---- convolution -------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[0] != ws[1] || ws[0] % 2 == 0 || ws[2] != xs[3]) {
    throw ShapeError("conv2d: input " + to_string(xs) + " incompatible with kernel " + to_string(ws));
  }
  kernels::ConvGeometry geo{xs[0], xs[1], xs[2], xs[3], ws[0]};
  const std::size_t cout = ws[3];
  if (b.defined() && b.size() != cout) {
    throw ShapeError("conv2d: bias " + to_string(b.shape()) + " incompatible with kernel " +
                     to_string(ws));
  }
  const std::size_t pixels = geo.pixels(), patch = geo.patch();
  std::vector<double> cols(pixels * patch);
  kernels::im2col(x.values(), cols, geo);
  std::vector<double> out(pixels * cout, 0.0);
  if (b.defined()) {
    for (std::size_t p = 0; p < pixels; ++p) std::copy_n(b.values().data(), cout, out.data() + p * cout);
  }
  kernels::gemm_nn(cols, w.values(), out, pixels, patch, cout);

  auto px = x.impl(), pw = w.impl();
  auto pb = b.defined() ? b.impl() : nullptr;
  return finish({xs[0], xs[1], xs[2], cout}, std::move(out), {&x, &w, &b},
                [px, pw, pb, geo, cout](TensorNode& o) {
                  const std::size_t pixels = geo.pixels(), patch = geo.patch();
                  if (pw->requires_grad) {
                    std::vector<double> cols(pixels * patch);
                    kernels::im2col(px->value, cols, geo);
                    kernels::gemm_tn(cols, o.grad, pw->ensure_grad(), pixels, patch, cout);
                  }
                  if (px->requires_grad) {
                    std::vector<double> dcols(pixels * patch, 0.0);
                    kernels::gemm_nt(o.grad, pw->value, dcols, pixels, cout, patch);
                    kernels::col2im(dcols, px->ensure_grad(), geo);
                  }
                  if (pb != nullptr && pb->requires_grad) {
                    auto& g = pb->ensure_grad();
                    for (std::size_t p = 0; p < pixels; ++p) {
                      for (std::size_t c = 0; c < cout; ++c) g[c] += o.grad[p * cout + c];
                    }
                  }
                });
}

// ---- loss ----------------------------------------------------------------------

Tensor weighted_bce(const Tensor& p, std::span<const double> target, std::span<const double> weight,
                    double eps) {
  if (target.size() != p.size() || weight.size() != p.size()) {
    throw ShapeError("weighted_bce: " + std::to_string(target.size()) + " targets and " +
                     std::to_string(weight.size()) + " weights for tensor " + to_string(p.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (weight[i] == 0.0) continue;
    const double q = std::clamp(p.at(i), eps, 1.0 - eps);
    s += weight[i] * -(target[i] * std::log(q) + (1.0 - target[i]) * std::log(1.0 - q));
  }
  auto pp = p.impl();
  std::vector<double> y(target.begin(), target.end()), w(weight.begin(), weight.end());
  return finish({1}, {s}, {&p}, [pp, y, w, eps](TensorNode& o) {
    auto& g = pp->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = pp->value[i];
      if (w[i] == 0.0 || v < eps || v > 1.0 - eps) continue;  // clamped: flat
      g[i] += o.grad[0] * w[i] * (-y[i] / v + (1.0 - y[i]) / (1.0 - v));
    }
  });
}

}  // namespace mpnflow::tk
