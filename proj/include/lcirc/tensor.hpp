#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "lcirc/errors.hpp"

namespace lcirc {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Shape = std::vector<std::int64_t>;
using TokenId = std::int32_t;

std::string shape_to_string(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

// Gradient recording switch, one per thread.
bool grad_enabled();

/// Disables graph recording for its lifetime (thread-local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Multiply-accumulate counter fed by matmul and attention forward passes.
/// Thread-local, so concurrent streams count independently.
struct MacCounter {
  static std::uint64_t value();
  static void reset();
  static void add(std::uint64_t macs);
};

namespace detail {

void set_grad_enabled(bool on);

template <typename Scalar>
struct Node {
  using Mat = Matrix<Scalar>;

  Shape shape;
  // Row-major storage viewed as (product of leading dims) x (last dim).
  Mat value;
  Mat grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Mat&)> backward;

  void accumulate(const Mat& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

inline std::int64_t leading_rows(const Shape& shape) {
  if (shape.empty()) return 1;
  return std::accumulate(shape.begin(), shape.end() - 1, std::int64_t{1}, std::multiplies<>());
}

inline std::int64_t last_dim(const Shape& shape) { return shape.empty() ? 1 : shape.back(); }

}  // namespace detail

/// Dense row-major tensor with an optional reverse-mode autodiff node.
///
/// Copies of a Tensor share the same node (handles), but no operation ever
/// writes into an input's storage: every op allocates its own output. The only
/// in-place mutations are on leaves through `mutable_value`, which optimizers
/// and checkpoint loading use.
template <typename Scalar>
class Tensor {
 public:
  using Mat = Matrix<Scalar>;
  using NodePtr = std::shared_ptr<detail::Node<Scalar>>;

  Tensor() : Tensor(Shape{0}, Mat(1, 0)) {}

  Tensor(Shape shape, Mat value) : node_(std::make_shared<detail::Node<Scalar>>()) {
    if (detail::leading_rows(shape) != value.rows() || detail::last_dim(shape) != value.cols()) {
      throw DimensionError("tensor storage " + std::to_string(value.rows()) + "x" +
                           std::to_string(value.cols()) + " does not match shape " +
                           shape_to_string(shape));
    }
    for (auto d : shape) {
      if (d < 0) throw DimensionError("negative dimension in shape " + shape_to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(value);
  }

  explicit Tensor(Mat value) : node_(std::make_shared<detail::Node<Scalar>>()) {
    node_->shape = Shape{value.rows(), value.cols()};
    node_->value = std::move(value);
  }

  static Tensor zeros(Shape shape) {
    const auto r = detail::leading_rows(shape);
    const auto c = detail::last_dim(shape);
    return Tensor(std::move(shape), Mat::Zero(r, c));
  }

  static Tensor full(Shape shape, Scalar v) {
    const auto r = detail::leading_rows(shape);
    const auto c = detail::last_dim(shape);
    return Tensor(std::move(shape), Mat::Constant(r, c, v));
  }

  static Tensor scalar(Scalar v) { return Tensor(Shape{}, Mat::Constant(1, 1, v)); }

  static Tensor from_vector(Shape shape, std::span<const Scalar> data) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
      throw DimensionError("data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_to_string(shape));
    }
    Mat m(detail::leading_rows(shape), detail::last_dim(shape));
    std::copy(data.begin(), data.end(), m.data());
    return Tensor(std::move(shape), std::move(m));
  }

  /// Leaf tensor that accumulates gradients.
  static Tensor parameter(Shape shape, Mat value) {
    Tensor t(std::move(shape), std::move(value));
    t.node_->requires_grad = true;
    return t;
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::int64_t numel() const { return node_->value.size(); }
  std::int64_t rows() const { return node_->value.rows(); }
  std::int64_t cols() const { return node_->value.cols(); }
  std::int64_t dim(std::size_t axis) const { return node_->shape.at(axis); }

  const Mat& value() const { return node_->value; }
  std::span<const Scalar> data() const {
    return {node_->value.data(), static_cast<std::size_t>(node_->value.size())};
  }
  Scalar item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_to_string(shape()));
    return node_->value(0, 0);
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  void set_requires_grad(bool on) {
    if (!node_->is_leaf) throw ContractError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = on;
    if (!on) node_->grad.resize(0, 0);
  }

  bool has_grad() const { return node_->grad.size() != 0; }
  /// Accumulated gradient; zeros of the value's size when none has arrived.
  Mat grad() const {
    if (!has_grad()) return Mat::Zero(node_->value.rows(), node_->value.cols());
    return node_->grad;
  }
  void zero_grad() { node_->grad.resize(0, 0); }

  /// In-place access for optimizers and loaders. Leaves only.
  Mat& mutable_value() {
    if (!node_->is_leaf) throw ContractError("mutable_value on a non-leaf tensor");
    return node_->value;
  }

  /// Reverse-mode sweep from a scalar output.
  void backward() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const NodePtr& node() const { return node_; }

  /// Internal constructor used by ops.
  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  NodePtr node_;
};

namespace detail {

/// Wraps an op result. When grad recording is on and some input requires
/// grad, the result records `backward` and keeps the inputs alive.
template <typename Scalar, typename Fn>
Tensor<Scalar> make_result(Shape shape, Matrix<Scalar> value,
                           std::initializer_list<const Tensor<Scalar>*> inputs, Fn&& backward) {
  Tensor<Scalar> out(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto* in : inputs) any = any || in->requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.is_leaf = false;
  for (const auto* in : inputs) node.parents.push_back(in->node());
  node.backward = std::forward<Fn>(backward);
  return out;
}

template <typename Scalar>
Tensor<Scalar> make_result_n(Shape shape, Matrix<Scalar> value,
                             std::span<const Tensor<Scalar>> inputs,
                             std::function<void(const Matrix<Scalar>&)> backward) {
  Tensor<Scalar> out(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.is_leaf = false;
  for (const auto& in : inputs) node.parents.push_back(in.node());
  node.backward = std::move(backward);
  return out;
}

}  // namespace detail

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  if (numel() != 1) {
    throw ContractError("backward() requires a scalar output, got shape " +
                        shape_to_string(shape()));
  }
  if (!requires_grad()) return;
  using NodeT = detail::Node<Scalar>;
  // Iterative post-order DFS for a topological ordering.
  std::vector<NodeT*> order;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  std::unordered_set<NodeT*> visited{node_.get()};
  stack.emplace_back(node_.get(), 0);
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      NodeT* p = n->parents[idx++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->accumulate(Mat::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->backward && n->grad.size() != 0) {
      n->backward(n->grad);
      if (!n->is_leaf) n->grad.resize(0, 0);
    }
  }
}

// ---------------------------------------------------------------------------
// Operations. All are free functions returning fresh tensors.

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s);
/// `a * s` where `s` is a one-element tensor; differentiable in both.
template <typename Scalar>
Tensor<Scalar> scale_by(const Tensor<Scalar>& a, const Tensor<Scalar>& s);
/// Adds `bias[d]` to every row of `a[..., d]`.
template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& a, const Tensor<Scalar>& bias);
template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& bias, Scalar eps);
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const TokenId> targets);
/// Concatenation along axis 0 or the last axis (-1 or rank-1).
template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> parts, int axis = 0);
/// Half-open range [begin, end) along axis 0 or the last axis.
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& a, int axis, std::int64_t begin, std::int64_t end);
template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape);
template <typename Scalar>
Tensor<Scalar> embedding_lookup(const Tensor<Scalar>& table, std::span<const TokenId> ids);
/// Identity forward, no gradient backward.
template <typename Scalar>
Tensor<Scalar> detach(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a);

/// Multi-head scaled dot-product attention.
///
/// q is n x D, k and v are m x D, D divisible by `heads`. With `causal`, query
/// row i sees key rows j <= i + (m - n). Empty keys (m == 0) give zeros.
template <typename Scalar>
Tensor<Scalar> attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k,
                         const Tensor<Scalar>& v, int heads, bool causal);

/// `x W + b` on the last axis.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias) {
  return add_bias(matmul(x, weight), bias);
}

}  // namespace lcirc

#include "lcirc/tensor_ops.inl"
