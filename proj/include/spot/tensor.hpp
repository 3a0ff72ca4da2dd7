#pragma once

#include <Eigen/Core>

#include <atomic>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "spot/rng.hpp"
#include "spot/shape.hpp"

namespace spot {

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
using RowMatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

/// One node of the reverse-mode graph. Values are written once at forward
/// time; `grad` is filled during the single backward pass that may consume
/// the node.
template <typename S>
struct TensorNode {
  Shape shape;
  ArrayX<S> value;
  ArrayX<S> grad;  // empty until backward reaches this node
  bool requires_grad = false;
  std::uint64_t pass = 0;  // backward pass that visited this node; 0 = none
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into the parents it captured.
  std::function<void(const ArrayX<S>&)> backprop;

  void accumulate(const ArrayX<S>& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
  void ensure_grad() {
    if (grad.size() == 0) grad = ArrayX<S>::Zero(value.size());
  }
};

}  // namespace detail

/// Dense N-d array (NCHW for images) participating in a reverse-mode graph.
/// Copies are cheap handles to a shared node.
template <typename S>
class Tensor {
 public:
  using Node = detail::TensorNode<S>;

  Tensor() = default;

  static Tensor zeros(const Shape& shape) {
    return from_array(shape, ArrayX<S>::Zero(shape.count()));
  }

  static Tensor full(const Shape& shape, S v) {
    return from_array(shape, ArrayX<S>::Constant(shape.count(), v));
  }

  static Tensor from_array(const Shape& shape, ArrayX<S> data) {
    if (shape.count() != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape.str());
    auto node = std::make_shared<Node>();
    node->shape = shape;
    node->value = std::move(data);
    return Tensor(std::move(node));
  }

  static Tensor from_values(const Shape& shape, std::initializer_list<S> vals) {
    ArrayX<S> a(static_cast<Eigen::Index>(vals.size()));
    Eigen::Index i = 0;
    for (S v : vals) a[i++] = v;
    return from_array(shape, std::move(a));
  }

  /// Leaf with requires_grad set; the usual way to make a parameter.
  static Tensor param(const Shape& shape, ArrayX<S> data) {
    Tensor t = from_array(shape, std::move(data));
    t.node_->requires_grad = true;
    return t;
  }

  static Tensor randn(const Shape& shape, Rng& rng, S stddev = S(1)) {
    ArrayX<S> a(shape.count());
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = static_cast<S>(rng.normal()) * stddev;
    return from_array(shape, std::move(a));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t size() const { return node_->value.size(); }

  const ArrayX<S>& values() const { return node_->value; }

  /// In-place access for optimizer updates and loaders. Must not be used on
  /// tensors that sit inside a live graph.
  ArrayX<S>& raw_values() { return node_->value; }

  S item() const {
    if (size() != 1) throw GraphError("item() requires a scalar tensor, shape " + shape().str());
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return node_->grad.size() != 0; }

  /// Accumulated gradient; zeros when backward never reached this tensor.
  ArrayX<S> grad() const {
    if (node_->grad.size() == 0) return ArrayX<S>::Zero(node_->value.size());
    return node_->grad;
  }

  void zero_grad() {
    node_->grad.resize(0);
    node_->pass = 0;
  }

  /// Same values, fresh node outside any graph.
  Tensor detach() const {
    auto node = std::make_shared<Node>();
    node->shape = node_->shape;
    node->value = node_->value;
    return Tensor(std::move(node));
  }

  std::shared_ptr<Node>& node() { return node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

  /// Internal: result node wiring for ops.
  static Tensor make_result(Shape shape, ArrayX<S> value,
                            std::vector<std::shared_ptr<Node>> parents,
                            std::function<void(const ArrayX<S>&)> backprop) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    node->requires_grad = needs;
    if (needs) {
      node->parents = std::move(parents);
      node->backprop = std::move(backprop);
    }
    return Tensor(std::move(node));
  }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

/// Reverse-mode sweep from a scalar loss. Every parameter reachable from
/// the loss receives its exact gradient (accumulated across uses); tensors
/// the loss does not depend on keep a zero gradient. A graph supports one
/// sweep; a second call on the same graph is rejected.
template <typename S>
void backward(const Tensor<S>& loss) {
  using Node = detail::TensorNode<S>;
  if (!loss.defined() || loss.size() != 1)
    throw GraphError("backward requires a scalar loss" +
                     (loss.defined() ? std::string(", got shape ") + loss.shape().str() : ""));
  static std::atomic<std::uint64_t> pass_counter{0};
  const std::uint64_t pass_id = ++pass_counter;

  Node* root = loss.node().get();
  if (root->pass != 0)
    throw GraphError("backward already ran on this graph; double-backward is unsupported");
  if (!root->requires_grad) {
    root->pass = pass_id;
    return;  // loss depends on no parameter; all grads stay zero
  }

  // Post-order over the requires_grad subgraph. Revisits within this pass
  // (diamonds) dedupe silently; interior nodes left over from an earlier
  // pass mean a tensor was reused across graphs and are rejected.
  std::vector<Node*> order;
  std::vector<std::pair<Node*, std::size_t>> stack;
  auto mark = [pass_id](Node* n) {
    if (n->pass == pass_id) return false;
    if (n->pass != 0 && n->backprop)
      throw GraphError(
          "graph node (shape " + n->shape.str() +
          ") already used by a previous backward pass; "
          "a tensor participates in at most one backward pass per graph");
    n->pass = pass_id;
    return true;
  };
  mark(root);
  stack.emplace_back(root, 0);
  while (!stack.empty()) {
    Node* n = stack.back().first;
    bool descended = false;
    while (stack.back().second < n->parents.size()) {
      Node* p = n->parents[stack.back().second++].get();
      if (p->requires_grad && mark(p)) {
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (!descended) {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root->grad = ArrayX<S>::Ones(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() != 0) n->backprop(n->grad);
  }
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace spot
