#pragma once

// Dense tensors recorded on a dynamic tape for reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Ops create new nodes that keep
// their parents alive; dropping the output releases the graph.
//
// Gradient policy: Backward() accumulates into the grad buffers of leaves that
// require gradients. Callers must ZeroGrad() leaves between passes.
// Intermediate gradients are reset on every Backward() call. Higher-order
// derivatives are not supported.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace relformer::diff {

using Shape = std::vector<std::size_t>;

std::size_t NumElements(const Shape& shape);
std::string ShapeString(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  std::vector<T>& EnsureGrad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor Zeros(Shape shape, bool requires_grad = false);
  static Tensor Full(Shape shape, T value, bool requires_grad = false);
  // Throws ShapeError when data.size() != product of shape.
  static Tensor FromData(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor Scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Writes bypass the tape; use only on leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->EnsureGrad(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  const char* op() const { return node_->op; }

  T item() const;
  void ZeroGrad();

  // Throws InvalidInput unless this tensor holds exactly one element.
  void Backward();

  // Leaf copy of the value with no history.
  Tensor Detach(bool requires_grad = false) const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// While alive, ops on this thread record no history (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool GradEnabled();

// Builds an op output node. When recording is enabled and any parent requires
// grad, the node keeps its parents and the backward closure.
template <typename T>
Tensor<T> MakeResult(const char* op, Shape shape, std::vector<T> value,
                     std::vector<Tensor<T>> parents, std::function<void(Node<T>&)> backward);

}  // namespace relformer::diff
