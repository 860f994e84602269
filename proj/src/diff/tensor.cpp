#include "relformer/diff/tensor.hpp"

#include <sstream>
#include <unordered_set>
#include <utility>

#include "relformer/errors.hpp"

namespace relformer::diff {

namespace {

thread_local bool grad_enabled = true;

}  // namespace

std::size_t NumElements(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string ShapeString(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
  out << ')';
  return out.str();
}

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }
bool GradEnabled() { return grad_enabled; }

template <typename T>
Tensor<T> Tensor<T>::Zeros(Shape shape, bool requires_grad) {
  return Full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::Full(Shape shape, T value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->value.assign(NumElements(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::FromData(Shape shape, std::vector<T> data, bool requires_grad) {
  if (NumElements(shape) != data.size()) {
    throw ShapeError("FromData: shape " + ShapeString(shape) + " needs " +
                     std::to_string(NumElements(shape)) + " values, got " + std::to_string(data.size()));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::Scalar(T value, bool requires_grad) {
  return FromData({}, {value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + ShapeString(shape()));
  }
  return node_->value[0];
}

template <typename T>
void Tensor<T>::ZeroGrad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
void Tensor<T>::Backward() {
  if (numel() != 1) {
    throw InvalidInput("Backward() requires a scalar output, got shape " + ShapeString(shape()));
  }
  if (!node_->requires_grad) {
    throw InvalidInput("Backward() on a tensor that does not require grad");
  }
  // Iterative post-order DFS gives a topological order from leaves to output.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order) {
    if (n->is_leaf) {
      n->EnsureGrad();
    } else {
      n->grad.assign(n->value.size(), T(0));
    }
  }
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

template <typename T>
Tensor<T> Tensor<T>::Detach(bool requires_grad) const {
  return FromData(shape(), node_->value, requires_grad);
}

template <typename T>
Tensor<T> MakeResult(const char* op, Shape shape, std::vector<T> value,
                     std::vector<Tensor<T>> parents, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
  bool needs = false;
  if (grad_enabled) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> MakeResult<float>(const char*, Shape, std::vector<float>, std::vector<Tensor<float>>,
                                         std::function<void(Node<float>&)>);
template Tensor<double> MakeResult<double>(const char*, Shape, std::vector<double>, std::vector<Tensor<double>>,
                                           std::function<void(Node<double>&)>);

}  // namespace relformer::diff
