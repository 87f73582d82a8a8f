#include "dsrei/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "dsrei/error.hpp"

namespace dsrei {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw InvalidShape("negative dimension in " + shape.str());
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = shape;
  node_->value.assign(static_cast<std::size_t>(shape.numel()), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) {
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    throw InvalidShape("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape.str());
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = shape;
  node_->value = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::from_node(NodePtr node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  static const Shape empty{};
  return node_ ? node_->shape : empty;
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
  if (!node_) return {};
  return node_->value;
}

template <typename T>
std::span<T> Tensor<T>::mutable_values() {
  if (!node_) return {};
  if (!node_->is_leaf) throw InvalidParameter("in-place write to a non-leaf tensor");
  return node_->value;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && !node_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!node_) return {};
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (!node_) return {};
  return node_->grad_buffer();
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!node_) throw InvalidParameter("set_requires_grad on an empty tensor");
  if (!node_->is_leaf) throw InvalidParameter("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = on;
  return *this;
}

template <typename T>
bool Tensor<T>::is_leaf() const {
  return !node_ || node_->is_leaf;
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw InvalidShape("backward() without a seed needs a single-element tensor, got " +
                       shape().str());
  }
  const T one = T(1);
  backward(std::span<const T>(&one, 1));
}

template <typename T>
void Tensor<T>::backward(std::span<const T> seed) const {
  using NodeT = detail::Node<T>;
  if (!node_) throw InvalidParameter("backward on an empty tensor");
  if (static_cast<std::int64_t>(seed.size()) != numel()) {
    throw InvalidShape("backward seed size does not match " + shape().str());
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodeT* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  auto& root_grad = node_->grad_buffer();
  for (std::size_t i = 0; i < seed.size(); ++i) root_grad[i] += seed[i];

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }

  for (NodeT* node : order) {
    if (node->is_leaf) continue;
    node->backward = nullptr;
    node->inputs.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw InvalidShape("item() on tensor of shape " + shape().str());
  return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
  const Shape& s = shape();
  if (n < 0 || n >= s.n || c < 0 || c >= s.c || h < 0 || h >= s.h || w < 0 || w >= s.w) {
    throw InvalidShape("index out of range for " + s.str());
  }
  return node_->value[static_cast<std::size_t>(offset(s, n, c, h, w))];
}

template <typename T>
Tensor<T> Tensor<T>::detached() const {
  if (!node_) return {};
  return Tensor(node_->shape, node_->value);
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      std::function<void(detail::Node<T>&)> backward) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = shape;
  node->value = std::move(value);
  if (GradMode::enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->is_leaf = false;
      node->inputs.reserve(inputs.size());
      for (const auto& in : inputs) node->inputs.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>::from_node(std::move(node));
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_result(Shape, std::vector<float>, const std::vector<Tensor<float>>&,
                                   std::function<void(detail::Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>,
                                    const std::vector<Tensor<double>>&,
                                    std::function<void(detail::Node<double>&)>);

}  // namespace dsrei
