#pragma once

// Dense rank-4 tensors (batch, channel, row, col) with a reverse-mode
// differentiation record.
//
// A Tensor is a cheap handle onto an immutable value node. Operations that
// see at least one input requiring gradients (and run while GradMode is
// enabled) record their inputs and a backward closure on the result node.
// Calling backward() on a result topologically orders the recorded nodes
// and replays the closures in reverse, summing gradients on fan-out. The
// recorded graph is released afterwards; leaf gradients are kept until
// zero_grad().

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dsrei {

struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  constexpr std::int64_t numel() const { return n * c * h * w; }
  constexpr std::int64_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
  std::string str() const;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Thread-local switch for graph recording.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::int64_t numel() const { return shape().numel(); }

  std::span<const T> values() const;
  /// In-place access; only legal on leaves (parameters, inputs).
  std::span<T> mutable_values();

  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;

  /// Seeds d(self)/d(self) = 1; self must hold one element.
  void backward() const;
  void backward(std::span<const T> seed) const;

  T item() const;
  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

  /// Value copy with no graph history.
  Tensor detached() const;

  template <typename U>
  Tensor<U> cast() const {
    auto src = values();
    return Tensor<U>(shape(), std::vector<U>(src.begin(), src.end()));
  }

  const NodePtr& node() const { return node_; }
  static Tensor from_node(NodePtr node);

 private:
  NodePtr node_;
};

/// Builds an op result. Records a backward closure only when grad mode is on
/// and some input requires gradients.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(detail::Node<T>&)> backward);

inline std::int64_t offset(const Shape& s, std::int64_t n, std::int64_t c,
                           std::int64_t h, std::int64_t w) {
  return ((n * s.c + c) * s.h + h) * s.w + w;
}

}  // namespace dsrei
