#ifndef MMNAS_AUTODIFF_HPP
#define MMNAS_AUTODIFF_HPP

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mmnas/search_space.hpp"
#include "mmnas/tensor.hpp"

namespace mmnas {

// One record on the reverse-mode tape. Leaves have no backward function;
// trainable leaves (parameters) set requires_grad.
template <class T>
struct Node {
  const char* op = "leaf";
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  // Zero-initialized gradient buffer shaped like `value`.
  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }
  static Var parameter(Tensor<T> value) {
    Var v = constant(std::move(value));
    v.node_->requires_grad = true;
    return v;
  }

  explicit operator bool() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensor<T>(); }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Disables tape recording on this thread for its lifetime (evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

// Reverse sweep from a scalar root. Nodes are visited in reverse topological
// order (depth-first post-order over inputs in insertion order), each once.
template <class T>
void backward(const Var<T>& root);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> add_n(std::span<const Var<T>> terms);

// Cross-correlation. bias may be an empty Var.
template <class T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, int stride,
              int padding);

// One k x k filter per channel; weight is C x 1 x k x k.
template <class T>
Var<T> depthwise_conv2d(const Var<T>& input, const Var<T>& weight, int stride, int padding);

// Depthwise k x k (no bias) then pointwise 1 x 1 with bias.
template <class T>
Var<T> sep_conv2d(const Var<T>& input, const Var<T>& depthwise, const Var<T>& pointwise,
                  const Var<T>& bias, int padding);

// Padding cells never win the max; ties go to the first position in scan order.
template <class T>
Var<T> max_pool2d(const Var<T>& input, int kernel, int stride, int padding);

// Divides by the number of in-bounds cells of each window.
template <class T>
Var<T> avg_pool2d(const Var<T>& input, int kernel, int stride, int padding);

// N x C x H x W -> N x C
template <class T>
Var<T> global_avg_pool(const Var<T>& input);

// input N x F, weight H x F, bias H (or empty) -> N x H
template <class T>
Var<T> linear(const Var<T>& input, const Var<T>& weight, const Var<T>& bias);

template <class T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);

template <class T>
Var<T> relu(const Var<T>& x);
template <class T>
Var<T> tanh(const Var<T>& x);
template <class T>
Var<T> sigmoid(const Var<T>& x);
template <class T>
Var<T> activate(const Var<T>& x, ActivationKind kind);

// Mean over the batch of -log softmax(logits)[label].
template <class T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels);

// sum(a * b) as a scalar; b is usually a constant.
template <class T>
Var<T> sum_product(const Var<T>& a, const Var<T>& b);

}  // namespace mmnas

#endif  // MMNAS_AUTODIFF_HPP
