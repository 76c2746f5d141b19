#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "tcm/tensor.hpp"

namespace tcm {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until something is accumulated
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> inputs;
    std::function<void(Node<T>&)> backward_fn;

    /// Zero-initialized gradient buffer with the value's shape.
    Tensor<T>& grad_buffer();
    void accumulate(const Tensor<T>& g);
};

/// Handle to a value in the (optional) computation graph.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }

    /// Gradient after backward(); empty tensor when nothing flowed here.
    const Tensor<T>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad = Tensor<T>(); }

    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Graph recording is on by default; NoGradGuard disables it for a scope.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Builds an op result. When no input needs a gradient (or recording is off)
/// the result is a plain leaf and `backward_fn` is dropped.
template <typename T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& inputs, std::function<void(Node<T>&)> backward_fn);

/// Back-propagates from a single-element root. Intermediate graph storage is
/// released as it is consumed; leaf gradients accumulate.
template <typename T>
void backward(const Var<T>& root);

}  // namespace tcm
