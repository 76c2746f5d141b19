#include "tcm/autograd.hpp"

#include <unordered_set>

#include "tcm/errors.hpp"

namespace tcm {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape());
    return grad;
}

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
    if (g.size() != value.size()) throw ConfigError("gradient size mismatch for " + value.shape().str());
    if (grad.empty()) {
        grad = g;
        grad.reshape(value.shape());
        return;
    }
    T* dst = grad.data();
    const T* src = g.data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

template <typename T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& inputs, std::function<void(Node<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    if (grad_enabled()) {
        for (const auto& in : inputs) {
            if (in.requires_grad()) {
                node->requires_grad = true;
                break;
            }
        }
    }
    if (node->requires_grad) {
        node->inputs.reserve(inputs.size());
        for (const auto& in : inputs) node->inputs.push_back(in.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Var<T>(std::move(node));
}

template <typename T>
void backward(const Var<T>& root) {
    if (!root.requires_grad()) return;
    if (root.value().size() != 1) throw ConfigError("backward() needs a single-element root");

    // Iterative post-order DFS gives a topological order.
    // Nodes are held by shared_ptr here because releasing a consumer's inputs
    // may drop the last other reference.
    std::vector<std::shared_ptr<Node<T>>> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            std::shared_ptr<Node<T>> child = node->inputs[next++];
            if (child && child->requires_grad && visited.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
        } else {
            order.push_back(std::move(node));
            stack.pop_back();
        }
    }

    Tensor<T> seed(root.value().shape(), T(1));
    root.node()->accumulate(seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = it->get();
        if (!node->backward_fn) continue;
        if (!node->grad.empty()) node->backward_fn(*node);
        node->backward_fn = nullptr;
        node->inputs.clear();
        node->grad = Tensor<T>();
        it->reset();
    }
}

template struct Node<float>;
template struct Node<double>;
template class Var<float>;
template class Var<double>;
template Var<float> make_result(Tensor<float>, const std::vector<Var<float>>&, std::function<void(Node<float>&)>);
template Var<double> make_result(Tensor<double>, const std::vector<Var<double>>&, std::function<void(Node<double>&)>);
template void backward(const Var<float>&);
template void backward(const Var<double>&);

}  // namespace tcm
