#include "tcm/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "tcm/errors.hpp"

namespace tcm {

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, const std::vector<T>& values) : shape_(shape), data_(values.begin(), values.end()) {
    if (data_.size() != shape_.numel()) throw ConfigError("tensor storage does not match shape " + shape_.str());
}

template <typename T>
void Tensor<T>::fill(T v) {
    std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
    if (shape.numel() != data_.size()) throw ConfigError("reshape " + shape_.str() + " -> " + shape.str());
    shape_ = shape;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw ConfigError("max_abs_diff shape mismatch");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    return std::all_of(t.storage().begin(), t.storage().end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);
template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);

}  // namespace tcm
