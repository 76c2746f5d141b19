#pragma once

#include <cstddef>
#include <cstdlib>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace tcm {

/// Extent of a 4-axis (batch, channels, height, width) array.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
               static_cast<std::size_t>(w);
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Allocator with a fixed 64-byte alignment. Vectorized kernels choose
/// their peeling by pointer alignment, so a fixed alignment keeps every
/// reduction order (and therefore every result bit) independent of where
/// the heap placed a buffer.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::size_t kAlignment = 64;

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) {
        const std::size_t bytes = (n * sizeof(T) + kAlignment - 1) / kAlignment * kAlignment;
        void* p = std::aligned_alloc(kAlignment, bytes == 0 ? kAlignment : bytes);
        if (!p) throw std::bad_alloc();
        return static_cast<T*>(p);
    }
    void deallocate(T* p, std::size_t) { std::free(p); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const {
        return true;
    }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense NCHW array with value semantics.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
    Tensor(Shape shape, const std::vector<T>& values);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    AlignedVector<T>& storage() { return data_; }
    const AlignedVector<T>& storage() const { return data_; }

    std::size_t offset(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    T& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }
    T* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
    const T* plane(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }

    void fill(T v);
    /// Reinterprets the same storage under a new shape with equal element count.
    void reshape(Shape shape);

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    Shape shape_{};
    AlignedVector<T> data_;
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
bool all_finite(const Tensor<T>& t);

}  // namespace tcm
