#pragma once

#include <vector>

#include "tcm/autograd.hpp"

namespace tcm {

/// Gradient policy at a clamp boundary. kPassThrough lets gradients through
/// whenever following them would move the value back above the bound, which
/// keeps floored rate terms trainable; kExact is the true derivative.
enum class BoundGradient { kPassThrough, kExact };

namespace ops {

template <typename T>
Var<T> constant(Tensor<T> value) {
    return Var<T>(std::move(value), false);
}

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> add_scalar(const Var<T>& a, T offset);

template <typename T> Var<T> leaky_relu(const Var<T>& a, T slope = T(0.01));
template <typename T> Var<T> relu(const Var<T>& a);
/// Exact (erf-based) GELU.
template <typename T> Var<T> gelu(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> tanh(const Var<T>& a);
template <typename T> Var<T> square(const Var<T>& a);
template <typename T> Var<T> sqrt(const Var<T>& a);
template <typename T> Var<T> rsqrt(const Var<T>& a);
template <typename T> Var<T> lower_bound(const Var<T>& a, T bound, BoundGradient mode);

/// 2-D convolution. `weight` is (out, in, k, k); `bias` may be undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int padding);

/// (N, C*r*r, H, W) -> (N, C, H*r, W*r).
template <typename T> Var<T> pixel_shuffle(const Var<T>& x, int factor);

template <typename T> Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_channels(const Var<T>& x, int begin, int count);

/// Zero-extends height/width at the bottom/right edge.
template <typename T> Var<T> pad_bottom_right(const Var<T>& x, int height, int width);
/// Keeps the top-left (height, width) region.
template <typename T> Var<T> crop(const Var<T>& x, int height, int width);

/// Layer normalization over channels at every spatial position.
template <typename T>
Var<T> layer_norm_channels(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

/// round(v - mean) + mean in the forward pass; identity gradient to `v`,
/// none to `mean`. `mean` may be undefined (zero).
template <typename T> Var<T> quantize_ste(const Var<T>& v, const Var<T>& mean);

template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
/// Mean of ((a - b) * range)^2.
template <typename T> Var<T> mse(const Var<T>& a, const Var<T>& b, T range = T(1));

/// Bits of a zero-mean discretized Gaussian evaluated at `centered`
/// (value minus mean) with per-element `sigma`: sum of -log2 max(p, p_min),
/// p = Phi((1/2 - |v|)/sigma) - Phi((-1/2 - |v|)/sigma).
template <typename T>
Var<T> gaussian_bits(const Var<T>& centered, const Var<T>& sigma, T p_min, BoundGradient mode);

}  // namespace ops
}  // namespace tcm
