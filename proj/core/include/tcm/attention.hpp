#pragma once

#include "tcm/autograd.hpp"

namespace tcm {

/// Window partition of a (N, C, H, W) map for multi-head self-attention.
/// H and W must be multiples of `window`. Positions at or beyond
/// (valid_h, valid_w) are padding: they never act as keys.
struct WindowGeometry {
    int window = 8;
    int heads = 1;
    bool shifted = false;
    int valid_h = 0;
    int valid_w = 0;

    int shift() const { return shifted ? window / 2 : 0; }
};

namespace ops {

/// Fused W-MSA / SW-MSA: qkv projection, scaled dot-product attention with a
/// learned relative position bias per head, and the output projection.
/// Shifted windows use a cyclic shift by window/2 with the usual region mask.
///   qkv_weight (3C, C, 1, 1), qkv_bias (3C), proj_weight (C, C, 1, 1),
///   proj_bias (C), rel_bias (heads, (2w-1)^2).
template <typename T>
Var<T> window_attention(const Var<T>& x, const Var<T>& qkv_weight, const Var<T>& qkv_bias, const Var<T>& proj_weight,
                        const Var<T>& proj_bias, const Var<T>& rel_bias, const WindowGeometry& geometry);

}  // namespace ops
}  // namespace tcm
