#include "tcm/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "tcm/errors.hpp"

namespace tcm::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ConfigError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, F f, D df) {
    Tensor<T> out(a.shape());
    const T* x = a.value().data();
    T* y = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) y[i] = f(x[i]);
    return make_result<T>(std::move(out), {a}, [df](Node<T>& node) {
        auto& in = *node.inputs[0];
        Tensor<T>& g = in.grad_buffer();
        const T* x = in.value.data();
        const T* y = node.value.data();
        const T* gy = node.grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += gy[i] * df(x[i], y[i]);
    });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same(a, b, "add");
    Tensor<T> out = a.value();
    const T* pb = b.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += pb[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& node) {
        for (auto& in : node.inputs)
            if (in->requires_grad) in->accumulate(node.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same(a, b, "sub");
    Tensor<T> out = a.value();
    const T* pb = b.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= pb[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& node) {
        if (node.inputs[0]->requires_grad) node.inputs[0]->accumulate(node.grad);
        if (node.inputs[1]->requires_grad) {
            Tensor<T>& g = node.inputs[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] -= node.grad.data()[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same(a, b, "mul");
    Tensor<T> out = a.value();
    const T* pb = b.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= pb[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& node) {
        auto& ia = *node.inputs[0];
        auto& ib = *node.inputs[1];
        const T* gy = node.grad.data();
        if (ia.requires_grad) {
            Tensor<T>& g = ia.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += gy[i] * ib.value.data()[i];
        }
        if (ib.requires_grad) {
            Tensor<T>& g = ib.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += gy[i] * ia.value.data()[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
    return unary(a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T offset) {
    return unary(a, [offset](T x) { return x + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
    return unary(
        a, [slope](T x) { return x >= 0 ? x : x * slope; }, [slope](T x, T) { return x >= 0 ? T(1) : slope; });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    return unary(a, [](T x) { return x > 0 ? x : T(0); }, [](T x, T) { return x > 0 ? T(1) : T(0); });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
    const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    return unary(
        a, [inv_sqrt2](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [inv_sqrt2, inv_sqrt2pi](T x, T) {
            const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
            return cdf + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
        });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    return unary(
        a,
        [](T x) {
            if (x >= 0) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
    return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> square(const Var<T>& a) {
    return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> sqrt(const Var<T>& a) {
    return unary(a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Var<T> rsqrt(const Var<T>& a) {
    return unary(a, [](T x) { return T(1) / std::sqrt(x); }, [](T x, T y) { return T(-0.5) * y / x; });
}

template <typename T>
Var<T> lower_bound(const Var<T>& a, T bound, BoundGradient mode) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::max(a.value().data()[i], bound);
    return make_result<T>(std::move(out), {a}, [bound, mode](Node<T>& node) {
        auto& in = *node.inputs[0];
        Tensor<T>& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T gy = node.grad.data()[i];
            const bool pass = in.value.data()[i] >= bound || (mode == BoundGradient::kPassThrough && gy < 0);
            if (pass) g.data()[i] += gy;
        }
    });
}

namespace {

struct ConvGeometry {
    int cin, h, w, cout, k, stride, pad, ho, wo;
    int rows() const { return cin * k * k; }
    int cols() const { return ho * wo; }
    bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const int p = g.cols();
    for (int c = 0; c < g.cin; ++c) {
        const T* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                T* row = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * p;
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    T* dst = row + static_cast<std::size_t>(oy) * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.wo, T(0));
                        continue;
                    }
                    const T* src = xc + static_cast<std::size_t>(iy) * g.w;
                    if (g.stride == 1) {
                        const int lo = std::max(0, g.pad - kx);
                        const int hi = std::min(g.wo, g.w + g.pad - kx);
                        std::fill(dst, dst + std::max(lo, 0), T(0));
                        if (hi > lo) std::memcpy(dst + lo, src + lo - g.pad + kx, sizeof(T) * (hi - lo));
                        std::fill(dst + std::max(hi, lo), dst + g.wo, T(0));
                    } else {
                        for (int ox = 0; ox < g.wo; ++ox) {
                            const int ix = ox * g.stride - g.pad + kx;
                            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* dx) {
    const int p = g.cols();
    for (int c = 0; c < g.cin; ++c) {
        T* xc = dx + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                const T* row = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * p;
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * g.wo;
                    T* dst = xc + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.wo; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int padding) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (ws.c != xs.c) throw ConfigError("conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " +
                                        std::to_string(ws.c));
    if (ws.h != ws.w) throw ConfigError("conv2d: square kernels only");
    ConvGeometry g{xs.c, xs.h, xs.w, ws.n, ws.h, stride, padding, 0, 0};
    g.ho = (xs.h + 2 * padding - g.k) / stride + 1;
    g.wo = (xs.w + 2 * padding - g.k) / stride + 1;
    if (g.ho <= 0 || g.wo <= 0) throw ConfigError("conv2d: empty output for input " + xs.str());
    if (bias.defined() && bias.value().size() != static_cast<std::size_t>(g.cout))
        throw ConfigError("conv2d: bias size mismatch");

    const Shape out_shape{xs.n, g.cout, g.ho, g.wo};
    Tensor<T> out(out_shape);
    CMapMat<T> w(weight.value().data(), g.cout, g.rows());
    AlignedVector<T> cols;
    if (!g.pointwise()) cols.resize(static_cast<std::size_t>(g.rows()) * g.cols());
    for (int n = 0; n < xs.n; ++n) {
        const T* xn = x.value().plane(n, 0);
        const T* src = xn;
        if (!g.pointwise()) {
            im2col(xn, g, cols.data());
            src = cols.data();
        }
        MapMat<T> y(out.plane(n, 0), g.cout, g.cols());
        y.noalias() = w * CMapMat<T>(src, g.rows(), g.cols());
        if (bias.defined()) {
            const T* b = bias.value().data();
            for (int o = 0; o < g.cout; ++o) y.row(o).array() += b[o];
        }
    }

    return make_result<T>(std::move(out), {x, weight, bias.defined() ? bias : Var<T>(Tensor<T>())},
                          [g](Node<T>& node) {
        auto& in = *node.inputs[0];
        auto& wn = *node.inputs[1];
        auto& bn = *node.inputs[2];
        const int batch = in.value.shape().n;
        CMapMat<T> w(wn.value.data(), g.cout, g.rows());
        AlignedVector<T> cols(g.pointwise() ? 0 : static_cast<std::size_t>(g.rows()) * g.cols());
        AlignedVector<T> dcols(cols.size());
        for (int n = 0; n < batch; ++n) {
            CMapMat<T> gy(node.grad.plane(n, 0), g.cout, g.cols());
            if (bn.requires_grad) {
                Tensor<T>& gb = bn.grad_buffer();
                for (int o = 0; o < g.cout; ++o) gb.data()[o] += gy.row(o).sum();
            }
            const T* xn = in.value.plane(n, 0);
            if (wn.requires_grad) {
                const T* src = xn;
                if (!g.pointwise()) {
                    im2col(xn, g, cols.data());
                    src = cols.data();
                }
                MapMat<T> gw(wn.grad_buffer().data(), g.cout, g.rows());
                gw.noalias() += gy * CMapMat<T>(src, g.rows(), g.cols()).transpose();
            }
            if (in.requires_grad) {
                T* gx = in.grad_buffer().plane(n, 0);
                if (g.pointwise()) {
                    MapMat<T>(gx, g.rows(), g.cols()).noalias() += w.transpose() * gy;
                } else {
                    MapMat<T>(dcols.data(), g.rows(), g.cols()).noalias() = w.transpose() * gy;
                    col2im(dcols.data(), g, gx);
                }
            }
        }
    });
}

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int factor) {
    const Shape& s = x.shape();
    const int r2 = factor * factor;
    if (s.c % r2 != 0) throw ConfigError("pixel_shuffle: channels not divisible by factor^2");
    const Shape os{s.n, s.c / r2, s.h * factor, s.w * factor};
    Tensor<T> out(os);
    auto index = [s, os, factor, r2](int n, int c, int i, int j, int h, int w, std::size_t& src, std::size_t& dst) {
        src = ((static_cast<std::size_t>(n) * s.c + c * r2 + i * factor + j) * s.h + h) * s.w + w;
        dst = ((static_cast<std::size_t>(n) * os.c + c) * os.h + h * factor + i) * os.w + w * factor + j;
    };
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < os.c; ++c)
            for (int i = 0; i < factor; ++i)
                for (int j = 0; j < factor; ++j)
                    for (int h = 0; h < s.h; ++h)
                        for (int w = 0; w < s.w; ++w) {
                            std::size_t src, dst;
                            index(n, c, i, j, h, w, src, dst);
                            out.data()[dst] = x.value().data()[src];
                        }
    return make_result<T>(std::move(out), {x}, [s, os, factor, index](Node<T>& node) {
        Tensor<T>& g = node.inputs[0]->grad_buffer();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < os.c; ++c)
                for (int i = 0; i < factor; ++i)
                    for (int j = 0; j < factor; ++j)
                        for (int h = 0; h < s.h; ++h)
                            for (int w = 0; w < s.w; ++w) {
                                std::size_t src, dst;
                                index(n, c, i, j, h, w, src, dst);
                                g.data()[src] += node.grad.data()[dst];
                            }
    });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ConfigError("concat_channels: no inputs");
    Shape s = parts.front().shape();
    int channels = 0;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        if (ps.n != s.n || ps.h != s.h || ps.w != s.w)
            throw ConfigError("concat_channels: spatial mismatch " + ps.str() + " vs " + s.str());
        channels += ps.c;
    }
    const Shape os{s.n, channels, s.h, s.w};
    Tensor<T> out(os);
    std::vector<int> widths;
    for (int n = 0; n < s.n; ++n) {
        int c0 = 0;
        for (const auto& p : parts) {
            const std::size_t len = static_cast<std::size_t>(p.shape().c) * s.h * s.w;
            std::memcpy(out.plane(n, c0), p.value().plane(n, 0), sizeof(T) * len);
            c0 += p.shape().c;
        }
    }
    for (const auto& p : parts) widths.push_back(p.shape().c);
    return make_result<T>(std::move(out), parts, [widths](Node<T>& node) {
        const Shape& os = node.value.shape();
        for (int n = 0; n < os.n; ++n) {
            int c0 = 0;
            for (std::size_t k = 0; k < widths.size(); ++k) {
                auto& in = *node.inputs[k];
                if (in.requires_grad) {
                    T* g = in.grad_buffer().plane(n, 0);
                    const T* src = node.grad.plane(n, c0);
                    const std::size_t len = static_cast<std::size_t>(widths[k]) * os.h * os.w;
                    for (std::size_t i = 0; i < len; ++i) g[i] += src[i];
                }
                c0 += widths[k];
            }
        }
    });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int begin, int count) {
    const Shape& s = x.shape();
    if (begin < 0 || count <= 0 || begin + count > s.c) throw ConfigError("slice_channels: range out of bounds");
    const Shape os{s.n, count, s.h, s.w};
    Tensor<T> out(os);
    const std::size_t len = static_cast<std::size_t>(count) * s.h * s.w;
    for (int n = 0; n < s.n; ++n) std::memcpy(out.plane(n, 0), x.value().plane(n, begin), sizeof(T) * len);
    return make_result<T>(std::move(out), {x}, [begin, len](Node<T>& node) {
        Tensor<T>& g = node.inputs[0]->grad_buffer();
        for (int n = 0; n < node.value.shape().n; ++n) {
            T* dst = g.plane(n, begin);
            const T* src = node.grad.plane(n, 0);
            for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
    });
}

template <typename T>
Var<T> pad_bottom_right(const Var<T>& x, int height, int width) {
    const Shape& s = x.shape();
    if (height == s.h && width == s.w) return x;
    if (height < s.h || width < s.w) throw ConfigError("pad_bottom_right: target smaller than input");
    Tensor<T> out(Shape{s.n, s.c, height, width});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < s.h; ++h)
                std::memcpy(&out.at(n, c, h, 0), &x.value().at(n, c, h, 0), sizeof(T) * s.w);
    return make_result<T>(std::move(out), {x}, [s](Node<T>& node) {
        Tensor<T>& g = node.inputs[0]->grad_buffer();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int h = 0; h < s.h; ++h)
                    for (int w = 0; w < s.w; ++w) g.at(n, c, h, w) += node.grad.at(n, c, h, w);
    });
}

template <typename T>
Var<T> crop(const Var<T>& x, int height, int width) {
    const Shape& s = x.shape();
    if (height == s.h && width == s.w) return x;
    if (height > s.h || width > s.w || height <= 0 || width <= 0) throw ConfigError("crop: invalid target size");
    const Shape os{s.n, s.c, height, width};
    Tensor<T> out(os);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < height; ++h)
                std::memcpy(&out.at(n, c, h, 0), &x.value().at(n, c, h, 0), sizeof(T) * width);
    return make_result<T>(std::move(out), {x}, [os](Node<T>& node) {
        Tensor<T>& g = node.inputs[0]->grad_buffer();
        for (int n = 0; n < os.n; ++n)
            for (int c = 0; c < os.c; ++c)
                for (int h = 0; h < os.h; ++h)
                    for (int w = 0; w < os.w; ++w) g.at(n, c, h, w) += node.grad.at(n, c, h, w);
    });
}

template <typename T>
Var<T> layer_norm_channels(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
    const Shape& s = x.shape();
    if (gamma.value().size() != static_cast<std::size_t>(s.c) || beta.value().size() != static_cast<std::size_t>(s.c))
        throw ConfigError("layer_norm_channels: affine size mismatch");
    const std::size_t plane = s.plane();
    Tensor<T> out(s);
    // Normalized activations and per-position inverse std are kept for backward.
    Tensor<T> xhat(s);
    AlignedVector<T> inv_std(static_cast<std::size_t>(s.n) * plane);
    AlignedVector<T> mean(plane), var(plane);
    for (int n = 0; n < s.n; ++n) {
        std::fill(mean.begin(), mean.end(), T(0));
        std::fill(var.begin(), var.end(), T(0));
        for (int c = 0; c < s.c; ++c) {
            const T* xc = x.value().plane(n, c);
            for (std::size_t p = 0; p < plane; ++p) mean[p] += xc[p];
        }
        for (std::size_t p = 0; p < plane; ++p) mean[p] /= T(s.c);
        for (int c = 0; c < s.c; ++c) {
            const T* xc = x.value().plane(n, c);
            for (std::size_t p = 0; p < plane; ++p) {
                const T d = xc[p] - mean[p];
                var[p] += d * d;
            }
        }
        T* is = inv_std.data() + static_cast<std::size_t>(n) * plane;
        for (std::size_t p = 0; p < plane; ++p) is[p] = T(1) / std::sqrt(var[p] / T(s.c) + eps);
        for (int c = 0; c < s.c; ++c) {
            const T* xc = x.value().plane(n, c);
            T* hc = xhat.plane(n, c);
            T* yc = out.plane(n, c);
            const T gc = gamma.value().data()[c];
            const T bc = beta.value().data()[c];
            for (std::size_t p = 0; p < plane; ++p) {
                hc[p] = (xc[p] - mean[p]) * is[p];
                yc[p] = hc[p] * gc + bc;
            }
        }
    }
    return make_result<T>(std::move(out), {x, gamma, beta},
                          [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& node) {
        const Shape& s = node.value.shape();
        const std::size_t plane = s.plane();
        auto& xin = *node.inputs[0];
        auto& gin = *node.inputs[1];
        auto& bin = *node.inputs[2];
        const T* gamma = gin.value.data();
        AlignedVector<T> m1(plane), m2(plane);
        for (int n = 0; n < s.n; ++n) {
            std::fill(m1.begin(), m1.end(), T(0));
            std::fill(m2.begin(), m2.end(), T(0));
            for (int c = 0; c < s.c; ++c) {
                const T* gy = node.grad.plane(n, c);
                const T* hc = xhat.plane(n, c);
                T gsum = 0, bsum = 0;
                for (std::size_t p = 0; p < plane; ++p) {
                    const T d = gy[p] * gamma[c];
                    m1[p] += d;
                    m2[p] += d * hc[p];
                    gsum += gy[p] * hc[p];
                    bsum += gy[p];
                }
                if (gin.requires_grad) gin.grad_buffer().data()[c] += gsum;
                if (bin.requires_grad) bin.grad_buffer().data()[c] += bsum;
            }
            if (!xin.requires_grad) continue;
            const T* is = inv_std.data() + static_cast<std::size_t>(n) * plane;
            for (int c = 0; c < s.c; ++c) {
                const T* gy = node.grad.plane(n, c);
                const T* hc = xhat.plane(n, c);
                T* gx = xin.grad_buffer().plane(n, c);
                for (std::size_t p = 0; p < plane; ++p) {
                    const T d = gy[p] * gamma[c];
                    gx[p] += is[p] * (d - m1[p] / T(s.c) - hc[p] * m2[p] / T(s.c));
                }
            }
        }
    });
}

template <typename T>
Var<T> quantize_ste(const Var<T>& v, const Var<T>& mean) {
    if (mean.defined()) require_same(v, mean, "quantize_ste");
    Tensor<T> out(v.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T m = mean.defined() ? mean.value().data()[i] : T(0);
        out.data()[i] = std::nearbyint(v.value().data()[i] - m) + m;
    }
    return make_result<T>(std::move(out), {v}, [](Node<T>& node) { node.inputs[0]->accumulate(node.grad); });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    T total = 0;
    for (T v : a.value().storage()) total += v;
    return make_result<T>(Tensor<T>(Shape{1, 1, 1, 1}, total), {a}, [](Node<T>& node) {
        Tensor<T>& g = node.inputs[0]->grad_buffer();
        const T gy = node.grad.data()[0];
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += gy;
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b, T range) {
    require_same(a, b, "mse");
    const std::size_t n = a.value().size();
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(a.value().data()[i] - b.value().data()[i]) * range;
        total += d * d;
    }
    return make_result<T>(Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(total / static_cast<double>(n))), {a, b}, [n, range](Node<T>& node) {
        const T k = node.grad.data()[0] * T(2) * range * range / T(n);
        auto& ia = *node.inputs[0];
        auto& ib = *node.inputs[1];
        for (std::size_t i = 0; i < n; ++i) {
            const T d = k * (ia.value.data()[i] - ib.value.data()[i]);
            if (ia.requires_grad) ia.grad_buffer().data()[i] += d;
            if (ib.requires_grad) ib.grad_buffer().data()[i] -= d;
        }
    });
}

namespace {

template <typename T>
T std_normal_cdf(T x) {
    return T(0.5) * std::erfc(-x / std::numbers::sqrt2_v<T>);
}

template <typename T>
T std_normal_pdf(T x) {
    return std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T> * std::exp(T(-0.5) * x * x);
}

}  // namespace

template <typename T>
Var<T> gaussian_bits(const Var<T>& centered, const Var<T>& sigma, T p_min, BoundGradient mode) {
    require_same(centered, sigma, "gaussian_bits");
    const std::size_t n = centered.value().size();
    const T inv_ln2 = T(1) / std::numbers::ln2_v<T>;
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T v = std::abs(centered.value().data()[i]);
        const T s = sigma.value().data()[i];
        const T p = std_normal_cdf((T(0.5) - v) / s) - std_normal_cdf((T(-0.5) - v) / s);
        total -= std::log(std::max(p, p_min)) * inv_ln2;
    }
    return make_result<T>(
        Tensor<T>(Shape{1, 1, 1, 1}, total), {centered, sigma}, [n, p_min, mode, inv_ln2](Node<T>& node) {
            auto& iv = *node.inputs[0];
            auto& is = *node.inputs[1];
            const T gy = node.grad.data()[0];
            for (std::size_t i = 0; i < n; ++i) {
                const T raw = iv.value.data()[i];
                const T v = std::abs(raw);
                const T s = is.value.data()[i];
                const T a = (T(0.5) - v) / s;
                const T b = (T(-0.5) - v) / s;
                const T p = std_normal_cdf(a) - std_normal_cdf(b);
                if (p < p_min && mode == BoundGradient::kExact) continue;
                // d bits / d p, with p floored the way the forward pass floors it.
                const T dbits_dp = -inv_ln2 / std::max(p, p_min) * gy;
                const T pa = std_normal_pdf(a);
                const T pb = std_normal_pdf(b);
                if (iv.requires_grad) {
                    const T dp_dabs = (pb - pa) / s;
                    const T sign = raw > 0 ? T(1) : (raw < 0 ? T(-1) : T(0));
                    iv.grad_buffer().data()[i] += dbits_dp * dp_dabs * sign;
                }
                if (is.requires_grad) {
                    const T dp_ds = (-a * pa + b * pb) / s;
                    is.grad_buffer().data()[i] += dbits_dp * dp_ds;
                }
            }
        });
}

#define TCM_INSTANTIATE_OPS(T)                                                                      \
    template Var<T> add(const Var<T>&, const Var<T>&);                                              \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                              \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                              \
    template Var<T> scale(const Var<T>&, T);                                                        \
    template Var<T> add_scalar(const Var<T>&, T);                                                   \
    template Var<T> leaky_relu(const Var<T>&, T);                                                   \
    template Var<T> relu(const Var<T>&);                                                            \
    template Var<T> gelu(const Var<T>&);                                                            \
    template Var<T> sigmoid(const Var<T>&);                                                         \
    template Var<T> tanh(const Var<T>&);                                                            \
    template Var<T> square(const Var<T>&);                                                          \
    template Var<T> sqrt(const Var<T>&);                                                            \
    template Var<T> rsqrt(const Var<T>&);                                                           \
    template Var<T> lower_bound(const Var<T>&, T, BoundGradient);                                   \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                  \
    template Var<T> pixel_shuffle(const Var<T>&, int);                                              \
    template Var<T> concat_channels(const std::vector<Var<T>>&);                                    \
    template Var<T> slice_channels(const Var<T>&, int, int);                                        \
    template Var<T> pad_bottom_right(const Var<T>&, int, int);                                      \
    template Var<T> crop(const Var<T>&, int, int);                                                  \
    template Var<T> layer_norm_channels(const Var<T>&, const Var<T>&, const Var<T>&, T);            \
    template Var<T> quantize_ste(const Var<T>&, const Var<T>&);                                     \
    template Var<T> sum(const Var<T>&);                                                             \
    template Var<T> mean(const Var<T>&);                                                            \
    template Var<T> mse(const Var<T>&, const Var<T>&, T);                                           \
    template Var<T> gaussian_bits(const Var<T>&, const Var<T>&, T, BoundGradient);

TCM_INSTANTIATE_OPS(float)
TCM_INSTANTIATE_OPS(double)

}  // namespace tcm::ops
