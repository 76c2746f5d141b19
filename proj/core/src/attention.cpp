#include "tcm/attention.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "tcm/errors.hpp"

namespace tcm::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Stride = Eigen::OuterStride<>;
template <typename T>
using Strided = Eigen::Map<RowMat<T>, 0, Stride>;
template <typename T>
using CStrided = Eigen::Map<const RowMat<T>, 0, Stride>;

/// Token bookkeeping shared by forward and backward.
struct Layout {
    int batch, channels, height, width, window, heads, shift, valid_h, valid_w;
    int tokens_per_window() const { return window * window; }
    int windows_per_image() const { return (height / window) * (width / window); }
    int total_windows() const { return batch * windows_per_image(); }
    std::size_t total_tokens() const { return static_cast<std::size_t>(total_windows()) * tokens_per_window(); }

    // Source pixel (row-major index within the image) of token t in window wi.
    void locate(int wi, int t, int& n, int& pixel, int& label, bool& valid) const {
        const int per_row = width / window;
        n = wi / windows_per_image();
        const int local = wi % windows_per_image();
        const int hs = (local / per_row) * window + t / window;
        const int ws = (local % per_row) * window + t % window;
        const int h = (hs + shift) % height;
        const int w = (ws + shift) % width;
        pixel = h * width + w;
        valid = h < valid_h && w < valid_w;
        label = 0;
        if (shift > 0) {
            auto region = [this](int v, int extent) { return v < extent - window ? 0 : (v < extent - shift ? 1 : 2); };
            label = region(hs, height) * 3 + region(ws, width);
        }
    }
};

template <typename T>
struct Saved {
    Layout layout;
    std::vector<int> pixel;   // per token
    std::vector<int> label;   // per token
    std::vector<char> valid;  // per token
    std::vector<int> rel_index;
    RowMat<T> tokens;  // (tokens, C)
    RowMat<T> qkv;     // (tokens, 3C)
    RowMat<T> attn;    // (windows * heads * T, T)
    RowMat<T> mixed;   // (tokens, C)
};

}  // namespace

template <typename T>
Var<T> window_attention(const Var<T>& x, const Var<T>& qkv_weight, const Var<T>& qkv_bias, const Var<T>& proj_weight,
                        const Var<T>& proj_bias, const Var<T>& rel_bias, const WindowGeometry& geometry) {
    const Shape& s = x.shape();
    const int win = geometry.window;
    if (win <= 0 || s.h % win != 0 || s.w % win != 0)
        throw ConfigError("window_attention: map " + s.str() + " not divisible by window " + std::to_string(win));
    if (geometry.heads <= 0 || s.c % geometry.heads != 0) throw ConfigError("window_attention: bad head count");
    const int c = s.c;
    if (qkv_weight.value().size() != static_cast<std::size_t>(3 * c * c) ||
        proj_weight.value().size() != static_cast<std::size_t>(c * c))
        throw ConfigError("window_attention: projection size mismatch");
    const int span = 2 * win - 1;
    if (rel_bias.value().size() != static_cast<std::size_t>(geometry.heads * span * span))
        throw ConfigError("window_attention: relative bias size mismatch");

    auto saved = std::make_shared<Saved<T>>();
    Layout& L = saved->layout;
    L = Layout{s.n, c, s.h, s.w, win, geometry.heads, geometry.shift(),
               geometry.valid_h > 0 ? geometry.valid_h : s.h, geometry.valid_w > 0 ? geometry.valid_w : s.w};
    const int tw = L.tokens_per_window();
    const std::size_t ntok = L.total_tokens();
    const int head_dim = c / L.heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));

    saved->pixel.resize(ntok);
    saved->label.resize(ntok);
    saved->valid.resize(ntok);
    for (int wi = 0; wi < L.total_windows(); ++wi) {
        for (int t = 0; t < tw; ++t) {
            int n, pixel, label;
            bool valid;
            L.locate(wi, t, n, pixel, label, valid);
            const std::size_t k = static_cast<std::size_t>(wi) * tw + t;
            saved->pixel[k] = pixel;
            saved->label[k] = label;
            saved->valid[k] = valid;
        }
    }
    saved->rel_index.resize(static_cast<std::size_t>(tw) * tw);
    for (int a = 0; a < tw; ++a)
        for (int b = 0; b < tw; ++b) {
            const int dy = a / win - b / win + win - 1;
            const int dx = a % win - b % win + win - 1;
            saved->rel_index[static_cast<std::size_t>(a) * tw + b] = dy * span + dx;
        }

    const std::size_t plane = s.plane();
    const int wpi = L.windows_per_image();
    saved->tokens.resize(static_cast<Eigen::Index>(ntok), c);
    for (std::size_t k = 0; k < ntok; ++k) {
        const int n = static_cast<int>(k / (static_cast<std::size_t>(wpi) * tw));
        const T* base = x.value().data() + static_cast<std::size_t>(n) * c * plane + saved->pixel[k];
        for (int ch = 0; ch < c; ++ch) saved->tokens(static_cast<Eigen::Index>(k), ch) = base[ch * plane];
    }

    Eigen::Map<const RowMat<T>> wqkv(qkv_weight.value().data(), 3 * c, c);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bqkv(qkv_bias.value().data(), 3 * c);
    saved->qkv.noalias() = saved->tokens * wqkv.transpose();
    saved->qkv.rowwise() += bqkv;

    saved->attn.resize(static_cast<Eigen::Index>(L.total_windows()) * L.heads * tw, tw);
    saved->mixed.resize(static_cast<Eigen::Index>(ntok), c);
    const T* bias = rel_bias.value().data();
    RowMat<T> scores(tw, tw);
    for (int wi = 0; wi < L.total_windows(); ++wi) {
        const std::size_t row0 = static_cast<std::size_t>(wi) * tw;
        const int* label = saved->label.data() + row0;
        const char* valid = saved->valid.data() + row0;
        for (int h = 0; h < L.heads; ++h) {
            CStrided<T> q(saved->qkv.data() + row0 * 3 * c + h * head_dim, tw, head_dim, Stride(3 * c));
            CStrided<T> kmat(saved->qkv.data() + row0 * 3 * c + c + h * head_dim, tw, head_dim, Stride(3 * c));
            CStrided<T> v(saved->qkv.data() + row0 * 3 * c + 2 * c + h * head_dim, tw, head_dim, Stride(3 * c));
            scores.noalias() = (q * kmat.transpose()) * scale;
            auto probs = saved->attn.block((static_cast<Eigen::Index>(wi) * L.heads + h) * tw, 0, tw, tw);
            const T* hb = bias + static_cast<std::size_t>(h) * span * span;
            for (int a = 0; a < tw; ++a) {
                T mx = -std::numeric_limits<T>::infinity();
                for (int b = 0; b < tw; ++b) {
                    if (!valid[b] || label[a] != label[b]) continue;
                    scores(a, b) += hb[saved->rel_index[static_cast<std::size_t>(a) * tw + b]];
                    mx = std::max(mx, scores(a, b));
                }
                T total = 0;
                for (int b = 0; b < tw; ++b) {
                    if (!valid[b] || label[a] != label[b]) {
                        probs(a, b) = 0;
                        continue;
                    }
                    probs(a, b) = std::exp(scores(a, b) - mx);
                    total += probs(a, b);
                }
                if (total > 0) probs.row(a) /= total;
            }
            Strided<T> o(saved->mixed.data() + row0 * c + h * head_dim, tw, head_dim, Stride(c));
            o.noalias() = probs * v;
        }
    }

    Eigen::Map<const RowMat<T>> wproj(proj_weight.value().data(), c, c);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bproj(proj_bias.value().data(), c);
    RowMat<T> projected = saved->mixed * wproj.transpose();
    projected.rowwise() += bproj;

    Tensor<T> out(s);
    for (std::size_t k = 0; k < ntok; ++k) {
        const int n = static_cast<int>(k / (static_cast<std::size_t>(wpi) * tw));
        T* base = out.data() + static_cast<std::size_t>(n) * c * plane + saved->pixel[k];
        for (int ch = 0; ch < c; ++ch) base[ch * plane] = projected(static_cast<Eigen::Index>(k), ch);
    }

    return make_result<T>(
        std::move(out), {x, qkv_weight, qkv_bias, proj_weight, proj_bias, rel_bias}, [saved](Node<T>& node) {
            const Layout& L = saved->layout;
            const int c = L.channels;
            const int tw = L.tokens_per_window();
            const int wpi = L.windows_per_image();
            const std::size_t ntok = L.total_tokens();
            const std::size_t plane = static_cast<std::size_t>(L.height) * L.width;
            const int head_dim = c / L.heads;
            const int span = 2 * L.window - 1;
            const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
            auto& xin = *node.inputs[0];
            auto& wqkv_n = *node.inputs[1];
            auto& bqkv_n = *node.inputs[2];
            auto& wproj_n = *node.inputs[3];
            auto& bproj_n = *node.inputs[4];
            auto& bias_n = *node.inputs[5];

            RowMat<T> gy(static_cast<Eigen::Index>(ntok), c);
            for (std::size_t k = 0; k < ntok; ++k) {
                const int n = static_cast<int>(k / (static_cast<std::size_t>(wpi) * tw));
                const T* base = node.grad.data() + static_cast<std::size_t>(n) * c * plane + saved->pixel[k];
                for (int ch = 0; ch < c; ++ch) gy(static_cast<Eigen::Index>(k), ch) = base[ch * plane];
            }
            Eigen::Map<const RowMat<T>> wproj(wproj_n.value.data(), c, c);
            if (wproj_n.requires_grad)
                Eigen::Map<RowMat<T>>(wproj_n.grad_buffer().data(), c, c).noalias() += gy.transpose() * saved->mixed;
            if (bproj_n.requires_grad) {
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(bproj_n.grad_buffer().data(), c);
                gb += gy.colwise().sum();
            }
            const bool need_inner = xin.requires_grad || wqkv_n.requires_grad || bqkv_n.requires_grad ||
                                    bias_n.requires_grad;
            if (!need_inner) return;
            RowMat<T> gmixed = gy * wproj;
            RowMat<T> gqkv(static_cast<Eigen::Index>(ntok), 3 * c);
            RowMat<T> gprobs(tw, tw);
            T* gbias = bias_n.requires_grad ? bias_n.grad_buffer().data() : nullptr;
            for (int wi = 0; wi < L.total_windows(); ++wi) {
                const std::size_t row0 = static_cast<std::size_t>(wi) * tw;
                for (int h = 0; h < L.heads; ++h) {
                    const T* qkv = saved->qkv.data() + row0 * 3 * c;
                    T* gq_ptr = gqkv.data() + row0 * 3 * c;
                    CStrided<T> q(qkv + h * head_dim, tw, head_dim, Stride(3 * c));
                    CStrided<T> kmat(qkv + c + h * head_dim, tw, head_dim, Stride(3 * c));
                    CStrided<T> v(qkv + 2 * c + h * head_dim, tw, head_dim, Stride(3 * c));
                    Strided<T> gq(gq_ptr + h * head_dim, tw, head_dim, Stride(3 * c));
                    Strided<T> gk(gq_ptr + c + h * head_dim, tw, head_dim, Stride(3 * c));
                    Strided<T> gv(gq_ptr + 2 * c + h * head_dim, tw, head_dim, Stride(3 * c));
                    CStrided<T> go(gmixed.data() + row0 * c + h * head_dim, tw, head_dim, Stride(c));
                    auto probs = saved->attn.block((static_cast<Eigen::Index>(wi) * L.heads + h) * tw, 0, tw, tw);

                    gv.noalias() = probs.transpose() * go;
                    gprobs.noalias() = go * v.transpose();
                    // softmax backward: dS = P * (dP - rowsum(dP * P)); masked entries have P == 0.
                    for (int a = 0; a < tw; ++a) {
                        const T dot = (gprobs.row(a).array() * probs.row(a).array()).sum();
                        gprobs.row(a) = (probs.row(a).array() * (gprobs.row(a).array() - dot)).matrix();
                    }
                    if (gbias) {
                        T* hb = gbias + static_cast<std::size_t>(h) * span * span;
                        for (int a = 0; a < tw; ++a)
                            for (int b = 0; b < tw; ++b)
                                hb[saved->rel_index[static_cast<std::size_t>(a) * tw + b]] += gprobs(a, b);
                    }
                    gq.noalias() = (gprobs * kmat) * scale;
                    gk.noalias() = (gprobs.transpose() * q) * scale;
                }
            }
            if (wqkv_n.requires_grad)
                Eigen::Map<RowMat<T>>(wqkv_n.grad_buffer().data(), 3 * c, c).noalias() +=
                    gqkv.transpose() * saved->tokens;
            if (bqkv_n.requires_grad) {
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(bqkv_n.grad_buffer().data(), 3 * c);
                gb += gqkv.colwise().sum();
            }
            if (xin.requires_grad) {
                Eigen::Map<const RowMat<T>> wqkv(wqkv_n.value.data(), 3 * c, c);
                RowMat<T> gtokens = gqkv * wqkv;
                Tensor<T>& gx = xin.grad_buffer();
                for (std::size_t k = 0; k < ntok; ++k) {
                    const int n = static_cast<int>(k / (static_cast<std::size_t>(wpi) * tw));
                    T* base = gx.data() + static_cast<std::size_t>(n) * c * plane + saved->pixel[k];
                    for (int ch = 0; ch < c; ++ch) base[ch * plane] += gtokens(static_cast<Eigen::Index>(k), ch);
                }
            }
        });
}

template Var<float> window_attention(const Var<float>&, const Var<float>&, const Var<float>&, const Var<float>&,
                                     const Var<float>&, const Var<float>&, const WindowGeometry&);
template Var<double> window_attention(const Var<double>&, const Var<double>&, const Var<double>&, const Var<double>&,
                                      const Var<double>&, const Var<double>&, const WindowGeometry&);

}  // namespace tcm::ops
