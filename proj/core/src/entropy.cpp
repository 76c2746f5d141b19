#include "tcm/entropy.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include "tcm/errors.hpp"

namespace tcm {

namespace {

template <typename T>
T softplus(T x) {
    return x > T(20) ? x : std::log1p(std::exp(x));
}

template <typename T>
T logistic(T x) {
    if (x >= 0) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

constexpr int kMaxWidth = 3;

/// Dense view of one channel's chain, with softplus already applied.
template <typename T>
struct Chain {
    static constexpr int L = FactorizedPrior<T>::kLayers;
    std::array<std::array<T, kMaxWidth * kMaxWidth>, L> w{};   // softplus(matrix)
    std::array<std::array<T, kMaxWidth * kMaxWidth>, L> dw{};  // softplus'(matrix)
    std::array<std::array<T, kMaxWidth>, L> b{};
    std::array<std::array<T, kMaxWidth>, L - 1> tf{};  // tanh(factor)
};

/// Activations of one evaluation, kept for the backward pass.
template <typename T>
struct Trace {
    static constexpr int L = FactorizedPrior<T>::kLayers;
    std::array<std::array<T, kMaxWidth>, L + 1> a{};  // layer inputs, a[L][0] is the logit
    std::array<std::array<T, kMaxWidth>, L - 1> tu{};  // tanh(pre-activation)
};

template <typename T>
T run_chain(const Chain<T>& ch, T x, Trace<T>& tr) {
    constexpr int L = Chain<T>::L;
    const int* widths = FactorizedPrior<T>::kWidths;
    tr.a[0][0] = x;
    for (int k = 0; k < L; ++k) {
        const int in = widths[k], out = widths[k + 1];
        for (int o = 0; o < out; ++o) {
            T u = ch.b[k][o];
            for (int i = 0; i < in; ++i) u += ch.w[k][o * in + i] * tr.a[k][i];
            if (k < L - 1) {
                const T t = std::tanh(u);
                tr.tu[k][o] = t;
                u += ch.tf[k][o] * t;
            }
            tr.a[k + 1][o] = u;
        }
    }
    return tr.a[L][0];
}

/// Accumulates d(logit)/d(params) * g into the gradient buffers for channel c
/// and returns d(logit)/dx * g.
template <typename T>
T back_chain(const Chain<T>& ch, const Trace<T>& tr, T g, int c, Tensor<T>* gm[], Tensor<T>* gb[], Tensor<T>* gf[]) {
    constexpr int L = Chain<T>::L;
    const int* widths = FactorizedPrior<T>::kWidths;
    std::array<T, kMaxWidth> delta{};  // gradient w.r.t. a[k+1]
    delta[0] = g;
    for (int k = L - 1; k >= 0; --k) {
        const int in = widths[k], out = widths[k + 1];
        std::array<T, kMaxWidth> du{};
        for (int o = 0; o < out; ++o) {
            if (k < L - 1) {
                const T t = tr.tu[k][o];
                du[o] = delta[o] * (T(1) + ch.tf[k][o] * (T(1) - t * t));
                if (gf[k]) {
                    const T tf = ch.tf[k][o];
                    gf[k]->data()[c * out + o] += delta[o] * t * (T(1) - tf * tf);
                }
            } else {
                du[o] = delta[o];
            }
        }
        std::array<T, kMaxWidth> next{};
        for (int o = 0; o < out; ++o) {
            if (gb[k]) gb[k]->data()[c * out + o] += du[o];
            for (int i = 0; i < in; ++i) {
                if (gm[k]) gm[k]->data()[(c * out + o) * in + i] += du[o] * tr.a[k][i] * ch.dw[k][o * in + i];
                next[i] += ch.w[k][o * in + i] * du[o];
            }
        }
        delta = next;
    }
    return delta[0];
}

/// Chain of channel c in precision U from parameters stored as T.
template <typename U, typename T>
Chain<U> make_chain(int c, Var<T>* const matrices[], Var<T>* const biases[], Var<T>* const factors[]) {
    constexpr int L = FactorizedPrior<T>::kLayers;
    const int* widths = FactorizedPrior<T>::kWidths;
    Chain<U> ch;
    for (int k = 0; k < L; ++k) {
        const int in = widths[k], out = widths[k + 1];
        for (int j = 0; j < in * out; ++j) {
            const U m = static_cast<U>(matrices[k]->value().data()[c * in * out + j]);
            ch.w[k][j] = softplus(m);
            ch.dw[k][j] = logistic(m);
        }
        for (int o = 0; o < out; ++o) {
            ch.b[k][o] = static_cast<U>(biases[k]->value().data()[c * out + o]);
            if (k < L - 1) ch.tf[k][o] = std::tanh(static_cast<U>(factors[k]->value().data()[c * out + o]));
        }
    }
    return ch;
}

template <typename T>
std::vector<Chain<T>> make_chains(int channels, Var<T>* const matrices[], Var<T>* const biases[],
                                  Var<T>* const factors[]) {
    std::vector<Chain<T>> chains;
    chains.reserve(channels);
    for (int c = 0; c < channels; ++c) chains.push_back(make_chain<T>(c, matrices, biases, factors));
    return chains;
}

/// Likelihood from the two cumulative logits, evaluated on the side of the
/// distribution where the sigmoid difference is accurate.
template <typename T>
T interval_likelihood(T lower, T upper, T& sign) {
    sign = (lower + upper) > T(0) ? T(-1) : T(1);
    return std::abs(logistic(sign * upper) - logistic(sign * lower));
}

}  // namespace

template <typename T>
FactorizedPrior<T>::FactorizedPrior(nn::InitContext& init, int channels, double init_scale, bool symmetric)
    : channels_(channels) {
    if (channels <= 0) throw ConfigError("FactorizedPrior: channel count must be positive");
    const double scale = std::pow(init_scale, 1.0 / kLayers);
    for (int k = 0; k < kLayers; ++k) {
        const int in = kWidths[k], out = kWidths[k + 1];
        const double m = std::log(std::expm1(1.0 / scale / out));
        matrices_[k] = &this->add_parameter("matrix" + std::to_string(k),
                                            Tensor<T>(Shape{channels, out, in, 1}, static_cast<T>(m)));
        Tensor<T> bias(Shape{channels, out, 1, 1});
        if (!symmetric)
            for (auto& v : bias.storage()) v = static_cast<T>(init.uniform(-0.5, 0.5));
        biases_[k] = &this->add_parameter("bias" + std::to_string(k), std::move(bias));
        if (k < kLayers - 1)
            factors_[k] = &this->add_parameter("factor" + std::to_string(k), Tensor<T>(Shape{channels, out, 1, 1}));
    }
}

template <typename T>
Var<T> FactorizedPrior<T>::bits(const Var<T>& z, T p_min, BoundGradient mode) const {
    const Shape s = z.shape();
    if (s.c != channels_) throw ConfigError("FactorizedPrior: expected " + std::to_string(channels_) + " channels");
    const auto chains = make_chains<T>(channels_, matrices_, biases_, factors_);
    const T inv_ln2 = T(1) / std::numbers::ln2_v<T>;
    T total = 0;
    Trace<T> lo, up;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* v = z.value().plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                T sign;
                const T p = interval_likelihood(run_chain(chains[c], v[i] - T(0.5), lo),
                                                run_chain(chains[c], v[i] + T(0.5), up), sign);
                total -= std::log(std::max(p, p_min)) * inv_ln2;
            }
        }

    std::vector<Var<T>> inputs{z};
    for (int k = 0; k < kLayers; ++k) {
        inputs.push_back(*matrices_[k]);
        inputs.push_back(*biases_[k]);
        if (k < kLayers - 1) inputs.push_back(*factors_[k]);
    }
    return make_result<T>(
        Tensor<T>(Shape{1, 1, 1, 1}, total), inputs,
        [chains, p_min, mode, inv_ln2, s](Node<T>& node) {
            const T gy = node.grad.data()[0];
            auto& zn = *node.inputs[0];
            Tensor<T>* gm[kLayers] = {};
            Tensor<T>* gb[kLayers] = {};
            Tensor<T>* gf[kLayers] = {};
            int slot = 1;
            for (int k = 0; k < kLayers; ++k) {
                auto& m = *node.inputs[slot++];
                auto& b = *node.inputs[slot++];
                if (m.requires_grad) gm[k] = &m.grad_buffer();
                if (b.requires_grad) gb[k] = &b.grad_buffer();
                if (k < kLayers - 1) {
                    auto& f = *node.inputs[slot++];
                    if (f.requires_grad) gf[k] = &f.grad_buffer();
                }
            }
            Trace<T> lo, up;
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < s.c; ++c) {
                    const T* v = zn.value.plane(n, c);
                    T* gz = zn.requires_grad ? zn.grad_buffer().plane(n, c) : nullptr;
                    for (std::size_t i = 0; i < s.plane(); ++i) {
                        const T l = run_chain(chains[c], v[i] - T(0.5), lo);
                        const T u = run_chain(chains[c], v[i] + T(0.5), up);
                        T sign;
                        const T p = interval_likelihood(l, u, sign);
                        if (p < p_min && mode == BoundGradient::kExact) continue;
                        const T dbits_dp = -inv_ln2 / std::max(p, p_min) * gy;
                        const T su = logistic(sign * u), sl = logistic(sign * l);
                        const T dir = su >= sl ? T(1) : T(-1);
                        const T gu = dbits_dp * dir * sign * su * (T(1) - su);
                        const T gl = -dbits_dp * dir * sign * sl * (T(1) - sl);
                        const T dx = back_chain(chains[c], up, gu, c, gm, gb, gf) +
                                     back_chain(chains[c], lo, gl, c, gm, gb, gf);
                        if (gz) gz[i] += dx;
                    }
                }
        });
}

template <typename T>
std::vector<double> FactorizedPrior<T>::logits(int c, const std::vector<double>& xs) const {
    if (c < 0 || c >= channels_) throw ConfigError("FactorizedPrior: channel out of range");
    // Stored parameters are widened first so both coder sides agree bit for bit.
    const Chain<double> ch = make_chain<double>(c, matrices_, biases_, factors_);
    Trace<double> tr;
    std::vector<double> out;
    out.reserve(xs.size());
    for (double x : xs) out.push_back(run_chain(ch, x, tr));
    return out;
}

template <typename T>
std::vector<double> FactorizedPrior<T>::pmf(int c, int lo, int hi) const {
    std::vector<double> xs;
    for (int v = lo; v <= hi + 1; ++v) xs.push_back(v - 0.5);
    const std::vector<double> l = logits(c, xs);
    std::vector<double> out;
    for (std::size_t i = 0; i + 1 < l.size(); ++i) {
        double sign;
        out.push_back(interval_likelihood(l[i], l[i + 1], sign));
    }
    return out;
}

template <typename T>
std::pair<int, int> FactorizedPrior<T>::support(int c) const {
    constexpr double kTail = 1.0 / 4096.0;
    constexpr int kLimit = 255;
    std::vector<double> xs;
    for (int v = -kLimit; v <= kLimit + 1; ++v) xs.push_back(v - 0.5);
    const std::vector<double> l = logits(c, xs);  // l[i] is the logit at (i - kLimit) - 1/2
    int lo = -kLimit, hi = kLimit;
    while (lo < kLimit && logistic(l[lo + kLimit + 1]) < kTail) ++lo;
    while (hi > lo && logistic(-l[hi + kLimit]) < kTail) --hi;
    return {lo, hi};
}

double gaussian_interval(double k, double sigma) {
    const double a = std::abs(k);
    const double inv = 1.0 / (sigma * std::numbers::sqrt2);
    return 0.5 * (std::erfc((a - 0.5) * inv) - std::erfc((a + 0.5) * inv));
}

int gaussian_support_radius(double sigma) {
    const double r = std::ceil(8.0 * sigma);
    if (!(r < 255.0)) return 255;  // also catches NaN
    return std::max(16, static_cast<int>(r));
}

DeviationReport scaled_deviation(const Tensor<float>& y, const Tensor<float>& y_hat) {
    if (y.shape() != y_hat.shape())
        throw ConfigError("scaled_deviation: shape mismatch " + y.shape().str() + " vs " + y_hat.shape().str());
    const Shape s = y.shape();
    DeviationReport r;
    r.map = Tensor<double>(Shape{1, 1, s.h, s.w});
    for (std::size_t i = 0; i < y.size(); ++i) {
        r.epsilon += std::abs(static_cast<double>(y_hat.data()[i]) - y.data()[i]);
        r.gamma += std::abs(static_cast<double>(y.data()[i]));
    }
    if (r.gamma == 0) throw ConfigError("scaled_deviation: y is identically zero");
    r.scaled = r.epsilon / r.gamma;
    // Per-pixel deviation normalized by the mean magnitude over all elements.
    const double norm = static_cast<double>(y.size()) / r.gamma;
    const double per_pixel = 1.0 / (static_cast<double>(s.n) * s.c);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w) {
                    const double d = std::abs(static_cast<double>(y_hat.at(n, c, h, w)) - y.at(n, c, h, w));
                    r.map.at(0, 0, h, w) += d * norm * per_pixel;
                }
    return r;
}

template class FactorizedPrior<float>;
template class FactorizedPrior<double>;

}  // namespace tcm
