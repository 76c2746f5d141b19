#include "tcm/nn.hpp"

#include <cmath>

#include "tcm/errors.hpp"

namespace tcm::nn {

double InitContext::uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

double InitContext::normal(double stddev) { return std::normal_distribution<double>(0.0, stddev)(rng); }

namespace {

constexpr double kGdnBetaMin = 1e-6;
constexpr double kGdnGammaInit = 0.1;
// Off-diagonal gamma starts at (2^-18)^2 instead of exactly zero so it still
// receives a gradient through the squared parametrization.
constexpr double kGdnOffDiagonal = 1.0 / 262144.0;

template <typename T>
Tensor<T> init_weight(InitContext& init, Shape shape, int fan_in) {
    Tensor<T> t(shape);
    if (init.scheme == InitScheme::kHeNormal) {
        const double sd = std::sqrt(2.0 / fan_in);
        for (auto& v : t.storage()) v = static_cast<T>(init.normal(sd));
    } else {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : t.storage()) v = static_cast<T>(init.uniform(-bound, bound));
    }
    return t;
}

template <typename T>
Tensor<T> init_bias(InitContext& init, int size, int fan_in) {
    Tensor<T> t(Shape{1, size, 1, 1});
    if (init.scheme == InitScheme::kUniformFanIn) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : t.storage()) v = static_cast<T>(init.uniform(-bound, bound));
    }
    return t;
}

// Normal(0, 0.02) truncated at two standard deviations.
template <typename T>
Tensor<T> init_trunc_normal(InitContext& init, Shape shape) {
    Tensor<T> t(shape);
    for (auto& v : t.storage()) {
        double s;
        do s = init.normal(0.02);
        while (std::abs(s) > 0.04);
        v = static_cast<T>(s);
    }
    return t;
}

int round_up(int v, int m) { return (v + m - 1) / m * m; }

}  // namespace

// ---------------------------------------------------------------- Module

template <typename T>
Var<T>& Module<T>::add_parameter(std::string name, Tensor<T> value) {
    params_.emplace_back(std::move(name), Var<T>(std::move(value), true));
    return params_.back().second;
}

template <typename T>
void Module<T>::collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
    for (auto& [name, var] : params_) out.push_back({prefix + name, &var});
    for (auto& [name, child] : children_) child->collect(prefix + name + ".", out);
}

template <typename T>
std::vector<NamedParameter<T>> Module<T>::parameters() {
    std::vector<NamedParameter<T>> out;
    collect("", out);
    return out;
}

template <typename T>
std::size_t Module<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.second.value().size();
    for (const auto& c : children_) n += c.second->parameter_count();
    return n;
}

template <typename T>
void Module<T>::zero_grad() {
    for (auto& p : params_) p.second.zero_grad();
    for (auto& c : children_) c.second->zero_grad();
}

// ---------------------------------------------------------------- layers

template <typename T>
Conv2d<T>::Conv2d(InitContext& init, int in, int out, int kernel, int stride, bool bias)
    : in_(in), out_(out), kernel_(kernel), stride_(stride) {
    if (in <= 0 || out <= 0 || kernel <= 0 || stride <= 0) throw ConfigError("Conv2d: nonpositive geometry");
    const int fan_in = in * kernel * kernel;
    weight_ = &this->add_parameter("weight", init_weight<T>(init, Shape{out, in, kernel, kernel}, fan_in));
    if (bias) bias_ = &this->add_parameter("bias", init_bias<T>(init, out, fan_in));
}

template <typename T>
Var<T> Conv2d<T>::forward(const Var<T>& x) const {
    if (x.shape().c != in_)
        throw ConfigError("Conv2d: expected " + std::to_string(in_) + " input channels, got " + x.shape().str());
    return ops::conv2d(x, *weight_, bias_ ? *bias_ : Var<T>(), stride_, kernel_ / 2);
}

template <typename T>
SubpelConv<T>::SubpelConv(InitContext& init, int in, int out, int factor)
    : conv_(this->template add_module<Conv2d<T>>("conv", init, in, out * factor * factor, 3)), factor_(factor) {}

template <typename T>
Var<T> SubpelConv<T>::forward(const Var<T>& x) const {
    return ops::pixel_shuffle(conv_.forward(x), factor_);
}

template <typename T>
LayerNorm<T>::LayerNorm(int channels)
    : gamma_(this->add_parameter("weight", Tensor<T>(Shape{1, channels, 1, 1}, T(1)))),
      beta_(this->add_parameter("bias", Tensor<T>(Shape{1, channels, 1, 1}))) {}

template <typename T>
Var<T> LayerNorm<T>::forward(const Var<T>& x) const {
    return ops::layer_norm_channels(x, gamma_, beta_);
}

template <typename T>
GDN<T>::GDN(int channels, bool inverse)
    : inverse_(inverse),
      beta_p_(this->add_parameter("beta",
                                  Tensor<T>(Shape{1, channels, 1, 1}, static_cast<T>(std::sqrt(1.0 - kGdnBetaMin))))),
      gamma_p_(this->add_parameter("gamma", Tensor<T>(Shape{channels, channels, 1, 1}, T(kGdnOffDiagonal)))) {
    for (int c = 0; c < channels; ++c) gamma_p_.mutable_value().at(c, c, 0, 0) = static_cast<T>(std::sqrt(kGdnGammaInit));
}

template <typename T>
Var<T> GDN<T>::forward(const Var<T>& x) const {
    const Var<T> beta = ops::add_scalar(ops::square(beta_p_), T(kGdnBetaMin));
    const Var<T> norm = ops::conv2d(ops::square(x), ops::square(gamma_p_), beta, 1, 0);
    return ops::mul(x, inverse_ ? ops::sqrt(norm) : ops::rsqrt(norm));
}

// ---------------------------------------------------------------- residual blocks

template <typename T>
ResidualBlock<T>::ResidualBlock(InitContext& init, int channels)
    : conv1_(this->template add_module<Conv2d<T>>("conv1", init, channels, channels, 3)),
      conv2_(this->template add_module<Conv2d<T>>("conv2", init, channels, channels, 3)) {}

template <typename T>
Var<T> ResidualBlock<T>::forward(const Var<T>& x) const {
    Var<T> h = ops::leaky_relu(conv1_.forward(x));
    h = ops::leaky_relu(conv2_.forward(h));
    return ops::add(h, x);
}

template <typename T>
ResidualBlockStride<T>::ResidualBlockStride(InitContext& init, int in, int mid, int out)
    : conv1_(this->template add_module<Conv2d<T>>("conv1", init, in, mid, 3, 2)),
      conv2_(this->template add_module<Conv2d<T>>("conv2", init, mid, out, 3)),
      gdn_(this->template add_module<GDN<T>>("gdn", out, false)),
      skip_(this->template add_module<Conv2d<T>>("skip", init, in, out, 1, 2)) {}

template <typename T>
Var<T> ResidualBlockStride<T>::forward(const Var<T>& x) const {
    if (x.shape().h % 2 != 0 || x.shape().w % 2 != 0)
        throw ConfigError("ResidualBlockStride: odd spatial size " + x.shape().str());
    Var<T> h = ops::leaky_relu(conv1_.forward(x));
    h = gdn_.forward(conv2_.forward(h));
    return ops::add(h, skip_.forward(x));
}

template <typename T>
ResidualBlockUpsample<T>::ResidualBlockUpsample(InitContext& init, int in, int mid, int out)
    : subpel_(this->template add_module<SubpelConv<T>>("subpel", init, in, mid, 2)),
      conv_(this->template add_module<Conv2d<T>>("conv", init, mid, out, 3)),
      igdn_(this->template add_module<GDN<T>>("igdn", out, true)),
      skip_(this->template add_module<SubpelConv<T>>("upsample", init, in, out, 2)) {}

template <typename T>
Var<T> ResidualBlockUpsample<T>::forward(const Var<T>& x) const {
    Var<T> h = ops::leaky_relu(subpel_.forward(x));
    h = igdn_.forward(conv_.forward(h));
    return ops::add(h, skip_.forward(x));
}

// ---------------------------------------------------------------- swin

template <typename T>
SwinBlock<T>::SwinBlock(InitContext& init, int channels, int head_dim, int window, bool shifted, WindowPolicy policy)
    : channels_(channels),
      heads_(head_dim > 0 ? channels / head_dim : 0),
      window_(window),
      shifted_(shifted),
      policy_(policy),
      norm1_(this->template add_module<LayerNorm<T>>("norm1", channels)),
      qkv_w_(this->add_parameter("qkv.weight", init_weight<T>(init, Shape{3 * channels, channels, 1, 1}, channels))),
      qkv_b_(this->add_parameter("qkv.bias", init_bias<T>(init, 3 * channels, channels))),
      proj_w_(this->add_parameter("proj.weight", init_weight<T>(init, Shape{channels, channels, 1, 1}, channels))),
      proj_b_(this->add_parameter("proj.bias", init_bias<T>(init, channels, channels))),
      rel_bias_(this->add_parameter("relative_position_bias",
                                    init_trunc_normal<T>(init, Shape{1, std::max(heads_, 1), 2 * window - 1,
                                                                     2 * window - 1}))),
      norm2_(this->template add_module<LayerNorm<T>>("norm2", channels)),
      fc1_(this->template add_module<Conv2d<T>>("mlp.fc1", init, channels, 2 * channels, 1)),
      fc2_(this->template add_module<Conv2d<T>>("mlp.fc2", init, 2 * channels, channels, 1)) {
    if (head_dim <= 0 || channels % head_dim != 0)
        throw ConfigError("SwinBlock: head dim " + std::to_string(head_dim) + " does not divide " +
                          std::to_string(channels) + " channels");
    if (window <= 0) throw ConfigError("SwinBlock: window must be positive");
}

template <typename T>
Var<T> SwinBlock<T>::forward(const Var<T>& x) const {
    const Shape& s = x.shape();
    if (s.c != channels_) throw ConfigError("SwinBlock: channel mismatch " + s.str());
    Var<T> h = x;
    if (policy_ == WindowPolicy::kStrict) {
        if (window_ > s.h || window_ > s.w)
            throw ConfigError("SwinBlock: window " + std::to_string(window_) + " exceeds map " + s.str());
        if (s.h % window_ != 0 || s.w % window_ != 0)
            throw ConfigError("SwinBlock: map " + s.str() + " is not a multiple of window " + std::to_string(window_));
    } else if (s.h % window_ != 0 || s.w % window_ != 0) {
        h = ops::pad_bottom_right(h, round_up(s.h, window_), round_up(s.w, window_));
    }
    const WindowGeometry geom{window_, heads_, shifted_, s.h, s.w};
    h = ops::add(h, ops::window_attention(norm1_.forward(h), qkv_w_, qkv_b_, proj_w_, proj_b_, rel_bias_, geom));
    h = ops::add(h, fc2_.forward(ops::gelu(fc1_.forward(norm2_.forward(h)))));
    if (h.shape().h != s.h || h.shape().w != s.w) h = ops::crop(h, s.h, s.w);
    return h;
}

// ---------------------------------------------------------------- TCM

void TCMConfig::validate() const {
    if (channels <= 0 || channels % 2 != 0)
        throw ConfigError("TCM: channel count " + std::to_string(channels) + " must be positive and even");
    if (head_dim <= 0 || (channels / 2) % head_dim != 0)
        throw ConfigError("TCM: head dim " + std::to_string(head_dim) + " does not divide C/2 = " +
                          std::to_string(channels / 2));
    if (window <= 0) throw ConfigError("TCM: window must be positive");
}

namespace {
const TCMConfig& checked(const TCMConfig& cfg) {
    cfg.validate();
    return cfg;
}
}  // namespace

template <typename T>
TCMStage<T>::TCMStage(InitContext& init, const TCMConfig& cfg, bool shifted)
    : half_(checked(cfg).channels / 2),
      entry_(this->template add_module<Conv2d<T>>("conv1_1", init, cfg.channels, cfg.channels, 1)),
      cnn_(this->template add_module<ResidualBlock<T>>("conv_block", init, half_)),
      trans_(this->template add_module<SwinBlock<T>>("trans_block", init, half_, cfg.head_dim, cfg.window, shifted,
                                                     cfg.policy)),
      fuse_(this->template add_module<Conv2d<T>>("conv1_2", init, cfg.channels, cfg.channels, 1)) {}

template <typename T>
Var<T> TCMStage<T>::forward(const Var<T>& x) const {
    if (x.shape().c != 2 * half_) throw ConfigError("TCM: expected " + std::to_string(2 * half_) + " channels");
    const Var<T> f = entry_.forward(x);
    Var<T> f_cnn = ops::slice_channels(f, 0, half_);
    Var<T> f_trans = ops::slice_channels(f, half_, half_);
    if (!identity_branches_) {
        f_cnn = cnn_.forward(f_cnn);
        f_trans = trans_.forward(f_trans);
    }
    return ops::add(x, fuse_.forward(ops::concat_channels<T>({f_cnn, f_trans})));
}

template <typename T>
TCMBlock<T>::TCMBlock(InitContext& init, const TCMConfig& cfg)
    : channels_(checked(cfg).channels),
      first_(this->template add_module<TCMStage<T>>("stage1", init, cfg, false)),
      second_(this->template add_module<TCMStage<T>>("stage2", init, cfg, true)) {}

template <typename T>
Var<T> TCMBlock<T>::forward(const Var<T>& x) const {
    return second_.forward(first_.forward(x));
}

// ---------------------------------------------------------------- SWAtten

template <typename T>
ResidualUnit<T>::ResidualUnit(InitContext& init, int channels)
    : a_(this->template add_module<Conv2d<T>>("conv1", init, channels, channels / 2, 1)),
      b_(this->template add_module<Conv2d<T>>("conv2", init, channels / 2, channels / 2, 3)),
      c_(this->template add_module<Conv2d<T>>("conv3", init, channels / 2, channels, 1)) {
    if (channels < 2 || channels % 2 != 0) throw ConfigError("ResidualUnit: channel count must be even");
}

template <typename T>
Var<T> ResidualUnit<T>::forward(const Var<T>& x) const {
    Var<T> h = ops::relu(a_.forward(x));
    h = ops::relu(b_.forward(h));
    return ops::relu(ops::add(c_.forward(h), x));
}

template <typename T>
SWAtten<T>::SWAtten(InitContext& init, const SWAttenConfig& cfg)
    : channels_(cfg.channels), width_(cfg.squeeze > 0 ? cfg.squeeze : cfg.channels) {
    if (cfg.squeeze > 0) in_conv_ = &this->template add_module<Conv2d<T>>("in_conv", init, cfg.channels, width_, 1);
    swin_ = &this->template add_module<SwinBlock<T>>("swin1", init, width_, cfg.head_dim, cfg.window, false,
                                                     WindowPolicy::kPadToWindow);
    shifted_swin_ = &this->template add_module<SwinBlock<T>>("swin2", init, width_, cfg.head_dim, cfg.window, true,
                                                             WindowPolicy::kPadToWindow);
    for (int i = 0; i < 3; ++i)
        trunk_.push_back(&this->template add_module<ResidualUnit<T>>("trunk" + std::to_string(i), init, width_));
    for (int i = 0; i < 3; ++i)
        mask_.push_back(&this->template add_module<ResidualUnit<T>>("mask" + std::to_string(i), init, width_));
    mask_conv_ = &this->template add_module<Conv2d<T>>("mask_conv", init, width_, width_, 1);
    if (cfg.squeeze > 0) out_conv_ = &this->template add_module<Conv2d<T>>("out_conv", init, width_, cfg.channels, 1);
}

template <typename T>
std::pair<Var<T>, Var<T>> SWAtten<T>::forward_with_mask(const Var<T>& x) const {
    if (x.shape().c != channels_)
        throw ConfigError("SWAtten: expected " + std::to_string(channels_) + " channels, got " + x.shape().str());
    const Var<T> identity = in_conv_ ? in_conv_->forward(x) : x;
    Var<T> trunk = shifted_swin_->forward(swin_->forward(identity));
    for (const auto* unit : trunk_) trunk = unit->forward(trunk);
    Var<T> mask = identity;
    for (const auto* unit : mask_) mask = unit->forward(mask);
    mask = ops::sigmoid(mask_conv_->forward(mask));
    Var<T> out = ops::add(ops::mul(trunk, mask), identity);
    if (out_conv_) out = out_conv_->forward(out);
    return {out, mask};
}

template <typename T>
Var<T> SWAtten<T>::forward(const Var<T>& x) const {
    return forward_with_mask(x).first;
}

#define TCM_INSTANTIATE_NN(T)              \
    template class Module<T>;              \
    template class Conv2d<T>;              \
    template class SubpelConv<T>;          \
    template class LayerNorm<T>;           \
    template class GDN<T>;                 \
    template class ResidualBlock<T>;       \
    template class ResidualBlockStride<T>; \
    template class ResidualBlockUpsample<T>; \
    template class SwinBlock<T>;           \
    template class TCMStage<T>;            \
    template class TCMBlock<T>;            \
    template class ResidualUnit<T>;        \
    template class SWAtten<T>;

TCM_INSTANTIATE_NN(float)
TCM_INSTANTIATE_NN(double)

}  // namespace tcm::nn
