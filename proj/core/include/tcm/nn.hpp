#pragma once

#include <deque>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tcm/attention.hpp"
#include "tcm/ops.hpp"

namespace tcm::nn {

/// Weight initialization family for convolutions and projections.
///   kUniformFanIn: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
///   kHeNormal:     N(0, 2/fan_in) weights, zero biases.
enum class InitScheme { kUniformFanIn, kHeNormal };

struct InitContext {
    explicit InitContext(std::uint64_t seed, InitScheme scheme = InitScheme::kUniformFanIn)
        : rng(seed), scheme(scheme) {}
    std::mt19937_64 rng;
    InitScheme scheme;

    double uniform(double lo, double hi);
    double normal(double stddev);
};

template <typename T>
struct NamedParameter {
    std::string name;
    Var<T>* var;
};

/// Owner of named parameters and child modules. Parameter order is the
/// registration order, depth first, which makes it stable across builds.
template <typename T>
class Module {
public:
    Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;
    virtual ~Module() = default;

    std::vector<NamedParameter<T>> parameters();
    std::size_t parameter_count() const;
    void zero_grad();

protected:
    Var<T>& add_parameter(std::string name, Tensor<T> value);

    template <typename M, typename... Args>
    M& add_module(std::string name, Args&&... args) {
        auto child = std::make_unique<M>(std::forward<Args>(args)...);
        M& ref = *child;
        children_.emplace_back(std::move(name), std::move(child));
        return ref;
    }

private:
    void collect(const std::string& prefix, std::vector<NamedParameter<T>>& out);

    std::deque<std::pair<std::string, Var<T>>> params_;
    std::vector<std::pair<std::string, std::unique_ptr<Module<T>>>> children_;
};

template <typename T>
class Conv2d : public Module<T> {
public:
    Conv2d(InitContext& init, int in, int out, int kernel, int stride = 1, bool bias = true);
    Var<T> forward(const Var<T>& x) const;

    int in_channels() const { return in_; }
    int out_channels() const { return out_; }
    Var<T>& weight() { return *weight_; }
    Var<T>& bias() { return *bias_; }

private:
    int in_, out_, kernel_, stride_;
    Var<T>* weight_;
    Var<T>* bias_ = nullptr;
};

/// 3x3 convolution to out*r*r channels followed by pixel shuffle.
template <typename T>
class SubpelConv : public Module<T> {
public:
    SubpelConv(InitContext& init, int in, int out, int factor = 2);
    Var<T> forward(const Var<T>& x) const;

private:
    Conv2d<T>& conv_;
    int factor_;
};

template <typename T>
class LayerNorm : public Module<T> {
public:
    explicit LayerNorm(int channels);
    Var<T> forward(const Var<T>& x) const;

private:
    Var<T>& gamma_;
    Var<T>& beta_;
};

/// Generalized divisive normalization, y = x / sqrt(beta + gamma * x^2) with
/// channel mixing by a 1x1 map. The inverse variant multiplies instead.
/// beta and gamma are kept nonnegative by a squared parametrization.
template <typename T>
class GDN : public Module<T> {
public:
    GDN(int channels, bool inverse);
    Var<T> forward(const Var<T>& x) const;

private:
    bool inverse_;
    Var<T>& beta_p_;
    Var<T>& gamma_p_;
};

/// conv3x3 - LeakyReLU - conv3x3 - LeakyReLU plus identity.
template <typename T>
class ResidualBlock : public Module<T> {
public:
    ResidualBlock(InitContext& init, int channels);
    Var<T> forward(const Var<T>& x) const;

private:
    Conv2d<T>& conv1_;
    Conv2d<T>& conv2_;
};

/// Stride-2 residual block: conv3x3/2 (in -> mid) - LeakyReLU - conv3x3
/// (mid -> out) - GDN, plus a strided 1x1 shortcut.
template <typename T>
class ResidualBlockStride : public Module<T> {
public:
    ResidualBlockStride(InitContext& init, int in, int mid, int out);
    Var<T> forward(const Var<T>& x) const;

private:
    Conv2d<T>& conv1_;
    Conv2d<T>& conv2_;
    GDN<T>& gdn_;
    Conv2d<T>& skip_;
};

/// x2 upsampling residual block: subpel (in -> mid) - LeakyReLU - conv3x3
/// (mid -> out) - IGDN, plus a subpel shortcut.
template <typename T>
class ResidualBlockUpsample : public Module<T> {
public:
    ResidualBlockUpsample(InitContext& init, int in, int mid, int out);
    Var<T> forward(const Var<T>& x) const;

private:
    SubpelConv<T>& subpel_;
    Conv2d<T>& conv_;
    GDN<T>& igdn_;
    SubpelConv<T>& skip_;
};

/// How a swin block treats maps that are not a whole number of windows.
enum class WindowPolicy {
    kStrict,       // reject: extent must be a positive multiple of the window
    kPadToWindow,  // zero-pad bottom/right, mask the padding as keys, crop back
};

/// Pre-norm swin layer: x + WMSA(LN(x)), then x + MLP(LN(x)) with a GELU MLP
/// of hidden width 2C.
template <typename T>
class SwinBlock : public Module<T> {
public:
    SwinBlock(InitContext& init, int channels, int head_dim, int window, bool shifted,
              WindowPolicy policy = WindowPolicy::kStrict);
    Var<T> forward(const Var<T>& x) const;

    int heads() const { return heads_; }

private:
    int channels_, heads_, window_;
    bool shifted_;
    WindowPolicy policy_;
    LayerNorm<T>& norm1_;
    Var<T>& qkv_w_;
    Var<T>& qkv_b_;
    Var<T>& proj_w_;
    Var<T>& proj_b_;
    Var<T>& rel_bias_;
    LayerNorm<T>& norm2_;
    Conv2d<T>& fc1_;
    Conv2d<T>& fc2_;
};

struct TCMConfig {
    int channels = 128;
    int window = 8;
    int head_dim = 32;
    WindowPolicy policy = WindowPolicy::kStrict;

    /// Throws ConfigError for odd channels or a head dim not dividing C/2.
    void validate() const;
};

/// One mixture stage: 1x1 conv, even channel split, residual branch on the
/// first half and swin branch on the second, concat, 1x1 fuse, skip-add.
template <typename T>
class TCMStage : public Module<T> {
public:
    TCMStage(InitContext& init, const TCMConfig& cfg, bool shifted);
    Var<T> forward(const Var<T>& x) const;

    Conv2d<T>& entry_conv() { return entry_; }
    Conv2d<T>& fuse_conv() { return fuse_; }
    /// Test hook: replaces both branch networks by the identity.
    void set_identity_branches(bool on) { identity_branches_ = on; }

private:
    int half_;
    Conv2d<T>& entry_;
    ResidualBlock<T>& cnn_;
    SwinBlock<T>& trans_;
    Conv2d<T>& fuse_;
    bool identity_branches_ = false;
};

/// Two stages, W-MSA then SW-MSA.
template <typename T>
class TCMBlock : public Module<T> {
public:
    TCMBlock(InitContext& init, const TCMConfig& cfg);
    Var<T> forward(const Var<T>& x) const;

    TCMStage<T>& stage(int i) { return i == 0 ? first_ : second_; }
    int channels() const { return channels_; }

private:
    int channels_;
    TCMStage<T>& first_;
    TCMStage<T>& second_;
};

/// Bottleneck unit: 1x1 (N -> N/2) ReLU 3x3 ReLU 1x1 (-> N), add, ReLU.
template <typename T>
class ResidualUnit : public Module<T> {
public:
    ResidualUnit(InitContext& init, int channels);
    Var<T> forward(const Var<T>& x) const;

private:
    Conv2d<T>& a_;
    Conv2d<T>& b_;
    Conv2d<T>& c_;
};

struct SWAttenConfig {
    int channels = 320;     // input and output width
    int squeeze = 128;      // internal width; <= 0 disables the squeeze convs
    int head_dim = 16;
    int window = 8;
};

/// Swin-window attention module of a slice network. The input is squeezed
/// to the internal width. A trunk (W-MSA and SW-MSA swin layers, then three
/// residual units) is gated by a sigmoid mask (three residual units and a
/// 1x1 conv), the squeezed input is added back and the result is unsqueezed.
template <typename T>
class SWAtten : public Module<T> {
public:
    SWAtten(InitContext& init, const SWAttenConfig& cfg);
    Var<T> forward(const Var<T>& x) const;
    /// Same as forward and also returns the gating mask.
    std::pair<Var<T>, Var<T>> forward_with_mask(const Var<T>& x) const;

    int internal_width() const { return width_; }

private:
    int channels_, width_;
    Conv2d<T>* in_conv_ = nullptr;
    Conv2d<T>* out_conv_ = nullptr;
    SwinBlock<T>* swin_ = nullptr;
    SwinBlock<T>* shifted_swin_ = nullptr;
    std::vector<ResidualUnit<T>*> trunk_;
    std::vector<ResidualUnit<T>*> mask_;
    Conv2d<T>* mask_conv_ = nullptr;
};

}  // namespace tcm::nn
