#include "tcm/model.hpp"

#include "tcm/errors.hpp"

namespace tcm {

namespace {

nn::TCMConfig main_tcm(const ModelConfig& cfg, int level) {
    return {cfg.C, cfg.window_main, cfg.head_dims_main[level], nn::WindowPolicy::kStrict};
}

// The hyper path runs at 1/32 of the image size, which is not always a whole
// number of windows, so its attention pads internally.
nn::TCMConfig hyper_tcm(const ModelConfig& cfg) {
    return {cfg.C, cfg.window_hyper, cfg.head_dim_hyper, nn::WindowPolicy::kPadToWindow};
}

const ModelConfig& validated(const ModelConfig& cfg) {
    cfg.validate();
    return cfg;
}

template <typename T>
Var<T> uniform_noise(const Shape& shape, std::mt19937_64* rng) {
    if (!rng) throw ConfigError("forward: a random generator is required for noise quantization");
    std::uniform_real_distribution<double> dist(-0.5, 0.5);
    Tensor<T> t(shape);
    for (auto& v : t.storage()) v = static_cast<T>(dist(*rng));
    return ops::constant(std::move(t));
}

}  // namespace

// ---------------------------------------------------------------- transforms

template <typename T>
AnalysisTransform<T>::AnalysisTransform(nn::InitContext& init, const ModelConfig& cfg) {
    for (int level = 0; level < 3; ++level) {
        const std::string tag = std::to_string(level);
        down_.push_back(&this->template add_module<nn::ResidualBlockStride<T>>("rbs" + tag, init, level == 0 ? 3 : cfg.C,
                                                                                cfg.rbs_mid(), cfg.C));
        tcm_.push_back(&this->template add_module<nn::TCMBlock<T>>("tcm" + tag, init, main_tcm(cfg, level)));
    }
    out_ = &this->template add_module<nn::Conv2d<T>>("out", init, cfg.C, cfg.M, 3, 2);
}

template <typename T>
Var<T> AnalysisTransform<T>::forward(const Var<T>& x) const {
    const Shape& s = x.shape();
    if (s.c != 3 || s.h % 64 != 0 || s.w % 64 != 0)
        throw ConfigError("analysis: expects a 3-channel image padded to a multiple of 64, got " + s.str());
    Var<T> h = x;
    for (int level = 0; level < 3; ++level) h = tcm_[level]->forward(down_[level]->forward(h));
    return out_->forward(h);
}

template <typename T>
SynthesisTransform<T>::SynthesisTransform(nn::InitContext& init, const ModelConfig& cfg) : latent_channels_(cfg.M) {
    for (int level = 0; level < 3; ++level) {
        const std::string tag = std::to_string(level);
        up_.push_back(&this->template add_module<nn::ResidualBlockUpsample<T>>("rbu" + tag, init,
                                                                                level == 0 ? cfg.M : cfg.C,
                                                                                cfg.rbs_mid(), cfg.C));
        tcm_.push_back(&this->template add_module<nn::TCMBlock<T>>("tcm" + tag, init, main_tcm(cfg, 3 + level)));
    }
    out_ = &this->template add_module<nn::SubpelConv<T>>("out", init, cfg.C, 3, 2);
}

template <typename T>
Var<T> SynthesisTransform<T>::forward(const Var<T>& y) const {
    if (y.shape().c != latent_channels_)
        throw ConfigError("synthesis: expects " + std::to_string(latent_channels_) + " channels, got " +
                          y.shape().str());
    Var<T> h = y;
    for (int level = 0; level < 3; ++level) h = tcm_[level]->forward(up_[level]->forward(h));
    return out_->forward(h);
}

template <typename T>
HyperAnalysis<T>::HyperAnalysis(nn::InitContext& init, const ModelConfig& cfg)
    : down_(this->template add_module<nn::ResidualBlockStride<T>>("rbs", init, cfg.M, cfg.rbs_mid(), cfg.C)),
      tcm_(this->template add_module<nn::TCMBlock<T>>("tcm", init, hyper_tcm(cfg))),
      out_(this->template add_module<nn::Conv2d<T>>("out", init, cfg.C, cfg.Z, 3, 2)) {}

template <typename T>
Var<T> HyperAnalysis<T>::forward(const Var<T>& y) const {
    return out_.forward(tcm_.forward(down_.forward(y)));
}

template <typename T>
HyperSynthesis<T>::HyperSynthesis(nn::InitContext& init, const ModelConfig& cfg)
    : up_(this->template add_module<nn::ResidualBlockUpsample<T>>("rbu", init, cfg.Z, cfg.rbs_mid(), cfg.C)),
      tcm_(this->template add_module<nn::TCMBlock<T>>("tcm", init, hyper_tcm(cfg))),
      out_(this->template add_module<nn::SubpelConv<T>>("out", init, cfg.C, cfg.M, 2)) {}

template <typename T>
Var<T> HyperSynthesis<T>::forward(const Var<T>& z_hat) const {
    return out_.forward(tcm_.forward(up_.forward(z_hat)));
}

template <typename T>
SliceTransform<T>::SliceTransform(nn::InitContext& init, int in, int hidden1, int hidden2, int out)
    : a_(this->template add_module<nn::Conv2d<T>>("conv1", init, in, hidden1, 3)),
      b_(this->template add_module<nn::Conv2d<T>>("conv2", init, hidden1, hidden2, 3)),
      c_(this->template add_module<nn::Conv2d<T>>("conv3", init, hidden2, out, 3)) {}

template <typename T>
Var<T> SliceTransform<T>::forward(const Var<T>& x) const {
    return c_.forward(ops::gelu(b_.forward(ops::gelu(a_.forward(x)))));
}

// ---------------------------------------------------------------- slices

template <typename T>
SliceNetwork<T>::SliceNetwork(nn::InitContext& init, const ModelConfig& cfg, int index)
    : index_(index), support_(cfg.support_channels(index)), width_(cfg.slice_width()) {
    if (index < 0 || index >= cfg.slices) throw ConfigError("slice index " + std::to_string(index) + " out of range");
    if (cfg.attention) {
        const nn::SWAttenConfig ac{support_, cfg.squeeze_channels, cfg.attention_head_dim, cfg.attention_window};
        atten_mean_ = &this->template add_module<nn::SWAtten<T>>("atten_mean", init, ac);
        atten_scale_ = &this->template add_module<nn::SWAtten<T>>("atten_scale", init, ac);
    }
    cc_mean_ = &this->template add_module<SliceTransform<T>>("cc_mean", init, support_, cfg.slice_hidden1,
                                                            cfg.slice_hidden2, width_);
    cc_scale_ = &this->template add_module<SliceTransform<T>>("cc_scale", init, support_, cfg.slice_hidden1,
                                                             cfg.slice_hidden2, width_);
    if (cfg.residual_prediction) {
        lrp_a_ = &this->template add_module<nn::Conv2d<T>>("lrp1", init, support_ + width_, cfg.slice_hidden1, 3);
        lrp_b_ = &this->template add_module<nn::Conv2d<T>>("lrp2", init, cfg.slice_hidden1, width_, 3);
    }
    // Conditioning width accounting, checked against the layers actually built.
    if (support_ != cfg.M + index * (cfg.M / cfg.slices) || cc_mean_->in_channels() != support_ ||
        cc_scale_->in_channels() != support_ || (lrp_a_ && lrp_a_->in_channels() != support_ + width_))
        throw ConfigError("slice " + std::to_string(index) + ": conditioning width mismatch");
}

template <typename T>
SliceParameters<T> SliceNetwork<T>::predict(const Var<T>& f_mean, const Var<T>& f_scale,
                                            const std::vector<Var<T>>& previous, BoundGradient bound) const {
    if (static_cast<int>(previous.size()) != index_)
        throw ConfigError("slice " + std::to_string(index_) + ": needs " + std::to_string(index_) +
                          " previous slices, got " + std::to_string(previous.size()));
    std::vector<Var<T>> mean_parts{f_mean}, scale_parts{f_scale};
    for (const auto& p : previous) {
        mean_parts.push_back(p);
        scale_parts.push_back(p);
    }
    Var<T> mean_support = ops::concat_channels(mean_parts);
    Var<T> scale_support = ops::concat_channels(scale_parts);
    if (mean_support.shape().c != support_) throw ConfigError("slice support width mismatch");
    if (atten_mean_) {
        mean_support = atten_mean_->forward(mean_support);
        scale_support = atten_scale_->forward(scale_support);
    }
    SliceParameters<T> out;
    out.mean = cc_mean_->forward(mean_support);
    out.scale = ops::lower_bound(cc_scale_->forward(scale_support), T(kScaleFloor), bound);
    out.mean_support = mean_support;
    return out;
}

template <typename T>
Var<T> SliceNetwork<T>::residual(const Var<T>& mean_support, const Var<T>& y_hat) const {
    if (!lrp_a_) return ops::constant(Tensor<T>(y_hat.shape()));
    const Var<T> h = ops::gelu(lrp_a_->forward(ops::concat_channels<T>({mean_support, y_hat})));
    return ops::scale(ops::tanh(lrp_b_->forward(h)), T(0.5));
}

// ---------------------------------------------------------------- model

template <typename T>
TCMModel<T>::TCMModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(validated(cfg)),
      init_(seed, cfg.init),
      g_a_(this->template add_module<AnalysisTransform<T>>("g_a", init_, cfg_)),
      g_s_(this->template add_module<SynthesisTransform<T>>("g_s", init_, cfg_)),
      h_a_(this->template add_module<HyperAnalysis<T>>("h_a", init_, cfg_)),
      h_s_mean_(this->template add_module<HyperSynthesis<T>>("h_s_mean", init_, cfg_)),
      h_s_scale_(this->template add_module<HyperSynthesis<T>>("h_s_scale", init_, cfg_)),
      prior_(this->template add_module<FactorizedPrior<T>>("prior", init_, cfg_.Z)) {
    for (int i = 0; i < cfg_.slices; ++i)
        slices_.push_back(
            &this->template add_module<SliceNetwork<T>>("slice" + std::to_string(i), init_, cfg_, i));
}

template <typename T>
const SliceNetwork<T>& TCMModel<T>::slice(int i) const {
    if (i < 0 || i >= cfg_.slices) throw ConfigError("slice index " + std::to_string(i) + " out of range");
    return *slices_[i];
}

template <typename T>
Var<T> TCMModel<T>::analysis(const Var<T>& x) const {
    return g_a_.forward(x);
}

template <typename T>
Var<T> TCMModel<T>::synthesis(const Var<T>& y_bar) const {
    return g_s_.forward(y_bar);
}

template <typename T>
Var<T> TCMModel<T>::hyper_analysis(const Var<T>& y) const {
    return h_a_.forward(y);
}

template <typename T>
std::pair<Var<T>, Var<T>> TCMModel<T>::hyper_synthesis(const Var<T>& z_hat) const {
    return {h_s_mean_.forward(z_hat), h_s_scale_.forward(z_hat)};
}

template <typename T>
ForwardResult<T> TCMModel<T>::forward(const Var<T>& x, const ForwardOptions<T>& options) const {
    const T p_min = T(kLikelihoodFloor);
    ForwardResult<T> r;
    r.y = analysis(x);
    r.z = hyper_analysis(r.y);
    switch (options.quant) {
        case QuantMode::kTrain: {
            r.bits_z = prior_.bits(ops::add(r.z, uniform_noise<T>(r.z.shape(), options.rng)), p_min, options.bound);
            r.z_hat = ops::quantize_ste(r.z, Var<T>());
            break;
        }
        case QuantMode::kNoise: {
            r.z_hat = ops::add(r.z, uniform_noise<T>(r.z.shape(), options.rng));
            r.bits_z = prior_.bits(r.z_hat, p_min, options.bound);
            break;
        }
        case QuantMode::kRound: {
            r.z_hat = ops::quantize_ste(r.z, Var<T>());
            r.bits_z = prior_.bits(r.z_hat, p_min, options.bound);
            break;
        }
    }
    const auto [f_mean, f_scale] = hyper_synthesis(r.z_hat);

    const int w = cfg_.slice_width();
    std::vector<Var<T>> bits;
    for (int i = 0; i < cfg_.slices; ++i) {
        const Var<T> y_i = ops::slice_channels(r.y, i * w, w);
        SliceParameters<T> p = slices_[i]->predict(f_mean, f_scale, r.y_bar, options.bound);
        const Var<T> centered = ops::sub(y_i, p.mean);
        Var<T> y_hat;
        switch (options.quant) {
            case QuantMode::kTrain:
                bits.push_back(ops::gaussian_bits(ops::add(centered, uniform_noise<T>(centered.shape(), options.rng)),
                                                  p.scale, p_min, options.bound));
                y_hat = ops::quantize_ste(y_i, p.mean);
                break;
            case QuantMode::kNoise: {
                const Var<T> noisy = ops::add(centered, uniform_noise<T>(centered.shape(), options.rng));
                bits.push_back(ops::gaussian_bits(noisy, p.scale, p_min, options.bound));
                y_hat = ops::add(p.mean, noisy);
                break;
            }
            case QuantMode::kRound:
                y_hat = ops::quantize_ste(y_i, p.mean);
                bits.push_back(ops::gaussian_bits(ops::sub(y_hat, p.mean), p.scale, p_min, options.bound));
                break;
        }
        const Var<T> residual = slices_[i]->residual(p.mean_support, y_hat);
        r.means.push_back(p.mean);
        r.scales.push_back(p.scale);
        r.y_hat.push_back(y_hat);
        r.residuals.push_back(residual);
        r.y_bar.push_back(ops::add(y_hat, residual));
    }
    r.bits_y = bits[0];
    for (std::size_t i = 1; i < bits.size(); ++i) r.bits_y = ops::add(r.bits_y, bits[i]);
    r.x_hat = synthesis(ops::concat_channels(r.y_bar));
    return r;
}

// ---------------------------------------------------------------- padding

PaddedSize padded_size(int height, int width, int multiple) {
    if (height <= 0 || width <= 0) throw ConfigError("image size must be positive");
    return {(height + multiple - 1) / multiple * multiple, (width + multiple - 1) / multiple * multiple};
}

namespace {
// Mirror index without edge repetition, wrapping periodically.
int mirror(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    return i < n ? i : period - i;
}
}  // namespace

Tensor<float> pad_image(const Tensor<float>& x, int multiple) {
    const Shape& s = x.shape();
    const PaddedSize p = padded_size(s.h, s.w, multiple);
    if (p.height == s.h && p.width == s.w) return x;
    Tensor<float> out(Shape{s.n, s.c, p.height, p.width});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < p.height; ++h)
                for (int w = 0; w < p.width; ++w) out.at(n, c, h, w) = x.at(n, c, mirror(h, s.h), mirror(w, s.w));
    return out;
}

Tensor<float> crop_image(const Tensor<float>& x, int height, int width) {
    const Shape& s = x.shape();
    if (height > s.h || width > s.w) throw ConfigError("crop_image: target larger than input");
    Tensor<float> out(Shape{s.n, s.c, height, width});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < height; ++h)
                for (int w = 0; w < width; ++w) out.at(n, c, h, w) = x.at(n, c, h, w);
    return out;
}

template class AnalysisTransform<float>;
template class AnalysisTransform<double>;
template class SynthesisTransform<float>;
template class SynthesisTransform<double>;
template class HyperAnalysis<float>;
template class HyperAnalysis<double>;
template class HyperSynthesis<float>;
template class HyperSynthesis<double>;
template class SliceTransform<float>;
template class SliceTransform<double>;
template class SliceNetwork<float>;
template class SliceNetwork<double>;
template class TCMModel<float>;
template class TCMModel<double>;

}  // namespace tcm
