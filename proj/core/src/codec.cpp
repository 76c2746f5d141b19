#include "tcm/codec.hpp"

#include <cstring>
#include <unordered_map>

#include "tcm/checkpoint.hpp"
#include "tcm/errors.hpp"
#include "tcm/image.hpp"

namespace tcm {

namespace {

/// One coding table per distinct sigma value (by bit pattern).
class GaussianTables {
public:
    std::uint32_t index_of(float sigma) {
        std::uint32_t bits;
        std::memcpy(&bits, &sigma, sizeof bits);
        const auto [it, inserted] = by_bits_.try_emplace(bits, 0);
        if (inserted) it->second = tables_.add(coder::gaussian_cdf(sigma));
        return it->second;
    }
    const coder::CdfTables& tables() const { return tables_; }

private:
    std::unordered_map<std::uint32_t, std::uint32_t> by_bits_;
    coder::CdfTables tables_;
};

std::vector<std::uint32_t> channel_indices(const Shape& s) {
    std::vector<std::uint32_t> idx(s.numel());
    for (int c = 0; c < s.c; ++c)
        std::fill_n(idx.begin() + static_cast<std::ptrdiff_t>(c * s.plane()), s.plane(), static_cast<std::uint32_t>(c));
    return idx;
}

template <typename F>
auto with_stream_index(int index, F&& f) {
    try {
        return f();
    } catch (const DecodeError& e) {
        const std::string name = index < 0 ? "hyper stream" : "slice " + std::to_string(index);
        throw DecodeError(name + ": " + e.what(), index);
    }
}

}  // namespace

Codec::Codec(const TCMModel<float>& model, const coder::CoderBackend& backend)
    : model_(model), backend_(backend), model_id_(tcm::model_id(model)) {
    const auto& prior = model.prior();
    for (int c = 0; c < prior.channels(); ++c) {
        const auto [lo, hi] = prior.support(c);
        z_tables_.add(coder::quantize_pmf(prior.pmf(c, lo, hi), lo));
    }
}

std::vector<std::uint8_t> Codec::encode(const Tensor<float>& image, CodecTrace* trace) const {
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != 3) throw ConfigError("encode: expects a (1, 3, H, W) image, got " + s.str());
    NoGradGuard no_grad;
    const ModelConfig& cfg = model_.config();
    const Tensor<float> padded = pad_image(image);

    Bitstream out;
    out.header.model_id = model_id_;
    out.header.height = static_cast<std::uint32_t>(s.h);
    out.header.width = static_cast<std::uint32_t>(s.w);
    out.header.padded_height = static_cast<std::uint32_t>(padded.shape().h);
    out.header.padded_width = static_cast<std::uint32_t>(padded.shape().w);
    out.header.num_slices = static_cast<std::uint16_t>(cfg.slices);

    const Var<float> y = model_.analysis(Var<float>(padded));
    const Var<float> z = model_.hyper_analysis(y);

    // Hyper-latent: plain rounding, one table per channel.
    std::vector<std::int32_t> z_symbols(z.value().size());
    Tensor<float> z_hat(z.shape());
    for (std::size_t i = 0; i < z_symbols.size(); ++i) {
        z_symbols[i] = coder::quantize_symbol(z.value().data()[i], 0.0f);
        z_hat.data()[i] = static_cast<float>(z_symbols[i]);
    }
    out.z_stream = backend_.encode(z_symbols, channel_indices(z.shape()), z_tables_);

    const auto [f_mean, f_scale] = model_.hyper_synthesis(Var<float>(z_hat));
    const int w = cfg.slice_width();
    std::vector<Var<float>> y_bar;
    if (trace) {
        trace->y = y.value();
        trace->z_hat = z_hat;
        trace->y_hat.clear();
        trace->y_bar.clear();
    }
    for (int i = 0; i < cfg.slices; ++i) {
        const SliceNetwork<float>& net = model_.slice(i);
        const SliceParameters<float> p = net.predict(f_mean, f_scale, y_bar, BoundGradient::kExact);
        const Tensor<float> y_i = ops::slice_channels(y, i * w, w).value();
        const Tensor<float>& mu = p.mean.value();
        const Tensor<float>& sigma = p.scale.value();
        GaussianTables tables;
        std::vector<std::int32_t> symbols(y_i.size());
        std::vector<std::uint32_t> indices(y_i.size());
        Tensor<float> y_hat(y_i.shape());
        for (std::size_t k = 0; k < symbols.size(); ++k) {
            symbols[k] = coder::quantize_symbol(y_i.data()[k], mu.data()[k]);
            indices[k] = tables.index_of(sigma.data()[k]);
            y_hat.data()[k] = static_cast<float>(symbols[k]) + mu.data()[k];
        }
        out.slice_streams.push_back(backend_.encode(symbols, indices, tables.tables()));
        const Var<float> y_hat_var(y_hat);
        y_bar.push_back(ops::add(y_hat_var, net.residual(p.mean_support, y_hat_var)));
        if (trace) {
            trace->y_hat.push_back(y_hat);
            trace->y_bar.push_back(y_bar.back().value());
        }
    }
    return serialize(out);
}

Tensor<float> Codec::decode(std::span<const std::uint8_t> bytes, CodecTrace* trace) const {
    const ModelConfig& cfg = model_.config();
    const BitstreamHeader header = read_header(bytes);
    if (header.model_id != model_id_)
        throw FormatError("bitstream was produced by a different model (id mismatch)");
    if (header.num_slices != cfg.slices) throw FormatError("bitstream slice count does not match the model");
    const Bitstream b = deserialize(bytes);
    NoGradGuard no_grad;

    const int yh = static_cast<int>(header.padded_height / 16), yw = static_cast<int>(header.padded_width / 16);
    const Shape z_shape{1, cfg.Z, yh / 4, yw / 4};
    const std::vector<std::int32_t> z_symbols = with_stream_index(
        -1, [&] { return backend_.decode(b.z_stream, channel_indices(z_shape), z_tables_); });
    Tensor<float> z_hat(z_shape);
    for (std::size_t i = 0; i < z_symbols.size(); ++i) z_hat.data()[i] = static_cast<float>(z_symbols[i]);

    const auto [f_mean, f_scale] = model_.hyper_synthesis(Var<float>(z_hat));
    const int w = cfg.slice_width();
    std::vector<Var<float>> y_bar;
    if (trace) {
        trace->y = Tensor<float>();
        trace->z_hat = z_hat;
        trace->y_hat.clear();
        trace->y_bar.clear();
    }
    for (int i = 0; i < cfg.slices; ++i) {
        const SliceNetwork<float>& net = model_.slice(i);
        const SliceParameters<float> p = net.predict(f_mean, f_scale, y_bar, BoundGradient::kExact);
        const Tensor<float>& mu = p.mean.value();
        const Tensor<float>& sigma = p.scale.value();
        GaussianTables tables;
        std::vector<std::uint32_t> indices(mu.size());
        for (std::size_t k = 0; k < indices.size(); ++k) indices[k] = tables.index_of(sigma.data()[k]);
        const std::vector<std::int32_t> symbols =
            with_stream_index(i, [&] { return backend_.decode(b.slice_streams[i], indices, tables.tables()); });
        Tensor<float> y_hat(Shape{1, w, yh, yw});
        for (std::size_t k = 0; k < symbols.size(); ++k)
            y_hat.data()[k] = static_cast<float>(symbols[k]) + mu.data()[k];
        const Var<float> y_hat_var(y_hat);
        y_bar.push_back(ops::add(y_hat_var, net.residual(p.mean_support, y_hat_var)));
        if (trace) {
            trace->y_hat.push_back(y_hat);
            trace->y_bar.push_back(y_bar.back().value());
        }
    }
    const Tensor<float> x_hat = model_.synthesis(ops::concat_channels(y_bar)).value();
    const Tensor<float> cropped =
        crop_image(x_hat, static_cast<int>(header.height), static_cast<int>(header.width));
    return to_tensor(to_image(cropped));
}

}  // namespace tcm
