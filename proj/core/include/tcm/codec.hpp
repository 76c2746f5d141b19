#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tcm/bitstream.hpp"
#include "tcm/coder.hpp"
#include "tcm/model.hpp"

namespace tcm {

/// Latents seen by one side of the codec, for diagnostics and for checking
/// that encoder and decoder agree.
struct CodecTrace {
    Tensor<float> z_hat;
    std::vector<Tensor<float>> y_hat;  // per slice, round(y - mu) + mu
    std::vector<Tensor<float>> y_bar;  // per slice, y_hat + r
    Tensor<float> y;                   // encoder only
};

/// Real entropy-coded compression with a fixed model. Inputs are single
/// images (1, 3, H, W) in [0, 1] of any size; padding and cropping are
/// handled internally.
class Codec {
public:
    Codec(const TCMModel<float>& model, const coder::CoderBackend& backend);

    std::vector<std::uint8_t> encode(const Tensor<float>& image, CodecTrace* trace = nullptr) const;
    /// Reconstruction quantized to 8-bit levels, cropped to the original size.
    /// FormatError if the stream belongs to another model, DecodeError for a
    /// damaged payload.
    Tensor<float> decode(std::span<const std::uint8_t> bytes, CodecTrace* trace = nullptr) const;

    std::uint64_t model_id() const { return model_id_; }

private:
    const TCMModel<float>& model_;
    const coder::CoderBackend& backend_;
    std::uint64_t model_id_;
    coder::CdfTables z_tables_;
};

}  // namespace tcm
