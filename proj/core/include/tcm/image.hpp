#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tcm/tensor.hpp"

namespace tcm {

/// 8-bit interleaved RGB raster.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // height * width * 3
};

/// PNG (any bit depth/colour type, converted to 8-bit RGB) or binary PPM
/// (P6, maxval 255), chosen by file signature. Throws IoError/FormatError.
Image read_image(const std::string& path);
/// Format chosen by extension: .ppm writes P6, anything else PNG.
void write_image(const std::string& path, const Image& image);

/// (1, 3, H, W) tensor with values k / 255.
Tensor<float> to_tensor(const Image& image);
/// Clamps to [0, 1] and rounds to the nearest 8-bit level.
Image to_image(const Tensor<float>& x);

}  // namespace tcm
