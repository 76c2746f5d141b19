#pragma once

#include <cstdint>

#include "tcm/image.hpp"

namespace tcm {

/// Deterministic procedural photo stand-in: a smooth colour field with
/// overlapping shapes, soft edges, a striped texture patch and mild sensor
/// noise. Used for toy training sets and tests where real photos are not
/// available.
Image synthetic_image(int width, int height, std::uint64_t seed);

}  // namespace tcm
