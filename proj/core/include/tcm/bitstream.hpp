#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tcm {

inline constexpr char kBitstreamMagic[4] = {'T', 'C', 'M', 'B'};
inline constexpr std::uint16_t kBitstreamVersion = 1;

struct BitstreamHeader {
    std::uint16_t version = kBitstreamVersion;
    std::uint16_t flags = 0;
    std::uint64_t model_id = 0;
    std::uint32_t height = 0;  // original image size
    std::uint32_t width = 0;
    std::uint32_t padded_height = 0;
    std::uint32_t padded_width = 0;
    std::uint16_t num_slices = 0;
};

/// Decoded container: the hyper-latent stream followed by one stream per
/// slice, in coding order.
struct Bitstream {
    BitstreamHeader header;
    std::vector<std::uint8_t> z_stream;
    std::vector<std::vector<std::uint8_t>> slice_streams;
};

inline constexpr std::size_t kBitstreamHeaderBytes = 36;

/// Little-endian layout documented in docs/bitstream.md. Each stream carries
/// its length and CRC-32.
std::vector<std::uint8_t> serialize(const Bitstream& bitstream);

/// Throws FormatError for bad magic, version, sizes or lengths and
/// DecodeError (with the stream index) for a checksum mismatch.
Bitstream deserialize(std::span<const std::uint8_t> bytes);

/// Only the fixed header; enough to check the model id cheaply.
BitstreamHeader read_header(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace tcm
