#pragma once

#include <cstddef>
#include <cstdint>

namespace tcm::coder {

// Status-code versions of the reference encode/decode with the argument
// layout of kernel_abi.h. They never throw.
int abi_encode(const std::int32_t* symbols, std::size_t count, const std::uint32_t* indices, const std::uint32_t* cdf,
               const std::uint32_t* offsets, const std::uint32_t* lengths, const std::int32_t* value_offsets,
               std::size_t num_tables, std::uint8_t* out, std::size_t capacity, std::size_t* out_len);

int abi_decode(const std::uint8_t* data, std::size_t size, const std::uint32_t* indices, std::size_t count,
               const std::uint32_t* cdf, const std::uint32_t* offsets, const std::uint32_t* lengths,
               const std::int32_t* value_offsets, std::size_t num_tables, std::int32_t* symbols);

}  // namespace tcm::coder
