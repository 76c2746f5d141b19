// Kernel-interface build of the reference coder. It lets the kernel backend
// and the C interface be exercised without an external kernel library.
#include "coder_abi.hpp"
#include "tcm/kernel_abi.h"

extern "C" {

uint32_t tcm_kernel_abi_version(void) { return TCM_KERNEL_ABI_VERSION; }

int tcm_kernel_encode(const int32_t* symbols, size_t count, const uint32_t* indices, const uint32_t* cdf,
                      const uint32_t* cdf_offsets, const uint32_t* cdf_lengths, const int32_t* value_offsets,
                      size_t num_tables, uint8_t* out, size_t out_capacity, size_t* out_len) {
    return tcm::coder::abi_encode(symbols, count, indices, cdf, cdf_offsets, cdf_lengths, value_offsets, num_tables,
                                  out, out_capacity, out_len);
}

int tcm_kernel_decode(const uint8_t* data, size_t size, const uint32_t* indices, size_t count, const uint32_t* cdf,
                      const uint32_t* cdf_offsets, const uint32_t* cdf_lengths, const int32_t* value_offsets,
                      size_t num_tables, int32_t* symbols) {
    return tcm::coder::abi_decode(data, size, indices, count, cdf, cdf_offsets, cdf_lengths, value_offsets,
                                  num_tables, symbols);
}
}
