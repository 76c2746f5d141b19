/* C interface of an entropy-coder kernel. A kernel library exports these
 * three symbols and must produce byte streams identical to the reference
 * coder for identical inputs.
 *
 * Tables are passed flat. For table t the cumulative frequencies are
 *   cdf[cdf_offsets[t]] .. cdf[cdf_offsets[t] + cdf_lengths[t] - 1]
 * with the first entry 0 and the last 65536. Coding index 0 is the low
 * escape, the last coding index is the high escape, and coding index j in
 * between stands for the value value_offsets[t] + j - 1. Values outside the
 * table are sent as an escape followed by 16 raw bits (int16 two's
 * complement). indices[k] selects the table of symbols[k].
 *
 * All buffers are owned by the caller; entry points are reentrant. */
#ifndef TCM_KERNEL_ABI_H
#define TCM_KERNEL_ABI_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define TCM_KERNEL_ABI_VERSION 1u

enum {
    TCM_KERNEL_OK = 0,
    TCM_KERNEL_ERR_ARGUMENT = 1,         /* malformed table, index or symbol out of range */
    TCM_KERNEL_ERR_BUFFER_TOO_SMALL = 2, /* *out_len holds the required size */
    TCM_KERNEL_ERR_CORRUPT = 3           /* stream truncated, overlong or inconsistent */
};

uint32_t tcm_kernel_abi_version(void);

int tcm_kernel_encode(const int32_t* symbols, size_t count, const uint32_t* indices, const uint32_t* cdf,
                      const uint32_t* cdf_offsets, const uint32_t* cdf_lengths, const int32_t* value_offsets,
                      size_t num_tables, uint8_t* out, size_t out_capacity, size_t* out_len);

int tcm_kernel_decode(const uint8_t* data, size_t size, const uint32_t* indices, size_t count, const uint32_t* cdf,
                      const uint32_t* cdf_offsets, const uint32_t* cdf_lengths, const int32_t* value_offsets,
                      size_t num_tables, int32_t* symbols);

#ifdef __cplusplus
}
#endif

#endif
