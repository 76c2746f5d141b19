#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tcm::coder {

inline constexpr int kPrecision = 16;
inline constexpr std::uint32_t kTotal = 1u << kPrecision;
/// Counts reserved for each of the two escape symbols (2^-9 in total).
inline constexpr std::uint32_t kEscapeCount = 64;
/// Largest nominal support of a table; escapes cover everything beyond.
inline constexpr int kMaxRadius = 255;
/// Escaped values are sent as 16 raw bits.
inline constexpr int kEscapeMin = -32768;
inline constexpr int kEscapeMax = 32767;

/// One discrete distribution in coding form. Coding index 0 is the low
/// escape, the last index the high escape; index j in between codes the
/// value `value_offset + j - 1`.
struct QuantizedCDF {
    std::vector<std::uint32_t> cdf;  // size symbols + 1, cdf[0] = 0, back() = kTotal
    int value_offset = 0;

    int coding_symbols() const { return static_cast<int>(cdf.size()) - 1; }
    int regular_symbols() const { return coding_symbols() - 2; }
    int min_value() const { return value_offset; }
    int max_value() const { return value_offset + regular_symbols() - 1; }
    int escape_high() const { return coding_symbols() - 1; }
    std::uint32_t count(int index) const { return cdf[index + 1] - cdf[index]; }
};

/// Quantizes a (not necessarily normalized) pmf over consecutive values
/// starting at `value_offset`. Each regular symbol gets
/// max(1, round(p * (2^16 - 128) / sum p)) counts and the rounding surplus or
/// deficit is absorbed by the most probable symbol (lowest index on ties).
QuantizedCDF quantize_pmf(const std::vector<double>& pmf, int value_offset);

/// Zero-centred discretized Gaussian of scale sigma over
/// [-radius, radius], radius = gaussian_support_radius(sigma).
QuantizedCDF gaussian_cdf(double sigma);

/// Integer coding symbol of a latent value: round(v - mean), clamped to the
/// escape range.
int quantize_symbol(float value, float mean);

/// Model cost of one value in bits, including the escape payload.
double symbol_cost_bits(const QuantizedCDF& cdf, int value);

/// Flat table set as exchanged with a coder backend.
struct CdfTables {
    std::vector<std::uint32_t> cdf;
    std::vector<std::uint32_t> offsets;
    std::vector<std::uint32_t> lengths;
    std::vector<std::int32_t> value_offsets;

    std::uint32_t add(const QuantizedCDF& table);
    std::size_t size() const { return offsets.size(); }
    /// Throws std::invalid_argument if any table breaks the CDF invariants.
    void validate() const;
    QuantizedCDF table(std::size_t i) const;
};

/// 32-bit carry-less range encoder over 16-bit frequencies.
class RangeEncoder {
public:
    void encode(std::uint32_t cum, std::uint32_t freq);
    /// 16 equiprobable bits.
    void encode_raw16(std::uint32_t bits);
    std::vector<std::uint8_t> finish();

private:
    void normalize();

    std::uint32_t low_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
    std::vector<std::uint8_t> out_;
};

/// Throws DecodeError on truncated or inconsistent input. A well-formed
/// stream is consumed exactly, so leftover bytes are reported by finish().
class RangeDecoder {
public:
    explicit RangeDecoder(std::span<const std::uint8_t> data);
    /// Locates the coding index of the next symbol in `cdf` (size n + 1) and
    /// consumes it.
    int decode(const std::uint32_t* cdf, int coding_symbols);
    std::uint32_t decode_raw16();
    void finish() const;

private:
    std::uint8_t next();
    void normalize();

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
    std::uint32_t low_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
    std::uint32_t code_ = 0;
};

/// Reference implementations of the flat-table entry points.
std::vector<std::uint8_t> encode_symbols(std::span<const std::int32_t> symbols, std::span<const std::uint32_t> indices,
                                         const CdfTables& tables);
std::vector<std::int32_t> decode_symbols(std::span<const std::uint8_t> data, std::span<const std::uint32_t> indices,
                                         const CdfTables& tables);

/// Upper bound on the encoded size of `count` symbols.
std::size_t max_encoded_size(std::size_t count);

/// Either the in-process reference coder or a kernel library loaded through
/// the C interface in kernel_abi.h. Both produce identical bytes.
class CoderBackend {
public:
    virtual ~CoderBackend() = default;
    virtual std::string name() const = 0;
    virtual std::vector<std::uint8_t> encode(std::span<const std::int32_t> symbols,
                                             std::span<const std::uint32_t> indices, const CdfTables& tables) const = 0;
    virtual std::vector<std::int32_t> decode(std::span<const std::uint8_t> data, std::span<const std::uint32_t> indices,
                                             const CdfTables& tables) const = 0;
};

std::unique_ptr<CoderBackend> reference_backend();
/// Resolved through the dynamic loader's search path.
inline constexpr const char* kDefaultKernelLibrary = "libtcm_coder_kernel.so";

/// Loads a kernel library; an empty path means kDefaultKernelLibrary.
/// Throws ConfigError when the library is missing, lacks the entry points or
/// reports a different ABI version.
std::unique_ptr<CoderBackend> kernel_backend(const std::string& path = "");
/// "reference" or "kernel".
std::unique_ptr<CoderBackend> make_backend(const std::string& kind, const std::string& kernel_path = "");

}  // namespace tcm::coder
