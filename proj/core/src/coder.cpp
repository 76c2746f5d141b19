#include "tcm/coder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <dlfcn.h>
#include <numeric>
#include <stdexcept>

#include "tcm/entropy.hpp"
#include "tcm/errors.hpp"
#include "tcm/kernel_abi.h"
#include "coder_abi.hpp"

namespace tcm::coder {

namespace {

constexpr std::uint32_t kTop = 1u << 24;
constexpr std::uint32_t kBottom = 1u << 16;
constexpr std::uint32_t kRegularTotal = kTotal - 2 * kEscapeCount;

}  // namespace

// ---------------------------------------------------------------- tables

QuantizedCDF quantize_pmf(const std::vector<double>& pmf, int value_offset) {
    if (pmf.empty() || pmf.size() > kRegularTotal) throw std::invalid_argument("quantize_pmf: bad support size");
    double mass = 0;
    for (double p : pmf) mass += std::isfinite(p) && p > 0 ? p : 0;
    const std::size_t n = pmf.size();
    std::vector<std::int64_t> counts(n, 1);
    std::size_t mode = 0;
    double best = -1;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = std::isfinite(pmf[i]) && pmf[i] > 0 ? pmf[i] : 0;
        if (mass > 0) counts[i] = std::max<std::int64_t>(1, std::llround(p * kRegularTotal / mass));
        if (p > best) {
            best = p;
            mode = i;
        }
    }
    std::int64_t surplus = static_cast<std::int64_t>(kRegularTotal) - std::accumulate(counts.begin(), counts.end(),
                                                                                         std::int64_t{0});
    if (surplus >= 0 || counts[mode] + surplus >= 1) {
        counts[mode] += surplus;
    } else {
        // Deficit larger than the mode can give: shave single counts off the
        // largest entries first, round robin, never going below one.
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
        while (surplus < 0)
            for (std::size_t i : order) {
                if (surplus == 0 || counts[i] <= 1) break;
                --counts[i];
                ++surplus;
            }
    }
    QuantizedCDF q;
    q.value_offset = value_offset;
    q.cdf.reserve(n + 3);
    q.cdf.push_back(0);
    q.cdf.push_back(kEscapeCount);
    for (std::int64_t c : counts) q.cdf.push_back(q.cdf.back() + static_cast<std::uint32_t>(c));
    q.cdf.push_back(q.cdf.back() + kEscapeCount);
    return q;
}

QuantizedCDF gaussian_cdf(double sigma) {
    const int radius = gaussian_support_radius(sigma);
    std::vector<double> pmf(2 * radius + 1);
    for (int k = -radius; k <= radius; ++k) pmf[k + radius] = gaussian_interval(k, sigma);
    return quantize_pmf(pmf, -radius);
}

int quantize_symbol(float value, float mean) {
    const float q = std::nearbyint(value - mean);
    if (!(q >= kEscapeMin)) return kEscapeMin;  // also maps NaN
    if (q > kEscapeMax) return kEscapeMax;
    return static_cast<int>(q);
}

double symbol_cost_bits(const QuantizedCDF& cdf, int value) {
    int index;
    double extra = 0;
    if (value < cdf.min_value()) {
        index = 0;
        extra = kPrecision;
    } else if (value > cdf.max_value()) {
        index = cdf.escape_high();
        extra = kPrecision;
    } else {
        index = value - cdf.value_offset + 1;
    }
    return kPrecision - std::log2(static_cast<double>(cdf.count(index))) + extra;
}

std::uint32_t CdfTables::add(const QuantizedCDF& table) {
    offsets.push_back(static_cast<std::uint32_t>(cdf.size()));
    lengths.push_back(static_cast<std::uint32_t>(table.cdf.size()));
    value_offsets.push_back(table.value_offset);
    cdf.insert(cdf.end(), table.cdf.begin(), table.cdf.end());
    return static_cast<std::uint32_t>(offsets.size() - 1);
}

namespace {

/// Returns nullptr when the flat table set is well formed, otherwise a reason.
const char* check_tables(const std::uint32_t* cdf, std::size_t cdf_size, const std::uint32_t* offsets,
                         const std::uint32_t* lengths, const std::int32_t* value_offsets, std::size_t num_tables) {
    for (std::size_t t = 0; t < num_tables; ++t) {
        const std::size_t off = offsets[t], len = lengths[t];
        if (len < 4) return "table has fewer than one regular symbol";
        if (off > cdf_size || len > cdf_size - off) return "table lies outside the cdf array";
        const std::uint32_t* c = cdf + off;
        if (c[0] != 0 || c[len - 1] != kTotal) return "table does not span [0, 2^16]";
        for (std::size_t j = 0; j + 1 < len; ++j)
            if (c[j + 1] <= c[j]) return "table has a zero-count symbol";
        const std::int64_t lo = value_offsets[t];
        const std::int64_t hi = lo + static_cast<std::int64_t>(len) - 4;
        if (lo < kEscapeMin || hi > kEscapeMax) return "table values exceed the escape range";
    }
    return nullptr;
}

}  // namespace

void CdfTables::validate() const {
    if (lengths.size() != offsets.size() || value_offsets.size() != offsets.size())
        throw std::invalid_argument("CdfTables: inconsistent array sizes");
    if (const char* why = check_tables(cdf.data(), cdf.size(), offsets.data(), lengths.data(), value_offsets.data(),
                                       offsets.size()))
        throw std::invalid_argument(std::string("CdfTables: ") + why);
}

QuantizedCDF CdfTables::table(std::size_t i) const {
    QuantizedCDF q;
    q.cdf.assign(cdf.begin() + offsets.at(i), cdf.begin() + offsets[i] + lengths[i]);
    q.value_offset = value_offsets[i];
    return q;
}

// ---------------------------------------------------------------- coder

void RangeEncoder::normalize() {
    while ((low_ ^ (low_ + range_)) < kTop || (range_ < kBottom && ((range_ = -low_ & (kBottom - 1)), true))) {
        out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
        low_ <<= 8;
        range_ <<= 8;
    }
}

void RangeEncoder::encode(std::uint32_t cum, std::uint32_t freq) {
    range_ >>= kPrecision;
    low_ += cum * range_;
    range_ *= freq;
    normalize();
}

void RangeEncoder::encode_raw16(std::uint32_t bits) { encode(bits & 0xFFFFu, 1); }

std::vector<std::uint8_t> RangeEncoder::finish() {
    for (int i = 0; i < 4; ++i) {
        out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
        low_ <<= 8;
    }
    return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> data) : data_(data) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next();
}

std::uint8_t RangeDecoder::next() {
    if (pos_ >= data_.size()) throw DecodeError("range decoder: stream truncated");
    return data_[pos_++];
}

void RangeDecoder::normalize() {
    while ((low_ ^ (low_ + range_)) < kTop || (range_ < kBottom && ((range_ = -low_ & (kBottom - 1)), true))) {
        code_ = (code_ << 8) | next();
        low_ <<= 8;
        range_ <<= 8;
    }
}

int RangeDecoder::decode(const std::uint32_t* cdf, int coding_symbols) {
    range_ >>= kPrecision;
    const std::uint32_t f = (code_ - low_) / range_;
    if (f >= kTotal) throw DecodeError("range decoder: value outside the coding interval");
    // Largest j with cdf[j] <= f.
    const std::uint32_t* it = std::upper_bound(cdf, cdf + coding_symbols + 1, f);
    const int j = static_cast<int>(it - cdf) - 1;
    low_ += cdf[j] * range_;
    range_ *= cdf[j + 1] - cdf[j];
    normalize();
    return j;
}

std::uint32_t RangeDecoder::decode_raw16() {
    range_ >>= kPrecision;
    const std::uint32_t f = (code_ - low_) / range_;
    if (f >= kTotal) throw DecodeError("range decoder: value outside the coding interval");
    low_ += f * range_;
    normalize();
    return f;
}

void RangeDecoder::finish() const {
    if (pos_ != data_.size())
        throw DecodeError("range decoder: " + std::to_string(data_.size() - pos_) + " unused trailing bytes");
}

// ---------------------------------------------------------------- flat API

namespace {

struct TableView {
    const std::uint32_t* cdf;
    const std::uint32_t* offsets;
    const std::uint32_t* lengths;
    const std::int32_t* value_offsets;
    std::size_t num_tables;
};

void encode_into(RangeEncoder& enc, const std::int32_t* symbols, const std::uint32_t* indices, std::size_t count,
                 const TableView& t) {
    for (std::size_t k = 0; k < count; ++k) {
        const std::uint32_t ti = indices[k];
        const std::uint32_t* c = t.cdf + t.offsets[ti];
        const int n = static_cast<int>(t.lengths[ti]) - 1;
        const std::int64_t rel = static_cast<std::int64_t>(symbols[k]) - t.value_offsets[ti];
        if (rel >= 0 && rel < n - 2) {
            const int j = static_cast<int>(rel) + 1;
            enc.encode(c[j], c[j + 1] - c[j]);
        } else {
            const int j = rel < 0 ? 0 : n - 1;
            enc.encode(c[j], c[j + 1] - c[j]);
            enc.encode_raw16(static_cast<std::uint32_t>(static_cast<std::uint16_t>(static_cast<std::int16_t>(symbols[k]))));
        }
    }
}

void decode_into(RangeDecoder& dec, const std::uint32_t* indices, std::size_t count, const TableView& t,
                 std::int32_t* symbols) {
    for (std::size_t k = 0; k < count; ++k) {
        const std::uint32_t ti = indices[k];
        const std::uint32_t* c = t.cdf + t.offsets[ti];
        const int n = static_cast<int>(t.lengths[ti]) - 1;
        const int j = dec.decode(c, n);
        const std::int32_t lo = t.value_offsets[ti];
        if (j > 0 && j < n - 1) {
            symbols[k] = lo + j - 1;
            continue;
        }
        const std::int32_t v = static_cast<std::int16_t>(static_cast<std::uint16_t>(dec.decode_raw16()));
        // An escape must carry a value outside the table on its own side.
        if ((j == 0 && v >= lo) || (j == n - 1 && v <= lo + n - 3))
            throw DecodeError("range decoder: escape carries an in-table value");
        symbols[k] = v;
    }
}

const char* check_call(const std::int32_t* symbols, const std::uint32_t* indices, std::size_t count,
                       const TableView& t) {
    for (std::size_t k = 0; k < count; ++k) {
        if (indices[k] >= t.num_tables) return "table index out of range";
        if (symbols && (symbols[k] < kEscapeMin || symbols[k] > kEscapeMax)) return "symbol outside the int16 range";
    }
    return nullptr;
}

TableView view(const CdfTables& tables) {
    return {tables.cdf.data(), tables.offsets.data(), tables.lengths.data(), tables.value_offsets.data(),
            tables.size()};
}

}  // namespace

std::size_t max_encoded_size(std::size_t count) { return 8 * count + 8; }

std::vector<std::uint8_t> encode_symbols(std::span<const std::int32_t> symbols, std::span<const std::uint32_t> indices,
                                         const CdfTables& tables) {
    if (symbols.size() != indices.size()) throw std::invalid_argument("encode_symbols: symbols/indices size mismatch");
    tables.validate();
    const TableView t = view(tables);
    if (const char* why = check_call(symbols.data(), indices.data(), symbols.size(), t))
        throw std::invalid_argument(std::string("encode_symbols: ") + why);
    RangeEncoder enc;
    encode_into(enc, symbols.data(), indices.data(), symbols.size(), t);
    return enc.finish();
}

std::vector<std::int32_t> decode_symbols(std::span<const std::uint8_t> data, std::span<const std::uint32_t> indices,
                                         const CdfTables& tables) {
    tables.validate();
    const TableView t = view(tables);
    if (const char* why = check_call(nullptr, indices.data(), indices.size(), t))
        throw std::invalid_argument(std::string("decode_symbols: ") + why);
    std::vector<std::int32_t> out(indices.size());
    RangeDecoder dec(data);
    decode_into(dec, indices.data(), indices.size(), t, out.data());
    dec.finish();
    return out;
}

// ---------------------------------------------------------------- backends

namespace {

class ReferenceBackend final : public CoderBackend {
public:
    std::string name() const override { return "reference"; }
    std::vector<std::uint8_t> encode(std::span<const std::int32_t> symbols, std::span<const std::uint32_t> indices,
                                     const CdfTables& tables) const override {
        return encode_symbols(symbols, indices, tables);
    }
    std::vector<std::int32_t> decode(std::span<const std::uint8_t> data, std::span<const std::uint32_t> indices,
                                     const CdfTables& tables) const override {
        return decode_symbols(data, indices, tables);
    }
};

using AbiVersionFn = std::uint32_t (*)();
using EncodeFn = decltype(&tcm_kernel_encode);
using DecodeFn = decltype(&tcm_kernel_decode);

class KernelBackend final : public CoderBackend {
public:
    explicit KernelBackend(const std::string& path) : path_(path) {
        handle_ = dlopen(path.c_str(), RTLD_NOW | RTLD_LOCAL);
        if (!handle_) throw ConfigError("kernel coder: cannot load '" + path + "': " + dlerror());
        auto version = reinterpret_cast<AbiVersionFn>(dlsym(handle_, "tcm_kernel_abi_version"));
        encode_ = reinterpret_cast<EncodeFn>(dlsym(handle_, "tcm_kernel_encode"));
        decode_ = reinterpret_cast<DecodeFn>(dlsym(handle_, "tcm_kernel_decode"));
        if (!version || !encode_ || !decode_) {
            dlclose(handle_);
            throw ConfigError("kernel coder: '" + path + "' does not export the coder interface");
        }
        if (version() != TCM_KERNEL_ABI_VERSION) {
            const auto v = version();
            dlclose(handle_);
            throw ConfigError("kernel coder: ABI version " + std::to_string(v) + ", expected " +
                        std::to_string(TCM_KERNEL_ABI_VERSION));
        }
    }
    ~KernelBackend() override { dlclose(handle_); }

    std::string name() const override { return "kernel:" + path_; }

    std::vector<std::uint8_t> encode(std::span<const std::int32_t> symbols, std::span<const std::uint32_t> indices,
                                     const CdfTables& tables) const override {
        if (symbols.size() != indices.size()) throw std::invalid_argument("kernel encode: size mismatch");
        std::vector<std::uint8_t> out(max_encoded_size(symbols.size()));
        std::size_t len = 0;
        int rc = encode_(symbols.data(), symbols.size(), indices.data(), tables.cdf.data(), tables.offsets.data(),
                         tables.lengths.data(), tables.value_offsets.data(), tables.size(), out.data(), out.size(),
                         &len);
        if (rc == TCM_KERNEL_ERR_BUFFER_TOO_SMALL) {
            out.resize(len);
            rc = encode_(symbols.data(), symbols.size(), indices.data(), tables.cdf.data(), tables.offsets.data(),
                         tables.lengths.data(), tables.value_offsets.data(), tables.size(), out.data(), out.size(),
                         &len);
        }
        raise(rc, "encode");
        out.resize(len);
        return out;
    }

    std::vector<std::int32_t> decode(std::span<const std::uint8_t> data, std::span<const std::uint32_t> indices,
                                     const CdfTables& tables) const override {
        std::vector<std::int32_t> out(indices.size());
        raise(decode_(data.data(), data.size(), indices.data(), indices.size(), tables.cdf.data(),
                      tables.offsets.data(), tables.lengths.data(), tables.value_offsets.data(), tables.size(),
                      out.data()),
              "decode");
        return out;
    }

private:
    static void raise(int rc, const char* what) {
        switch (rc) {
            case TCM_KERNEL_OK: return;
            case TCM_KERNEL_ERR_ARGUMENT: throw std::invalid_argument(std::string("kernel ") + what + ": bad argument");
            case TCM_KERNEL_ERR_CORRUPT: throw DecodeError(std::string("kernel ") + what + ": corrupt stream");
            default: throw Error(std::string("kernel ") + what + ": status " + std::to_string(rc));
        }
    }

    std::string path_;
    void* handle_ = nullptr;
    EncodeFn encode_ = nullptr;
    DecodeFn decode_ = nullptr;
};

}  // namespace

std::unique_ptr<CoderBackend> reference_backend() { return std::make_unique<ReferenceBackend>(); }

std::unique_ptr<CoderBackend> kernel_backend(const std::string& path) {
    return std::make_unique<KernelBackend>(path.empty() ? std::string(kDefaultKernelLibrary) : path);
}

std::unique_ptr<CoderBackend> make_backend(const std::string& kind, const std::string& kernel_path) {
    if (kind == "reference") return reference_backend();
    if (kind == "kernel") return kernel_backend(kernel_path);
    throw ConfigError("unknown coder backend '" + kind + "' (expected reference or kernel)");
}

}  // namespace tcm::coder

// ---------------------------------------------------------------- C interface

namespace {

template <typename F>
int guarded(F&& f) {
    try {
        f();
        return TCM_KERNEL_OK;
    } catch (const tcm::DecodeError&) {
        return TCM_KERNEL_ERR_CORRUPT;
    } catch (...) {
        return TCM_KERNEL_ERR_ARGUMENT;
    }
}

int check_abi_tables(const std::uint32_t* cdf, const std::uint32_t* offsets, const std::uint32_t* lengths,
                     const std::int32_t* value_offsets, std::size_t num_tables) {
    if (num_tables > 0 && (!cdf || !offsets || !lengths || !value_offsets)) return TCM_KERNEL_ERR_ARGUMENT;
    std::size_t cdf_size = 0;
    for (std::size_t t = 0; t < num_tables; ++t)
        cdf_size = std::max<std::size_t>(cdf_size, static_cast<std::size_t>(offsets[t]) + lengths[t]);
    return tcm::coder::check_tables(cdf, cdf_size, offsets, lengths, value_offsets, num_tables)
               ? TCM_KERNEL_ERR_ARGUMENT
               : TCM_KERNEL_OK;
}

}  // namespace

namespace tcm::coder {

int abi_encode(const std::int32_t* symbols, std::size_t count, const std::uint32_t* indices, const std::uint32_t* cdf,
               const std::uint32_t* offsets, const std::uint32_t* lengths, const std::int32_t* value_offsets,
               std::size_t num_tables, std::uint8_t* out, std::size_t capacity, std::size_t* out_len) {
    if (!out_len || (count > 0 && (!symbols || !indices))) return TCM_KERNEL_ERR_ARGUMENT;
    if (int rc = check_abi_tables(cdf, offsets, lengths, value_offsets, num_tables)) return rc;
    const TableView t{cdf, offsets, lengths, value_offsets, num_tables};
    if (check_call(symbols, indices, count, t)) return TCM_KERNEL_ERR_ARGUMENT;
    std::vector<std::uint8_t> bytes;
    const int rc = guarded([&] {
        RangeEncoder enc;
        encode_into(enc, symbols, indices, count, t);
        bytes = enc.finish();
    });
    if (rc != TCM_KERNEL_OK) return rc;
    *out_len = bytes.size();
    if (bytes.size() > capacity || (!out && !bytes.empty())) return TCM_KERNEL_ERR_BUFFER_TOO_SMALL;
    std::copy(bytes.begin(), bytes.end(), out);
    return TCM_KERNEL_OK;
}

int abi_decode(const std::uint8_t* data, std::size_t size, const std::uint32_t* indices, std::size_t count,
               const std::uint32_t* cdf, const std::uint32_t* offsets, const std::uint32_t* lengths,
               const std::int32_t* value_offsets, std::size_t num_tables, std::int32_t* symbols) {
    if ((size > 0 && !data) || (count > 0 && (!indices || !symbols))) return TCM_KERNEL_ERR_ARGUMENT;
    if (int rc = check_abi_tables(cdf, offsets, lengths, value_offsets, num_tables)) return rc;
    const TableView t{cdf, offsets, lengths, value_offsets, num_tables};
    if (check_call(nullptr, indices, count, t)) return TCM_KERNEL_ERR_ARGUMENT;
    return guarded([&] {
        RangeDecoder dec({data, size});
        decode_into(dec, indices, count, t, symbols);
        dec.finish();
    });
}
}  // namespace tcm::coder
