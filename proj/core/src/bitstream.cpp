#include "tcm/bitstream.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "tcm/errors.hpp"

namespace tcm {

namespace {

constexpr std::uint32_t kMaxDimension = 1u << 16;

class Writer {
public:
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    std::span<const std::uint8_t> bytes(std::size_t n, const std::string& what) {
        if (n > remaining()) throw FormatError("bitstream: " + what + " length exceeds the file");
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    std::uint64_t get(int n) {
        if (static_cast<std::size_t>(n) > remaining()) throw FormatError("bitstream: truncated header");
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
        pos_ += n;
        return v;
    }
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

std::uint32_t crc(std::span<const std::uint8_t> b) {
    return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), b.data(), static_cast<uInt>(b.size())));
}

void write_stream(Writer& w, const std::vector<std::uint8_t>& s) {
    if (s.size() > 0xFFFFFFFFu) throw FormatError("bitstream: stream too long");
    w.u32(static_cast<std::uint32_t>(s.size()));
    w.u32(crc(s));
    w.bytes(s);
}

std::vector<std::uint8_t> read_stream(Reader& r, int index) {
    const std::string what = index < 0 ? "hyper stream" : "slice stream " + std::to_string(index);
    const std::uint32_t len = r.u32();
    const std::uint32_t sum = r.u32();
    const auto body = r.bytes(len, what);
    if (crc(body) != sum) throw DecodeError("bitstream: checksum mismatch in " + what, index);
    return {body.begin(), body.end()};
}

BitstreamHeader parse_header(Reader& r) {
    char magic[4];
    for (char& c : magic) c = static_cast<char>(r.bytes(1, "magic")[0]);
    if (std::memcmp(magic, kBitstreamMagic, 4) != 0) throw FormatError("bitstream: bad magic, not a TCM stream");
    BitstreamHeader h;
    h.version = r.u16();
    if (h.version != kBitstreamVersion)
        throw FormatError("bitstream: unsupported version " + std::to_string(h.version));
    h.flags = r.u16();
    h.model_id = r.u64();
    h.height = r.u32();
    h.width = r.u32();
    h.padded_height = r.u32();
    h.padded_width = r.u32();
    h.num_slices = r.u16();
    r.u16();  // reserved
    if (h.height == 0 || h.width == 0 || h.height > h.padded_height || h.width > h.padded_width ||
        h.padded_height > kMaxDimension || h.padded_width > kMaxDimension || h.padded_height % 64 != 0 ||
        h.padded_width % 64 != 0)
        throw FormatError("bitstream: inconsistent image dimensions");
    if (h.num_slices == 0) throw FormatError("bitstream: zero slices");
    return h;
}

}  // namespace

std::vector<std::uint8_t> serialize(const Bitstream& b) {
    if (b.slice_streams.size() != b.header.num_slices)
        throw FormatError("bitstream: header slice count does not match the streams");
    Writer w;
    w.bytes({reinterpret_cast<const std::uint8_t*>(kBitstreamMagic), 4});
    w.u16(b.header.version);
    w.u16(b.header.flags);
    w.u64(b.header.model_id);
    w.u32(b.header.height);
    w.u32(b.header.width);
    w.u32(b.header.padded_height);
    w.u32(b.header.padded_width);
    w.u16(b.header.num_slices);
    w.u16(0);
    write_stream(w, b.z_stream);
    for (const auto& s : b.slice_streams) write_stream(w, s);
    return w.take();
}

BitstreamHeader read_header(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    return parse_header(r);
}

Bitstream deserialize(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    Bitstream b;
    b.header = parse_header(r);
    b.z_stream = read_stream(r, -1);
    for (int i = 0; i < b.header.num_slices; ++i) b.slice_streams.push_back(read_stream(r, i));
    if (r.remaining() != 0) throw FormatError("bitstream: trailing bytes after the last stream");
    return b;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error reading '" + path + "'");
    return data;
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + tmp + "'");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("error writing '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

}  // namespace tcm
