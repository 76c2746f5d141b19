#include "tcm/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>

#include "tcm/bitstream.hpp"
#include "tcm/errors.hpp"

namespace tcm {

namespace {

bool has_suffix(const std::string& s, const std::string& suffix) {
    if (s.size() < suffix.size()) return false;
    std::string tail = s.substr(s.size() - suffix.size());
    std::transform(tail.begin(), tail.end(), tail.begin(), [](unsigned char c) { return std::tolower(c); });
    return tail == suffix;
}

// ---------------------------------------------------------------- PPM

int parse_ppm_int(const std::vector<std::uint8_t>& d, std::size_t& pos) {
    while (pos < d.size()) {
        if (d[pos] == '#') {
            while (pos < d.size() && d[pos] != '\n') ++pos;
        } else if (std::isspace(d[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= d.size() || !std::isdigit(d[pos])) throw FormatError("ppm: malformed header");
    long v = 0;
    while (pos < d.size() && std::isdigit(d[pos])) {
        v = v * 10 + (d[pos++] - '0');
        if (v > (1 << 20)) throw FormatError("ppm: header value too large");
    }
    return static_cast<int>(v);
}

Image read_ppm(const std::vector<std::uint8_t>& d) {
    std::size_t pos = 2;
    Image img;
    img.width = parse_ppm_int(d, pos);
    img.height = parse_ppm_int(d, pos);
    const int maxval = parse_ppm_int(d, pos);
    if (maxval != 255) throw FormatError("ppm: only maxval 255 is supported");
    if (img.width <= 0 || img.height <= 0) throw FormatError("ppm: empty image");
    if (pos >= d.size() || !std::isspace(d[pos])) throw FormatError("ppm: malformed header");
    ++pos;
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height * 3;
    if (d.size() - pos < n) throw FormatError("ppm: pixel data truncated");
    img.rgb.assign(d.begin() + static_cast<std::ptrdiff_t>(pos), d.begin() + static_cast<std::ptrdiff_t>(pos + n));
    return img;
}

std::vector<std::uint8_t> encode_ppm(const Image& img) {
    const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.rgb.begin(), img.rgb.end());
    return out;
}

// ---------------------------------------------------------------- PNG

struct PngReadBuffer {
    const std::vector<std::uint8_t>* data;
    std::size_t pos;
};

void png_error_fn(png_structp png, png_const_charp msg) {
    auto* what = static_cast<std::string*>(png_get_error_ptr(png));
    *what = msg;
    png_longjmp(png, 1);
}
void png_warning_fn(png_structp, png_const_charp) {}

Image read_png(const std::vector<std::uint8_t>& data) {
    std::string error;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_error_fn, png_warning_fn);
    if (!png) throw IoError("png: out of memory");
    png_infop info = png_create_info_struct(png);
    PngReadBuffer buf{&data, 0};
    Image img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("png: " + error);
    }
    png_set_read_fn(png, &buf, [](png_structp p, png_bytep out, png_size_t n) {
        auto* b = static_cast<PngReadBuffer*>(png_get_io_ptr(p));
        if (b->data->size() - b->pos < n) png_error(p, "unexpected end of file");
        std::memcpy(out, b->data->data() + b->pos, n);
        b->pos += n;
    });
    png_read_info(png, info);
    const png_byte color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(img.width) * 3) png_error(png, "unexpected row layout");
    img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    rows.resize(img.height);
    for (int y = 0; y < img.height; ++y) rows[y] = img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

std::vector<std::uint8_t> encode_png(const Image& img) {
    std::string error;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_error_fn, png_warning_fn);
    if (!png) throw IoError("png: out of memory");
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> out;
    std::vector<png_bytep> rows(img.height);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: " + error);
    }
    png_set_write_fn(
        png, &out,
        [](png_structp p, png_bytep data, png_size_t n) {
            auto* o = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
            o->insert(o->end(), data, data + n);
        },
        nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // Fixed settings and no timestamp keep the bytes reproducible.
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y)
        rows[y] = const_cast<png_bytep>(img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

}  // namespace

Image read_image(const std::string& path) {
    const std::vector<std::uint8_t> data = read_file(path);
    static const std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (data.size() >= 8 && std::memcmp(data.data(), kPngSig, 8) == 0) return read_png(data);
    if (data.size() >= 2 && data[0] == 'P' && data[1] == '6') return read_ppm(data);
    throw FormatError("'" + path + "' is neither PNG nor binary PPM");
}

void write_image(const std::string& path, const Image& image) {
    if (image.width <= 0 || image.height <= 0 ||
        image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3)
        throw ConfigError("write_image: inconsistent raster");
    write_file(path, has_suffix(path, ".ppm") ? encode_ppm(image) : encode_png(image));
}

Tensor<float> to_tensor(const Image& img) {
    Tensor<float> x(Shape{1, 3, img.height, img.width});
    for (int y = 0; y < img.height; ++y)
        for (int xx = 0; xx < img.width; ++xx)
            for (int c = 0; c < 3; ++c)
                x.at(0, c, y, xx) = img.rgb[(static_cast<std::size_t>(y) * img.width + xx) * 3 + c] / 255.0f;
    return x;
}

Image to_image(const Tensor<float>& x) {
    const Shape& s = x.shape();
    if (s.n != 1 || s.c != 3) throw ConfigError("to_image: expects a (1, 3, H, W) tensor, got " + s.str());
    Image img;
    img.width = s.w;
    img.height = s.h;
    img.rgb.resize(static_cast<std::size_t>(s.w) * s.h * 3);
    for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx)
            for (int c = 0; c < 3; ++c) {
                const float v = x.at(0, c, y, xx);
                const float clamped = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
                img.rgb[(static_cast<std::size_t>(y) * s.w + xx) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
            }
    return img;
}

}  // namespace tcm
