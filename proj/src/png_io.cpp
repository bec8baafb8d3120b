#include "ccam/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

#include "ccam/error.hpp"

namespace ccam {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

unsigned char to_byte(double v) {
    if (v <= 0.0) return 0;
    if (v >= 1.0) return 255;
    return static_cast<unsigned char>(std::lround(v * 255.0));
}

void write_png(const std::string& path, int h, int w, int channels,
               const std::vector<unsigned char>& rows_data) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng failure while writing " + path);
    }
    png_init_io(png, fp.get());
    const int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, w, h, 8, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y)
        rows[y] = const_cast<png_bytep>(rows_data.data() + static_cast<std::size_t>(y) * w * channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<unsigned char> read_png(const std::string& path, int want_channels, int* out_h,
                                    int* out_w) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng failure while reading " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    if (want_channels == 3 && (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA))
        png_set_gray_to_rgb(png);
    if (want_channels == 1 && (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
                               color == PNG_COLOR_TYPE_PALETTE))
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);

    std::vector<unsigned char> data(static_cast<std::size_t>(h) * w * want_channels);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y)
        rows[y] = data.data() + static_cast<std::size_t>(y) * w * want_channels;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    *out_h = h;
    *out_w = w;
    return data;
}

}  // namespace

void write_png_rgb(const std::string& path, const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 3) throw ShapeError("write_png_rgb expects (3,H,W)");
    const int h = image.dim(1), w = image.dim(2);
    std::vector<unsigned char> rows(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                rows[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(image.at3(c, y, x));
    write_png(path, h, w, 3, rows);
}

Tensor read_png_rgb(const std::string& path) {
    int h = 0, w = 0;
    std::vector<unsigned char> data = read_png(path, 3, &h, &w);
    Tensor out({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out.at3(c, y, x) = data[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
    return out;
}

void write_png_gray(const std::string& path, const Tensor& map) {
    if (map.ndim() != 2) throw ShapeError("write_png_gray expects (H,W)");
    const int h = map.dim(0), w = map.dim(1);
    std::vector<unsigned char> rows(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            rows[static_cast<std::size_t>(y) * w + x] = to_byte(map.at2(y, x));
    write_png(path, h, w, 1, rows);
}

Tensor read_png_gray(const std::string& path) {
    int h = 0, w = 0;
    std::vector<unsigned char> data = read_png(path, 1, &h, &w);
    Tensor out({h, w});
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = data[i] / 255.0;
    return out;
}

void write_png_mask(const std::string& path, const BinaryMask& mask) {
    std::vector<unsigned char> rows(mask.data.size());
    for (std::size_t i = 0; i < mask.data.size(); ++i) rows[i] = mask.data[i] ? 255 : 0;
    write_png(path, mask.h, mask.w, 1, rows);
}

BinaryMask read_png_mask(const std::string& path) {
    int h = 0, w = 0;
    std::vector<unsigned char> data = read_png(path, 1, &h, &w);
    BinaryMask mask(h, w);
    for (std::size_t i = 0; i < data.size(); ++i) mask.data[i] = data[i] >= 128 ? 1 : 0;
    return mask;
}

void write_raw_map(const std::string& path, const Tensor& map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write("CCAMRAW1", 8);
    const std::uint32_t ndim = static_cast<std::uint32_t>(map.ndim());
    out.write(reinterpret_cast<const char*>(&ndim), 4);
    for (int d = 0; d < map.ndim(); ++d) {
        const std::uint32_t dim = static_cast<std::uint32_t>(map.dim(d));
        out.write(reinterpret_cast<const char*>(&dim), 4);
    }
    for (double v : map.data) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
}

Tensor read_raw_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "CCAMRAW1", 8) != 0) throw IoError("bad raw map magic in " + path);
    std::uint32_t ndim = 0;
    in.read(reinterpret_cast<char*>(&ndim), 4);
    if (!in || ndim == 0 || ndim > 4) throw IoError("bad raw map header in " + path);
    std::vector<int> shape(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) {
        std::uint32_t dim = 0;
        in.read(reinterpret_cast<char*>(&dim), 4);
        shape[d] = static_cast<int>(dim);
    }
    Tensor out(shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        float f = 0.0f;
        in.read(reinterpret_cast<char*>(&f), 4);
        out.data[i] = f;
    }
    if (!in) throw IoError("truncated raw map " + path);
    return out;
}

}  // namespace ccam
