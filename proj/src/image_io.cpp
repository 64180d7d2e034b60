#include "primfuse/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace primfuse {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string& what, const std::string& path) {
    throw std::runtime_error(what + ": " + path);
}

void write_png(const std::string& path, int width, int height, int bit_depth, int color_type,
               const std::vector<png_bytep>& rows) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail("cannot open for writing", path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        fail("libpng allocation failed", path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("libpng write error", path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);  // buffers are little-endian
    png_write_image(png, const_cast<png_bytep*>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FilePtr fp;
    int width = 0, height = 0, bit_depth = 0, color_type = 0;

    explicit PngReader(const std::string& path) : fp(std::fopen(path.c_str(), "rb")) {
        if (!fp) fail("cannot open for reading", path);
        png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) fail("libpng allocation failed", path);
        if (setjmp(png_jmpbuf(png))) fail("libpng read error", path);
        png_init_io(png, fp.get());
        png_read_info(png, info);
        width = png_get_image_width(png, info);
        height = png_get_image_height(png, info);
        bit_depth = png_get_bit_depth(png, info);
        color_type = png_get_color_type(png, info);
    }
    ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

}  // namespace

void write_png_rgb8(const std::string& path, const Image<Rgb>& img) {
    std::vector<std::uint8_t> buf(static_cast<size_t>(img.width) * img.height * 3);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            const Rgb& px = img.at(r, c);
            size_t o = (static_cast<size_t>(r) * img.width + c) * 3;
            auto q = [](float v) {
                return static_cast<std::uint8_t>(
                    std::lround(std::min(1.0f, std::max(0.0f, v)) * 255.0f));
            };
            buf[o] = q(px.r);
            buf[o + 1] = q(px.g);
            buf[o + 2] = q(px.b);
        }
    std::vector<png_bytep> rows(img.height);
    for (int r = 0; r < img.height; ++r) rows[r] = buf.data() + static_cast<size_t>(r) * img.width * 3;
    write_png(path, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, rows);
}

Image<Rgb> read_png_rgb8(const std::string& path) {
    PngReader rd(path);
    if (setjmp(png_jmpbuf(rd.png))) fail("libpng read error", path);
    if (rd.bit_depth != 8) fail("expected 8-bit PNG", path);
    if (rd.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(rd.png);
    if (rd.color_type == PNG_COLOR_TYPE_GRAY) png_set_gray_to_rgb(rd.png);
    png_set_strip_alpha(rd.png);
    png_read_update_info(rd.png, rd.info);

    std::vector<std::uint8_t> buf(static_cast<size_t>(rd.width) * rd.height * 3);
    std::vector<png_bytep> rows(rd.height);
    for (int r = 0; r < rd.height; ++r)
        rows[r] = buf.data() + static_cast<size_t>(r) * rd.width * 3;
    png_read_image(rd.png, rows.data());

    Image<Rgb> img(rd.height, rd.width);
    for (int r = 0; r < rd.height; ++r)
        for (int c = 0; c < rd.width; ++c) {
            size_t o = (static_cast<size_t>(r) * rd.width + c) * 3;
            img.at(r, c) = {buf[o] / 255.0f, buf[o + 1] / 255.0f, buf[o + 2] / 255.0f};
        }
    return img;
}

void write_png_gray16(const std::string& path, const Image<std::uint16_t>& img) {
    std::vector<png_bytep> rows(img.height);
    for (int r = 0; r < img.height; ++r)
        rows[r] = reinterpret_cast<png_bytep>(
            const_cast<std::uint16_t*>(img.data.data() + static_cast<size_t>(r) * img.width));
    write_png(path, img.width, img.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

Image<std::uint16_t> read_png_gray16(const std::string& path) {
    PngReader rd(path);
    if (setjmp(png_jmpbuf(rd.png))) fail("libpng read error", path);
    if (rd.bit_depth != 16 || rd.color_type != PNG_COLOR_TYPE_GRAY)
        fail("expected 16-bit grayscale PNG", path);
    png_set_swap(rd.png);
    png_read_update_info(rd.png, rd.info);

    Image<std::uint16_t> img(rd.height, rd.width);
    std::vector<png_bytep> rows(rd.height);
    for (int r = 0; r < rd.height; ++r)
        rows[r] =
            reinterpret_cast<png_bytep>(img.data.data() + static_cast<size_t>(r) * rd.width);
    png_read_image(rd.png, rows.data());
    return img;
}

void write_float_planar(const std::string& path, const std::vector<Image<float>>& channels) {
    if (channels.empty()) throw std::invalid_argument("write_float_planar: no channels");
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) fail("cannot open for writing", path);
    FilePtr fp(f);
    std::int32_t hdr[3] = {static_cast<std::int32_t>(channels.size()), channels[0].height,
                           channels[0].width};
    std::fwrite(hdr, sizeof(hdr), 1, f);
    for (const auto& ch : channels) {
        if (ch.height != hdr[1] || ch.width != hdr[2])
            throw std::invalid_argument("write_float_planar: channel size mismatch");
        if (std::fwrite(ch.data.data(), sizeof(float), ch.size(), f) != ch.size())
            fail("short write", path);
    }
}

std::vector<Image<float>> read_float_planar(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) fail("cannot open for reading", path);
    FilePtr fp(f);
    std::int32_t hdr[3];
    if (std::fread(hdr, sizeof(hdr), 1, f) != 1) fail("truncated header", path);
    std::vector<Image<float>> channels;
    for (int i = 0; i < hdr[0]; ++i) {
        Image<float> ch(hdr[1], hdr[2]);
        if (std::fread(ch.data.data(), sizeof(float), ch.size(), f) != ch.size())
            fail("truncated data", path);
        channels.push_back(std::move(ch));
    }
    return channels;
}

}  // namespace primfuse
