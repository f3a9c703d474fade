#include "floodseg/png.hpp"

#include <png.h>

#include <stdexcept>

#include "floodseg/io.hpp"

namespace floodseg::png {

namespace {

void append(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void flush(png_structp) {}

}  // namespace

std::vector<std::uint8_t> encode_mask(const Mask& mask) {
    std::vector<std::uint8_t> rgb(mask.labels.size() * 3);
    for (std::size_t i = 0; i < mask.labels.size(); ++i) {
        std::uint8_t r = 255, g = 255, b = 255;
        if (mask.labels[i] == Label::Water) r = g = 0;
        if (mask.labels[i] == Label::Ignore) r = g = b = 128;
        rgb[3 * i] = r;
        rgb[3 * i + 1] = g;
        rgb[3 * i + 2] = b;
    }

    std::vector<std::uint8_t> out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png: cannot create write struct");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: encoding failed");
    }
    png_set_write_fn(png, &out, append, flush);
    png_set_IHDR(png, info, static_cast<png_uint_32>(mask.width), static_cast<png_uint_32>(mask.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < mask.height; ++y) png_write_row(png, rgb.data() + 3 * y * mask.width);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

void write_mask(const std::filesystem::path& path, const Mask& mask) { io::atomic_write(path, encode_mask(mask)); }

}  // namespace floodseg::png
