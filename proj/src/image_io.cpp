#include "icm/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace icm::io {

namespace {

struct ReadCursor {
    const unsigned char* data;
    std::size_t size;
    std::size_t pos;
};

void read_callback(png_structp png, png_bytep out, png_size_t count)
{
    auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cur->pos + count > cur->size)
        png_error(png, "truncated PNG stream");
    std::memcpy(out, cur->data + cur->pos, count);
    cur->pos += count;
}

void write_callback(png_structp png, png_bytep in, png_size_t count)
{
    auto* buf = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
    buf->insert(buf->end(), in, in + count);
}

void flush_callback(png_structp) {}

[[noreturn]] void error_callback(png_structp, png_const_charp msg)
{
    throw IoError(std::string("png: ") + msg);
}

void warning_callback(png_structp, png_const_charp) {}

} // namespace

std::vector<unsigned char> read_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ImagePlane decode_png(const std::vector<unsigned char>& bytes)
{
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
        throw IoError("not a PNG stream");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, error_callback, warning_callback);
    if (!png)
        throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    ReadCursor cursor{bytes.data(), bytes.size(), 0};

    try {
        png_set_read_fn(png, &cursor, read_callback);
        png_read_info(png, info);

        const int color = png_get_color_type(png, info);
        const int depth = png_get_bit_depth(png, info);
        if (color == PNG_COLOR_TYPE_PALETTE)
            png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
            png_set_expand_gray_1_2_4_to_8(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS))
            png_set_tRNS_to_alpha(png);
        if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
            png_set_strip_alpha(png);
        if (depth == 16)
            png_set_swap(png);
        png_read_update_info(png, info);

        const int H = static_cast<int>(png_get_image_height(png, info));
        const int W = static_cast<int>(png_get_image_width(png, info));
        const int C = png_get_channels(png, info);
        const int out_depth = png_get_bit_depth(png, info);
        const std::size_t rowbytes = png_get_rowbytes(png, info);

        std::vector<unsigned char> raw(rowbytes * static_cast<std::size_t>(H));
        std::vector<png_bytep> rows(static_cast<std::size_t>(H));
        for (int y = 0; y < H; ++y)
            rows[static_cast<std::size_t>(y)] = raw.data() + rowbytes * static_cast<std::size_t>(y);
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
        png_destroy_read_struct(&png, &info, nullptr);

        if (C != 1 && C != 3)
            throw IoError("unsupported PNG channel layout");
        std::vector<double> data(static_cast<std::size_t>(H) * W * C);
        if (out_depth == 16) {
            for (std::size_t i = 0; i < data.size(); ++i) {
                std::uint16_t v;
                std::memcpy(&v, raw.data() + 2 * i, 2);
                data[i] = v / 65535.0;
            }
        } else {
            for (std::size_t i = 0; i < data.size(); ++i)
                data[i] = raw[i] / 255.0;
        }
        return ImagePlane(H, W, C, std::move(data));
    } catch (...) {
        if (png)
            png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
}

ImagePlane read_png(const std::filesystem::path& path)
{
    try {
        return decode_png(read_bytes(path));
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

std::vector<unsigned char> encode_png(const ImagePlane& plane, int bit_depth)
{
    if (bit_depth != 8 && bit_depth != 16)
        throw ValueError("PNG bit depth must be 8 or 16");
    const int H = plane.height(), W = plane.width(), C = plane.channels();
    const std::size_t bpp = static_cast<std::size_t>(bit_depth / 8);
    const std::size_t rowbytes = static_cast<std::size_t>(W) * C * bpp;
    std::vector<unsigned char> raw(rowbytes * static_cast<std::size_t>(H));
    const double maxv = bit_depth == 8 ? 255.0 : 65535.0;
    for (std::size_t i = 0; i < plane.data().size(); ++i) {
        const auto v = static_cast<unsigned>(std::lround(plane.data()[i] * maxv));
        if (bit_depth == 8) {
            raw[i] = static_cast<unsigned char>(v);
        } else {
            raw[2 * i] = static_cast<unsigned char>(v >> 8);
            raw[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
        }
    }

    std::vector<unsigned char> out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_callback, warning_callback);
    if (!png)
        throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    try {
        png_set_write_fn(png, &out, write_callback, flush_callback);
        png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), bit_depth,
                     C == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int y = 0; y < H; ++y)
            png_write_row(png, raw.data() + rowbytes * static_cast<std::size_t>(y));
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    return out;
}

void write_png(const std::filesystem::path& path, const ImagePlane& plane, int bit_depth)
{
    write_bytes(path, encode_png(plane, bit_depth));
}

ImagePlane to_rgb(const ImagePlane& plane)
{
    if (plane.channels() == 3)
        return plane;
    if (plane.channels() != 1)
        throw DimensionError("expected a gray or RGB image");
    std::vector<double> rgb;
    rgb.reserve(plane.pixels() * 3);
    for (double v : plane.data())
        rgb.insert(rgb.end(), {v, v, v});
    return ImagePlane(plane.height(), plane.width(), 3, std::move(rgb));
}

ImagePlane read_rgb(const std::filesystem::path& path)
{
    return to_rgb(read_png(path));
}

} // namespace icm::io
