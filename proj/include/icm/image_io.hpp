#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "icm/core.hpp"

namespace icm::io {

/// Reads an 8- or 16-bit PNG. Gray(+alpha) becomes one channel, RGB(A) and
/// palette images three; any alpha channel is dropped. Values are divided by
/// 255 or 65535.
ImagePlane read_png(const std::filesystem::path& path);

/// Reads a PNG as three channels, replicating gray images.
ImagePlane read_rgb(const std::filesystem::path& path);
ImagePlane to_rgb(const ImagePlane& plane);

/// Decodes PNG bytes held in memory.
ImagePlane decode_png(const std::vector<unsigned char>& bytes);

/// Writes a 1- or 3-channel plane; values are rounded to the nearest code.
void write_png(const std::filesystem::path& path, const ImagePlane& plane, int bit_depth = 8);

/// Encodes to PNG bytes in memory.
std::vector<unsigned char> encode_png(const ImagePlane& plane, int bit_depth = 8);

std::vector<unsigned char> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);

} // namespace icm::io
