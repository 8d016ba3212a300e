#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fredsr/image.hpp"

namespace fredsr {

enum class ImageFormat { kPng, kPpm };

/// Decodes PNG (8-bit, color type 2 or 6, non-interlaced; alpha is dropped)
/// or binary PPM (P6, maxval 255). The format is sniffed from the leading
/// bytes. Throws DecodeError (with byte offset) on malformed input and
/// UnsupportedFormat for valid but unsupported variants.
Image decode_image(std::span<const std::uint8_t> bytes);

/// Values are rounded to the nearest 8-bit level. PNG output is color type 2
/// with filter type 0 on every row.
std::vector<std::uint8_t> encode_image(const Image& img, ImageFormat format);

/// Format from the extension: ".png" or ".ppm" (case-insensitive).
ImageFormat format_for_path(const std::filesystem::path& path);

Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& img);

std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t seed = 0);

}  // namespace fredsr
