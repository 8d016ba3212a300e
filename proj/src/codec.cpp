#include "fredsr/codec.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <string>

#include "fredsr/errors.hpp"

namespace fredsr {

namespace {

constexpr std::array<std::uint8_t, 8> kPngSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  std::size_t pos = kPngSignature.size();
  std::uint32_t width = 0, height = 0;
  int channels = 0;
  bool have_header = false, have_end = false;
  std::vector<std::uint8_t> compressed;
  std::size_t idat_offset = 0;

  while (pos < bytes.size() && !have_end) {
    if (bytes.size() - pos < 12) throw DecodeError("truncated PNG chunk header", pos);
    const std::uint32_t length = read_be32(bytes, pos);
    if (length > 0x7fffffffu || bytes.size() - pos - 12 < length) {
      throw DecodeError("PNG chunk length exceeds stream", pos);
    }
    const auto type = bytes.subspan(pos + 4, 4);
    const auto data = bytes.subspan(pos + 8, length);
    const std::uint32_t stored_crc = read_be32(bytes, pos + 8 + length);
    if (crc32(bytes.subspan(pos + 4, length + 4)) != stored_crc) throw DecodeError("PNG chunk CRC mismatch", pos);
    const std::string name(type.begin(), type.end());

    if (name == "IHDR") {
      if (have_header || length != 13) throw DecodeError("malformed IHDR chunk", pos);
      width = read_be32(data, 0);
      height = read_be32(data, 4);
      const int depth = data[8], color = data[9];
      if (width == 0 || height == 0 || width > 0x7fffffu || height > 0x7fffffu) {
        throw DecodeError("invalid PNG dimensions", pos + 8);
      }
      if (depth != 8) throw UnsupportedFormat("PNG bit depth " + std::to_string(depth) + " is not supported");
      if (color == 2) {
        channels = 3;
      } else if (color == 6) {
        channels = 4;
      } else {
        throw UnsupportedFormat("PNG color type " + std::to_string(color) + " is not supported");
      }
      if (data[10] != 0 || data[11] != 0) throw DecodeError("unknown PNG compression or filter method", pos + 18);
      if (data[12] != 0) throw UnsupportedFormat("interlaced PNG is not supported");
      have_header = true;
    } else if (!have_header) {
      throw DecodeError("PNG stream does not start with IHDR", pos);
    } else if (name == "IDAT") {
      if (compressed.empty()) idat_offset = pos;
      compressed.insert(compressed.end(), data.begin(), data.end());
    } else if (name == "IEND") {
      have_end = true;
    } else if (type[0] & 0x20) {
      // Ancillary chunk, skipped.
    } else if (name != "PLTE") {
      throw UnsupportedFormat("critical PNG chunk " + name + " is not supported");
    }
    pos += 12 + length;
  }
  if (!have_header) throw DecodeError("missing IHDR chunk", pos);
  if (!have_end) throw DecodeError("missing IEND chunk", pos);
  if (compressed.empty()) throw DecodeError("missing IDAT chunk", pos);

  const std::size_t stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
  const std::size_t expected = static_cast<std::size_t>(height) * (stride + 1);
  std::vector<std::uint8_t> raw(expected);
  uLongf raw_len = static_cast<uLongf>(expected);
  const int rc = uncompress(raw.data(), &raw_len, compressed.data(), static_cast<uLong>(compressed.size()));
  if (rc != Z_OK || raw_len != expected) throw DecodeError("corrupt PNG image data", idat_offset);

  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(height) * stride);
  const auto bpp = static_cast<std::size_t>(channels);
  for (std::size_t y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* in = raw.data() + y * (stride + 1) + 1;
    std::uint8_t* row = pixels.data() + y * stride;
    const std::uint8_t* up = y > 0 ? row - stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= bpp ? row[i - bpp] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= bpp) ? up[i - bpp] : 0;
      int pred = 0;
      switch (filter) {
        case 0: pred = 0; break;
        case 1: pred = a; break;
        case 2: pred = b; break;
        case 3: pred = (a + b) / 2; break;
        case 4: pred = paeth(a, b, c); break;
        default: throw DecodeError("unknown PNG filter type " + std::to_string(filter), idat_offset);
      }
      row[i] = static_cast<std::uint8_t>(in[i] + pred);
    }
  }

  std::vector<float> rgb(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3);
  for (std::size_t p = 0; p < static_cast<std::size_t>(width) * height; ++p) {
    for (std::size_t c = 0; c < 3; ++c) rgb[p * 3 + c] = pixels[p * bpp + c] / 255.0f;
  }
  return Image(static_cast<int>(height), static_cast<int>(width), std::move(rgb), Provenance::kDecoded);
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  const auto w = static_cast<std::size_t>(img.width()), h = static_cast<std::size_t>(img.height());
  std::vector<std::uint8_t> raw;
  raw.reserve(h * (w * 3 + 1));
  auto v = img.values();
  for (std::size_t y = 0; y < h; ++y) {
    raw.push_back(0);
    for (std::size_t i = 0; i < w * 3; ++i) raw.push_back(to_byte(v[y * w * 3 + i]));
  }
  uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(packed_len);
  if (compress2(packed.data(), &packed_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw std::runtime_error("zlib compression failed");
  }
  packed.resize(packed_len);

  std::vector<std::uint8_t> out(kPngSignature.begin(), kPngSignature.end());
  auto chunk = [&out](const char* type, std::span<const std::uint8_t> data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    put_be32(out, crc32(std::span<const std::uint8_t>(out).subspan(start)));
  };
  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(w));
  put_be32(ihdr, static_cast<std::uint32_t>(h));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
  chunk("IHDR", ihdr);
  chunk("IDAT", packed);
  chunk("IEND", {});
  return out;
}

// Reads one whitespace-delimited header token, skipping '#' comments.
long read_ppm_field(std::span<const std::uint8_t> b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  long value = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    value = value * 10 + (b[pos] - '0');
    if (value > 0x7fffff) throw DecodeError("PPM header value out of range", start);
    ++pos;
  }
  if (pos == start) throw DecodeError("malformed PPM header", start);
  return value;
}

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 2;
  const long width = read_ppm_field(bytes, pos);
  const long height = read_ppm_field(bytes, pos);
  const std::size_t maxval_at = pos;
  const long maxval = read_ppm_field(bytes, pos);
  if (width < 1 || height < 1) throw DecodeError("invalid PPM dimensions", maxval_at);
  if (maxval != 255) throw UnsupportedFormat("PPM maxval " + std::to_string(maxval) + " is not supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw DecodeError("malformed PPM header", pos);
  ++pos;
  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3;
  if (bytes.size() - pos < count) throw DecodeError("truncated PPM pixel data", bytes.size());
  std::vector<float> rgb(count);
  for (std::size_t i = 0; i < count; ++i) rgb[i] = bytes[pos + i] / 255.0f;
  return Image(static_cast<int>(height), static_cast<int>(width), std::move(rgb), Provenance::kDecoded);
}

std::vector<std::uint8_t> encode_ppm(const Image& img) {
  const std::string header =
      "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.values().size());
  for (float v : img.values()) out.push_back(to_byte(v));
  return out;
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t seed) {
  uLong crc = seed;
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = ::crc32(crc, bytes.data() + done, n);
    done += n;
  }
  return static_cast<std::uint32_t>(crc);
}

Image decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= kPngSignature.size() && std::equal(kPngSignature.begin(), kPngSignature.end(), bytes.begin())) {
    return decode_png(bytes);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  throw DecodeError("unrecognized image signature", 0);
}

std::vector<std::uint8_t> encode_image(const Image& img, ImageFormat format) {
  if (img.empty()) throw InvalidArgument("cannot encode an empty image");
  return format == ImageFormat::kPng ? encode_png(img) : encode_ppm(img);
}

ImageFormat format_for_path(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return ImageFormat::kPng;
  if (ext == ".ppm") return ImageFormat::kPpm;
  throw UnsupportedFormat("unknown image extension '" + ext + "'");
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_image(bytes);
}

void write_image(const std::filesystem::path& path, const Image& img) {
  const auto bytes = encode_image(img, format_for_path(path));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace fredsr
