#include "kinesplat/image.hpp"

#include "kinesplat/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>
#include <png.h>

namespace kinesplat {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

std::uint8_t quantize_unit(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

namespace {

std::string encode_png_raw(const std::vector<std::uint8_t>& pixels, int width, int height,
                           png_uint_32 format) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> decode_png_raw(std::string_view bytes, png_uint_32 format, int& width,
                                         int& height) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw IoError(std::string("PNG decode failed: ") + image.message);
  }
  image.format = format;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError(std::string("PNG decode failed: ") + image.message);
  }
  width = static_cast<int>(image.width);
  height = static_cast<int>(image.height);
  return pixels;
}

}  // namespace

std::string encode_png(const Image& rgb) {
  if (rgb.channels != 3) throw DimensionError("PNG export expects a 3-channel image");
  std::vector<std::uint8_t> pixels(rgb.data.size());
  std::transform(rgb.data.begin(), rgb.data.end(), pixels.begin(), quantize_unit);
  return encode_png_raw(pixels, rgb.width, rgb.height, PNG_FORMAT_RGB);
}

Image decode_png(std::string_view bytes) {
  int w = 0, h = 0;
  const auto pixels = decode_png_raw(bytes, PNG_FORMAT_RGB, w, h);
  Image out(w, h, 3);
  for (std::size_t i = 0; i < pixels.size(); ++i) out.data[i] = static_cast<float>(pixels[i]) / 255.0f;
  return out;
}

void write_png(const Image& rgb, const std::filesystem::path& path) {
  write_file_bytes(path, encode_png(rgb));
}

Image read_png(const std::filesystem::path& path) { return decode_png(read_file_bytes(path)); }

void write_mask_png(const Mask& mask, const std::filesystem::path& path) {
  std::vector<std::uint8_t> pixels(mask.bits.size());
  std::transform(mask.bits.begin(), mask.bits.end(), pixels.begin(),
                 [](std::uint8_t b) { return static_cast<std::uint8_t>(b ? 255 : 0); });
  write_file_bytes(path, encode_png_raw(pixels, mask.width, mask.height, PNG_FORMAT_GRAY));
}

Mask read_mask_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto pixels = decode_png_raw(read_file_bytes(path), PNG_FORMAT_GRAY, w, h);
  Mask mask(w, h);
  for (std::size_t i = 0; i < pixels.size(); ++i) mask.bits[i] = pixels[i] > 127 ? 1 : 0;
  return mask;
}

void write_pfm(const Image& depth, const std::filesystem::path& path) {
  if (depth.channels != 1) throw DimensionError("PFM export expects a single-channel image");
  std::string out = "Pf\n" + std::to_string(depth.width) + " " + std::to_string(depth.height) +
                    "\n-1.0\n";
  // PFM stores rows bottom to top.
  for (int y = depth.height - 1; y >= 0; --y) {
    const char* row = reinterpret_cast<const char*>(&depth.data[static_cast<std::size_t>(y) * depth.width]);
    out.append(row, static_cast<std::size_t>(depth.width) * sizeof(float));
  }
  write_file_bytes(path, out);
}

Image read_pfm(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  std::istringstream in(bytes);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  if (magic != "Pf" || w <= 0 || h <= 0 || scale >= 0.0) {
    throw ParseError("'" + path.string() + "' is not a little-endian grayscale PFM");
  }
  in.get();
  const auto offset = static_cast<std::size_t>(in.tellg());
  const std::size_t need = static_cast<std::size_t>(w) * h * sizeof(float);
  if (bytes.size() < offset + need) throw TruncationError("PFM body truncated", bytes.size());
  Image out(w, h, 1);
  for (int y = 0; y < h; ++y) {
    std::memcpy(&out.data[static_cast<std::size_t>(h - 1 - y) * w],
                bytes.data() + offset + static_cast<std::size_t>(y) * w * sizeof(float),
                static_cast<std::size_t>(w) * sizeof(float));
  }
  return out;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw ParseError("base64 length is not a multiple of 4");
  std::string out(3 * (text.size() / 4), '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw ParseError("invalid base64 payload");
  // EVP_DecodeBlock keeps the bytes produced by '=' padding.
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr)) {
    throw Error("SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

}  // namespace kinesplat
