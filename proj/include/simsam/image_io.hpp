#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "simsam/mask.hpp"

namespace simsam::io {

/// 8-bit interleaved pixel grid with 1 (gray) or 3 (RGB) channels.
struct Image {
  ImageShape shape;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(ImageShape s, int c);

  std::uint8_t& at(std::size_t row, std::size_t col, int ch = 0) {
    return pixels[(shape.index(row, col)) * static_cast<std::size_t>(channels) +
                  static_cast<std::size_t>(ch)];
  }
  std::uint8_t at(std::size_t row, std::size_t col, int ch = 0) const {
    return pixels[(shape.index(row, col)) * static_cast<std::size_t>(channels) +
                  static_cast<std::size_t>(ch)];
  }

  /// Rec. 601 luma for RGB, identity for gray.
  Image to_gray() const;
};

enum class ImageFormat { kPng, kJpeg, kUnknown };

ImageFormat sniff_format(std::span<const std::uint8_t> bytes);

/// Reads only the header. Throws kUnsupportedMedia if not PNG/JPEG.
ImageShape peek_shape(std::span<const std::uint8_t> bytes);

/// Decodes PNG or JPEG into gray or RGB (alpha dropped).
/// Throws kUnsupportedMedia for anything else, kDecode for corrupt data.
Image decode_image(std::span<const std::uint8_t> bytes);
Image read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const std::filesystem::path& path, const Image& image);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace simsam::io
