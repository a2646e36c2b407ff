#include "simsam/mask_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include <fmt/format.h>

namespace simsam::io {

Image mask_to_image(const BinaryMask& mask) {
  Image image(mask.shape(), 1);
  for (std::size_t i = 0; i < mask.shape().pixel_count(); ++i) {
    image.pixels[i] = mask.test(i) ? 255 : 0;
  }
  return image;
}

Image probability_to_image(const ProbabilityMask& p) {
  Image image(p.shape(), 1);
  const auto values = p.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    image.pixels[i] = static_cast<std::uint8_t>(std::lround(values[i] * 255.0));
  }
  return image;
}

BinaryMask image_to_mask(const Image& image, std::uint8_t cutoff) {
  const Image gray = image.to_gray();
  BinaryMask mask(gray.shape);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
    if (gray.pixels[i] >= cutoff) mask.set(i, true);
  }
  return mask;
}

ProbabilityMask image_to_probability(const Image& image) {
  const Image gray = image.to_gray();
  std::vector<double> values(gray.pixels.size());
  std::transform(gray.pixels.begin(), gray.pixels.end(), values.begin(),
                 [](std::uint8_t v) { return v / 255.0; });
  return ProbabilityMask(gray.shape, std::move(values));
}

BinaryMask read_mask_png(const std::filesystem::path& path) {
  return image_to_mask(read_image(path));
}

void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask) {
  write_png(path, mask_to_image(mask));
}

// ---------------------------------------------------------------------------
// SIMM container

namespace {

constexpr std::uint8_t kMagic[4] = {'S', 'I', 'M', 'M'};
constexpr std::size_t kHeaderSize = 12;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<std::uint8_t> simm_header(const ImageShape& shape) {
  if (shape.height > UINT32_MAX || shape.width > UINT32_MAX) {
    throw Error(ErrorCode::kInvalidArgument, "shape exceeds u32 range");
  }
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(shape.height));
  put_u32(out, static_cast<std::uint32_t>(shape.width));
  return out;
}

ImageShape read_simm_header(std::span<const std::uint8_t> bytes, std::size_t bytes_per_n,
                            bool packed_bits) {
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::kDecode, "missing SIMM magic");
  }
  const ImageShape shape{get_u32(bytes.data() + 4), get_u32(bytes.data() + 8)};
  if (shape.height == 0 || shape.width == 0) {
    throw Error(ErrorCode::kDecode, "SIMM shape must be non-empty");
  }
  const std::size_t n = shape.pixel_count();
  const std::size_t payload = packed_bits ? (n + 7) / 8 : n * bytes_per_n;
  if (bytes.size() != kHeaderSize + payload) {
    throw Error(ErrorCode::kDecode,
                fmt::format("SIMM payload is {} bytes, expected {}", bytes.size() - kHeaderSize,
                            payload));
  }
  return shape;
}

}  // namespace

std::vector<std::uint8_t> encode_simm(const ProbabilityMask& p) {
  auto out = simm_header(p.shape());
  out.reserve(kHeaderSize + p.values().size() * 8);
  for (double v : p.values()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return out;
}

std::vector<std::uint8_t> encode_simm(const BinaryMask& m) {
  auto out = simm_header(m.shape());
  const std::size_t n = m.shape().pixel_count();
  out.resize(kHeaderSize + (n + 7) / 8, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (m.test(i)) out[kHeaderSize + i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return out;
}

ProbabilityMask decode_simm_probability(std::span<const std::uint8_t> bytes) {
  const ImageShape shape = read_simm_header(bytes, 8, false);
  std::vector<double> values(shape.pixel_count());
  const std::uint8_t* p = bytes.data() + kHeaderSize;
  for (auto& v : values) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    v = std::bit_cast<double>(bits);
    p += 8;
  }
  try {
    return ProbabilityMask(shape, std::move(values));
  } catch (const Error& e) {
    throw Error(ErrorCode::kDecode, e.what());
  }
}

BinaryMask decode_simm_mask(std::span<const std::uint8_t> bytes) {
  const ImageShape shape = read_simm_header(bytes, 0, true);
  const std::size_t n = shape.pixel_count();
  const std::uint8_t* p = bytes.data() + kHeaderSize;
  if (n % 8 != 0 && (p[n / 8] >> (n % 8)) != 0) {
    throw Error(ErrorCode::kDecode, "SIMM mask has non-zero padding bits");
  }
  BinaryMask mask(shape);
  for (std::size_t i = 0; i < n; ++i) {
    if ((p[i / 8] >> (i % 8)) & 1u) mask.set(i, true);
  }
  return mask;
}

// ---------------------------------------------------------------------------
// RLE

Rle rle_encode(const BinaryMask& mask) {
  Rle rle{mask.shape(), {}};
  bool current = false;
  std::uint64_t run = 0;
  for (std::size_t i = 0; i < mask.shape().pixel_count(); ++i) {
    const bool v = mask.test(i);
    if (v != current) {
      rle.counts.push_back(run);
      current = v;
      run = 0;
    }
    ++run;
  }
  rle.counts.push_back(run);
  return rle;
}

BinaryMask rle_decode(const Rle& rle) {
  const std::size_t n = rle.shape.pixel_count();
  BinaryMask mask(rle.shape);
  std::size_t pos = 0;
  bool value = false;
  for (std::uint64_t run : rle.counts) {
    if (run > n - pos) throw Error(ErrorCode::kDecode, "RLE runs overflow the mask");
    if (value) {
      for (std::size_t i = pos; i < pos + run; ++i) mask.set(i, true);
    }
    pos += run;
    value = !value;
  }
  if (pos != n) {
    throw Error(ErrorCode::kDecode,
                fmt::format("RLE covers {} of {} pixels", pos, n));
  }
  return mask;
}

void to_json(nlohmann::json& j, const Rle& rle) {
  j = nlohmann::json{{"height", rle.shape.height},
                     {"width", rle.shape.width},
                     {"counts", rle.counts}};
}

void from_json(const nlohmann::json& j, Rle& rle) {
  j.at("height").get_to(rle.shape.height);
  j.at("width").get_to(rle.shape.width);
  j.at("counts").get_to(rle.counts);
}

}  // namespace simsam::io
