#pragma once

// Mask and probability-map serialization:
//  * 8-bit PNG interchange (mask 0/255, probability round(v * 255))
//  * "SIMM" lossless container: magic "SIMM", u32 LE height, u32 LE width,
//    then row-major payload: f64 LE per pixel for probabilities, or bits packed
//    LSB-first (pixel i -> byte i / 8, bit i % 8) for masks
//  * run-length encoding used on the HTTP wire

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "simsam/image_io.hpp"
#include "simsam/mask.hpp"

namespace simsam::io {

Image mask_to_image(const BinaryMask& mask);
Image probability_to_image(const ProbabilityMask& p);

/// Gray value >= cutoff is foreground. RGB input is converted to luma first.
BinaryMask image_to_mask(const Image& image, std::uint8_t cutoff = 128);
ProbabilityMask image_to_probability(const Image& image);

BinaryMask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask);

std::vector<std::uint8_t> encode_simm(const ProbabilityMask& p);
std::vector<std::uint8_t> encode_simm(const BinaryMask& m);
/// Throw kDecode on bad magic, truncated payload or trailing bytes.
ProbabilityMask decode_simm_probability(std::span<const std::uint8_t> bytes);
BinaryMask decode_simm_mask(std::span<const std::uint8_t> bytes);

/// Row-major run lengths alternating background/foreground, starting with a
/// (possibly zero) background run. Counts sum to height * width.
struct Rle {
  ImageShape shape;
  std::vector<std::uint64_t> counts;

  friend bool operator==(const Rle&, const Rle&) = default;
};

Rle rle_encode(const BinaryMask& mask);
/// Throws kDecode when counts do not sum to the pixel count.
BinaryMask rle_decode(const Rle& rle);

void to_json(nlohmann::json& j, const Rle& rle);
void from_json(const nlohmann::json& j, Rle& rle);

}  // namespace simsam::io
