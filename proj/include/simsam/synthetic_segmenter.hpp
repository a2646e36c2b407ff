#pragma once

// Deterministic stand-in for a promptable segmenter. For a scene with true
// shape T the decoder emits, per pixel x,
//
//   logit(x) = alpha * blur(sdf_T)(x) + A * noise(x)
//            + sum_clicks s * sign * g(x - z) * [T(x) == T(z)]
//
// where sdf_T is the signed distance to T's boundary (positive inside; the
// blurred field is clamped back to T's side where blur flips its sign),
// noise is smooth value noise in [-1, 1], and g a Gaussian bump of the click
// influence radius truncated at four radii. The bump stays on the true side of
// the clicked pixel: the model knows where the edge is even when its box-only
// output does not show it. Pixels outside the prompt box get p = 0.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "simsam/image_io.hpp"
#include "simsam/segmenter.hpp"

namespace simsam::seg {

enum class PrimitiveKind { kEllipse, kBlob };

/// A filled shape in pixel coordinates (pixel centres at integer positions).
struct ShapePrimitive {
  PrimitiveKind kind = PrimitiveKind::kEllipse;
  double center_row = 0.0;
  double center_col = 0.0;
  /// Ellipse semi-axes along (rotated) rows / cols; blob uses radius_row only.
  double radius_row = 1.0;
  double radius_col = 1.0;
  /// Ellipse rotation in radians.
  double angle = 0.0;
  /// Blob radial harmonics (amplitude, phase) for orders 2, 3, ...
  std::vector<std::pair<double, double>> harmonics;
};

struct SceneParams {
  double blur_radius = 1.0;
  double noise_amplitude = 0.8;
  std::uint64_t noise_seed = 0;
  double noise_cell = 12.0;
  double sdf_scale = 0.15;
  double click_radius = 10.0;
  double click_strength = 2.0;

  void validate() const;
};

struct SyntheticScene {
  ImageShape shape;
  BinaryMask true_mask;
  SceneParams params;
  /// Empty when the scene was built from a mask rather than primitives.
  std::vector<ShapePrimitive> primitives;

  static SyntheticScene from_primitives(ImageShape shape, std::vector<ShapePrimitive> prims,
                                        SceneParams params);
  static SyntheticScene from_mask(BinaryMask mask, SceneParams params);
};

BinaryMask render_primitives(const ImageShape& shape, const std::vector<ShapePrimitive>& prims);

/// Gray image whose pixels are >= 128 exactly on the true mask, with a
/// deterministic texture so it is not a plain mask.
io::Image render_scene_image(const SyntheticScene& scene);

/// JSON descriptor: height, width, shapes[], blur, noise_amplitude, noise_seed,
/// noise_cell, sdf_scale, click_radius, click_strength.
nlohmann::json scene_to_json(const SyntheticScene& scene);
/// Throws kConfig on malformed descriptors or descriptors without shapes.
SyntheticScene scene_from_json(const nlohmann::json& j);
SyntheticScene load_scene(const std::filesystem::path& path);
void save_scene(const std::filesystem::path& path, const SyntheticScene& scene);

/// Signed distance to the boundary of `mask`: d - 0.5 inside, -(d - 0.5)
/// outside, with d the exact Euclidean distance to the nearest pixel of the
/// other class.
std::vector<double> signed_distance(const BinaryMask& mask);

/// Separable Gaussian blur with sigma = radius, replicated borders.
std::vector<double> gaussian_blur(const std::vector<double>& field, const ImageShape& shape,
                                  double radius);

/// Smooth value noise in [-1, 1] on a lattice of spacing `cell`.
std::vector<double> value_noise(const ImageShape& shape, double cell, std::uint64_t seed);

class SyntheticSegmenter final : public Segmenter {
 public:
  /// Scene derived from each encoded image (gray >= 128 is the object).
  explicit SyntheticSegmenter(SceneParams params = {});
  /// Bound to one scene; encode() requires an image of the scene's shape.
  explicit SyntheticSegmenter(SyntheticScene scene);

  std::string_view backend_id() const noexcept override { return "synthetic"; }

 protected:
  std::shared_ptr<const EmbeddingPayload> encode_payload(
      const io::Image& image) const override;
  ProbabilityMask decode_payload(const ImageEmbedding& emb,
                                 const SegmenterPrompt& prompt) const override;

 private:
  struct ClickKernel;
  static std::shared_ptr<const ClickKernel> build_kernel(const SceneParams& params);

  SceneParams params_;
  std::optional<SyntheticScene> scene_;
  std::shared_ptr<const ClickKernel> kernel_;
};

}  // namespace simsam::seg
