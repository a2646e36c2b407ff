#include "simsam/synthetic_segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "simsam/distance_transform.hpp"
#include "simsam/mask_io.hpp"

namespace simsam::seg {

void SceneParams::validate() const {
  if (!(blur_radius >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "blur radius must be >= 0");
  }
  if (!(noise_amplitude >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "noise amplitude must be >= 0");
  }
  if (!(noise_cell >= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "noise cell must be >= 1 pixel");
  }
  if (!(sdf_scale > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "sdf scale must be > 0");
  }
  if (!(click_radius >= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "click influence radius must be >= 1");
  }
  if (!(click_strength > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "click strength must be > 0");
  }
}

// ---------------------------------------------------------------------------
// Scene construction

namespace {

bool inside(const ShapePrimitive& p, double row, double col) {
  const double dr = row - p.center_row;
  const double dc = col - p.center_col;
  switch (p.kind) {
    case PrimitiveKind::kEllipse: {
      const double u = dr * std::cos(p.angle) + dc * std::sin(p.angle);
      const double v = -dr * std::sin(p.angle) + dc * std::cos(p.angle);
      return (u * u) / (p.radius_row * p.radius_row) + (v * v) / (p.radius_col * p.radius_col) <=
             1.0;
    }
    case PrimitiveKind::kBlob: {
      const double theta = std::atan2(dr, dc);
      double radius = p.radius_row;
      int order = 2;
      for (const auto& [amp, phase] : p.harmonics) {
        radius += p.radius_row * amp * std::cos(order * theta + phase);
        ++order;
      }
      return std::hypot(dr, dc) <= radius;
    }
  }
  return false;
}

}  // namespace

BinaryMask render_primitives(const ImageShape& shape, const std::vector<ShapePrimitive>& prims) {
  BinaryMask mask(shape);
  for (std::size_t r = 0; r < shape.height; ++r) {
    for (std::size_t c = 0; c < shape.width; ++c) {
      for (const auto& p : prims) {
        if (inside(p, static_cast<double>(r), static_cast<double>(c))) {
          mask.set(r, c, true);
          break;
        }
      }
    }
  }
  return mask;
}

SyntheticScene SyntheticScene::from_primitives(ImageShape shape,
                                               std::vector<ShapePrimitive> prims,
                                               SceneParams params) {
  shape.validate();
  params.validate();
  for (const auto& p : prims) {
    if (!(p.radius_row > 0.0) || (p.kind == PrimitiveKind::kEllipse && !(p.radius_col > 0.0))) {
      throw Error(ErrorCode::kInvalidArgument, "shape radii must be positive");
    }
  }
  BinaryMask mask = render_primitives(shape, prims);
  return SyntheticScene{shape, std::move(mask), params, std::move(prims)};
}

SyntheticScene SyntheticScene::from_mask(BinaryMask mask, SceneParams params) {
  params.validate();
  const ImageShape shape = mask.shape();
  return SyntheticScene{shape, std::move(mask), params, {}};
}

io::Image render_scene_image(const SyntheticScene& scene) {
  const auto texture = value_noise(scene.shape, 5.0, scene.params.noise_seed ^ 0x5eedf00dULL);
  io::Image image(scene.shape, 1);
  for (std::size_t i = 0; i < scene.shape.pixel_count(); ++i) {
    const double base = scene.true_mask.test(i) ? 180.0 : 70.0;
    image.pixels[i] = static_cast<std::uint8_t>(std::lround(base + 30.0 * texture[i]));
  }
  return image;
}

// ---------------------------------------------------------------------------
// JSON descriptor

nlohmann::json scene_to_json(const SyntheticScene& scene) {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& p : scene.primitives) {
    if (p.kind == PrimitiveKind::kEllipse) {
      shapes.push_back({{"type", "ellipse"},
                        {"center", {p.center_row, p.center_col}},
                        {"radii", {p.radius_row, p.radius_col}},
                        {"angle", p.angle}});
    } else {
      nlohmann::json harmonics = nlohmann::json::array();
      for (const auto& [amp, phase] : p.harmonics) harmonics.push_back({amp, phase});
      shapes.push_back({{"type", "blob"},
                        {"center", {p.center_row, p.center_col}},
                        {"radius", p.radius_row},
                        {"harmonics", harmonics}});
    }
  }
  const SceneParams& sp = scene.params;
  return {{"height", scene.shape.height},
          {"width", scene.shape.width},
          {"shapes", shapes},
          {"blur", sp.blur_radius},
          {"noise_amplitude", sp.noise_amplitude},
          {"noise_seed", sp.noise_seed},
          {"noise_cell", sp.noise_cell},
          {"sdf_scale", sp.sdf_scale},
          {"click_radius", sp.click_radius},
          {"click_strength", sp.click_strength}};
}

SyntheticScene scene_from_json(const nlohmann::json& j) {
  try {
    const ImageShape shape{j.at("height").get<std::size_t>(), j.at("width").get<std::size_t>()};
    SceneParams sp;
    sp.blur_radius = j.value("blur", sp.blur_radius);
    sp.noise_amplitude = j.value("noise_amplitude", sp.noise_amplitude);
    sp.noise_seed = j.value("noise_seed", sp.noise_seed);
    sp.noise_cell = j.value("noise_cell", sp.noise_cell);
    sp.sdf_scale = j.value("sdf_scale", sp.sdf_scale);
    sp.click_radius = j.value("click_radius", sp.click_radius);
    sp.click_strength = j.value("click_strength", sp.click_strength);

    std::vector<ShapePrimitive> prims;
    for (const auto& s : j.at("shapes")) {
      ShapePrimitive p;
      const auto type = s.at("type").get<std::string>();
      p.center_row = s.at("center").at(0).get<double>();
      p.center_col = s.at("center").at(1).get<double>();
      if (type == "ellipse") {
        p.kind = PrimitiveKind::kEllipse;
        p.radius_row = s.at("radii").at(0).get<double>();
        p.radius_col = s.at("radii").at(1).get<double>();
        p.angle = s.value("angle", 0.0);
      } else if (type == "blob") {
        p.kind = PrimitiveKind::kBlob;
        p.radius_row = s.at("radius").get<double>();
        p.radius_col = p.radius_row;
        for (const auto& h : s.value("harmonics", nlohmann::json::array())) {
          p.harmonics.emplace_back(h.at(0).get<double>(), h.at(1).get<double>());
        }
      } else {
        throw Error(ErrorCode::kConfig, fmt::format("unknown shape type '{}'", type));
      }
      prims.push_back(std::move(p));
    }
    if (prims.empty()) throw Error(ErrorCode::kConfig, "scene has no shapes");
    return SyntheticScene::from_primitives(shape, std::move(prims), sp);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, fmt::format("bad scene descriptor: {}", e.what()));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig) throw;
    throw Error(ErrorCode::kConfig, fmt::format("bad scene descriptor: {}", e.what()));
  }
}

SyntheticScene load_scene(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, fmt::format("{}: {}", path.string(), e.what()));
  }
  return scene_from_json(j);
}

void save_scene(const std::filesystem::path& path, const SyntheticScene& scene) {
  const std::string text = scene_to_json(scene).dump(2) + "\n";
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------
// Fields

std::vector<double> signed_distance(const BinaryMask& mask) {
  const ImageShape& shape = mask.shape();
  const auto to_background = squared_distance_transform(mask.complement());
  const auto to_foreground = squared_distance_transform(mask);
  // With one class absent, distances saturate at the image diagonal.
  const double cap = std::hypot(static_cast<double>(shape.height), static_cast<double>(shape.width));
  std::vector<double> sdf(shape.pixel_count());
  for (std::size_t i = 0; i < sdf.size(); ++i) {
    if (mask.test(i)) {
      sdf[i] = std::min(std::sqrt(to_background[i]), cap) - 0.5;
    } else {
      sdf[i] = -(std::min(std::sqrt(to_foreground[i]), cap) - 0.5);
    }
  }
  return sdf;
}

std::vector<double> gaussian_blur(const std::vector<double>& field, const ImageShape& shape,
                                  double radius) {
  if (radius <= 0.0) return field;
  const auto half = static_cast<long>(std::ceil(3.0 * radius));
  std::vector<double> kernel(static_cast<std::size_t>(2 * half + 1));
  double total = 0.0;
  for (long t = -half; t <= half; ++t) {
    const double v = std::exp(-static_cast<double>(t * t) / (2.0 * radius * radius));
    kernel[static_cast<std::size_t>(t + half)] = v;
    total += v;
  }
  for (auto& v : kernel) v /= total;

  const auto h = static_cast<long>(shape.height);
  const auto w = static_cast<long>(shape.width);
  auto clamp = [](long v, long hi) { return std::clamp(v, 0L, hi - 1); };
  std::vector<double> tmp(field.size()), out(field.size());
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      double acc = 0.0;
      for (long t = -half; t <= half; ++t) {
        acc += kernel[static_cast<std::size_t>(t + half)] *
               field[static_cast<std::size_t>(r * w + clamp(c + t, w))];
      }
      tmp[static_cast<std::size_t>(r * w + c)] = acc;
    }
  }
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      double acc = 0.0;
      for (long t = -half; t <= half; ++t) {
        acc += kernel[static_cast<std::size_t>(t + half)] *
               tmp[static_cast<std::size_t>(clamp(r + t, h) * w + c)];
      }
      out[static_cast<std::size_t>(r * w + c)] = acc;
    }
  }
  return out;
}

std::vector<double> value_noise(const ImageShape& shape, double cell, std::uint64_t seed) {
  const auto lattice_h = static_cast<std::size_t>(static_cast<double>(shape.height) / cell) + 2;
  const auto lattice_w = static_cast<std::size_t>(static_cast<double>(shape.width) / cell) + 2;
  std::mt19937_64 engine(seed);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  std::vector<double> lattice(lattice_h * lattice_w);
  for (auto& v : lattice) v = uniform(engine);

  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  std::vector<double> out(shape.pixel_count());
  for (std::size_t r = 0; r < shape.height; ++r) {
    const double y = static_cast<double>(r) / cell;
    const auto y0 = static_cast<std::size_t>(y);
    const double fy = smooth(y - static_cast<double>(y0));
    for (std::size_t c = 0; c < shape.width; ++c) {
      const double x = static_cast<double>(c) / cell;
      const auto x0 = static_cast<std::size_t>(x);
      const double fx = smooth(x - static_cast<double>(x0));
      const double a = lattice[y0 * lattice_w + x0];
      const double b = lattice[y0 * lattice_w + x0 + 1];
      const double d = lattice[(y0 + 1) * lattice_w + x0];
      const double e = lattice[(y0 + 1) * lattice_w + x0 + 1];
      out[shape.index(r, c)] =
          a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + d * fy * (1 - fx) + e * fy * fx;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backend

// sigmoid(b + d) = 1 / (1 + exp(-b) * exp(-d)): the encoder caches exp(-b)
// per pixel and the kernel caches exp(-d) per click offset, so decoding is
// multiplications only.
struct SyntheticSegmenter::ClickKernel {
  long reach = 0;
  std::size_t side = 0;
  // exp(-s * g(offset)) for a positive click and exp(+s * g(offset)) for a
  // negative one; 1 past the cutoff of four radii.
  std::vector<double> positive;
  std::vector<double> negative;
};

namespace {

struct SyntheticPayload final : EmbeddingPayload {
  std::vector<double> exp_neg_logits;
  BinaryMask truth;
};

}  // namespace

std::shared_ptr<const SyntheticSegmenter::ClickKernel> SyntheticSegmenter::build_kernel(
    const SceneParams& sp) {
  auto kernel = std::make_shared<ClickKernel>();
  const double radius = sp.click_radius;
  kernel->reach = static_cast<long>(std::floor(4.0 * radius));
  kernel->side = static_cast<std::size_t>(2 * kernel->reach + 1);
  kernel->positive.assign(kernel->side * kernel->side, 1.0);
  kernel->negative.assign(kernel->side * kernel->side, 1.0);
  const double cutoff2 = 16.0 * radius * radius;
  for (long dr = -kernel->reach; dr <= kernel->reach; ++dr) {
    for (long dc = -kernel->reach; dc <= kernel->reach; ++dc) {
      const auto d2 = static_cast<double>(dr * dr + dc * dc);
      if (d2 > cutoff2) continue;
      const double bump = sp.click_strength * std::exp(-d2 / (2.0 * radius * radius));
      const std::size_t j = static_cast<std::size_t>(dr + kernel->reach) * kernel->side +
                            static_cast<std::size_t>(dc + kernel->reach);
      kernel->positive[j] = std::exp(-bump);
      kernel->negative[j] = std::exp(bump);
    }
  }
  return kernel;
}

SyntheticSegmenter::SyntheticSegmenter(SceneParams params) : params_(params) {
  params_.validate();
  kernel_ = build_kernel(params_);
}

SyntheticSegmenter::SyntheticSegmenter(SyntheticScene scene)
    : params_(scene.params), scene_(std::move(scene)) {
  params_.validate();
  kernel_ = build_kernel(params_);
}

std::shared_ptr<const EmbeddingPayload> SyntheticSegmenter::encode_payload(
    const io::Image& image) const {
  SyntheticScene scene = scene_ ? *scene_
                                : SyntheticScene::from_mask(io::image_to_mask(image), params_);
  if (image.shape != scene.shape) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("synthetic scene is {}x{} but image is {}x{}", scene.shape.height,
                            scene.shape.width, image.shape.height, image.shape.width));
  }
  const SceneParams& sp = scene.params;
  auto logits = gaussian_blur(signed_distance(scene.true_mask), scene.shape, sp.blur_radius);
  // Blur can flip the sign at sharp corners; keep every pixel on its true side
  // so the noiseless decode reproduces the shape exactly.
  constexpr double kMinMargin = 1e-3;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double v = scene.true_mask.test(i) ? std::max(logits[i], kMinMargin)
                                             : std::min(logits[i], -kMinMargin);
    logits[i] = v * sp.sdf_scale;
  }
  if (sp.noise_amplitude > 0.0) {
    const auto noise = value_noise(scene.shape, sp.noise_cell, sp.noise_seed);
    for (std::size_t i = 0; i < noise.size(); ++i) logits[i] += sp.noise_amplitude * noise[i];
  }
  auto payload = std::make_shared<SyntheticPayload>();
  payload->exp_neg_logits.resize(logits.size());
  std::transform(logits.begin(), logits.end(), payload->exp_neg_logits.begin(),
                 [](double v) { return std::exp(-v); });
  payload->truth = std::move(scene.true_mask);
  return payload;
}

ProbabilityMask SyntheticSegmenter::decode_payload(const ImageEmbedding& emb,
                                                   const SegmenterPrompt& prompt) const {
  const auto& pl = emb.payload_as<SyntheticPayload>();
  const ClickKernel& kernel = *kernel_;
  const ImageShape& shape = emb.shape();
  const BoundingBox region =
      prompt.box.value_or(BoundingBox{0, 0, shape.height - 1, shape.width - 1});

  // exp(-click logits) over the region; pixels outside the box stay at p = 0.
  const std::size_t region_w = region.width();
  // Reused per thread; the decode runs 51 times per image.
  thread_local std::vector<double> factor;
  factor.assign(region.height() * region_w, 1.0);
  for (const auto& click : prompt.clicks) {
    const auto& table =
        click.label == ClickLabel::kPositive ? kernel.positive : kernel.negative;
    const bool click_side = pl.truth.at(click.row, click.col);
    const auto cr = static_cast<long>(click.row);
    const auto cc = static_cast<long>(click.col);
    const long r0 = std::max(static_cast<long>(region.row_min), cr - kernel.reach);
    const long r1 = std::min(static_cast<long>(region.row_max), cr + kernel.reach);
    const long c0 = std::max(static_cast<long>(region.col_min), cc - kernel.reach);
    const long c1 = std::min(static_cast<long>(region.col_max), cc + kernel.reach);
    for (long r = r0; r <= r1; ++r) {
      const double* row = &table[static_cast<std::size_t>(r - cr + kernel.reach) * kernel.side];
      const auto ur = static_cast<std::size_t>(r);
      double* out = &factor[(ur - region.row_min) * region_w];
      for (long c = c0; c <= c1; ++c) {
        const auto uc = static_cast<std::size_t>(c);
        if (pl.truth.at(ur, uc) != click_side) continue;
        out[uc - region.col_min] *= row[c - cc + kernel.reach];
      }
    }
  }

  std::vector<double> probs(shape.pixel_count(), 0.0);
  for (std::size_t r = region.row_min; r <= region.row_max; ++r) {
    const double* f = &factor[(r - region.row_min) * region_w];
    const std::size_t base = shape.index(r, region.col_min);
    for (std::size_t c = 0; c < region_w; ++c) {
      probs[base + c] = 1.0 / (1.0 + pl.exp_neg_logits[base + c] * f[c]);
    }
  }
  return ProbabilityMask(shape, std::move(probs));
}

}  // namespace simsam::seg
