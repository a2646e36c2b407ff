#include "simsam/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "simsam/mask_io.hpp"

namespace simsam::dataset {

namespace fs = std::filesystem;

namespace {

void require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) {
    throw Error(ErrorCode::kIo, fmt::format("missing file {}", path.string()));
  }
}

std::string relative_to(const fs::path& target, const fs::path& base) {
  return fs::proximate(target, base).generic_string();
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open manifest {}", path.string()));
  const fs::path root = path.parent_path();

  DatasetManifest manifest;
  manifest.name = path.parent_path().filename().string();
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ManifestEntry entry;
    try {
      const auto j = nlohmann::json::parse(line);
      entry.image = root / j.at("image").get<std::string>();
      entry.mask = root / j.at("mask").get<std::string>();
      entry.split = j.value("split", "");
      if (j.contains("scene")) entry.scene = root / j.at("scene").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kConfig,
                  fmt::format("{}:{}: bad manifest entry: {}", path.string(), line_no, e.what()));
    }
    entry.id = entry.image.stem().string();
    require_file(entry.image);
    require_file(entry.mask);
    if (entry.scene) require_file(*entry.scene);
    if (!ids.insert(entry.id).second) {
      throw Error(ErrorCode::kConfig,
                  fmt::format("{}:{}: duplicate entry id '{}'", path.string(), line_no, entry.id));
    }

    const ImageShape image_shape = io::peek_shape(io::read_file(entry.image));
    const BinaryMask mask = io::read_mask_png(entry.mask);
    if (mask.shape() != image_shape) {
      throw Error(ErrorCode::kShapeMismatch,
                  fmt::format("{}: mask {}x{} does not match image {}x{}", entry.id,
                              mask.shape().height, mask.shape().width, image_shape.height,
                              image_shape.width));
    }
    if (mask.empty()) {
      spdlog::warn("manifest {}: entry '{}' has an empty mask, skipped", path.string(), entry.id);
      ++manifest.rejected;
      continue;
    }
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
  const fs::path root = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  std::ostringstream out;
  for (const auto& e : manifest.entries) {
    nlohmann::ordered_json j;
    j["image"] = relative_to(e.image, root);
    j["mask"] = relative_to(e.mask, root);
    if (!e.split.empty()) j["split"] = e.split;
    if (e.scene) j["scene"] = relative_to(*e.scene, root);
    out << j.dump() << '\n';
  }
  const std::string text = out.str();
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

LoadedEntry load_entry(const ManifestEntry& entry) {
  LoadedEntry loaded;
  loaded.entry = entry;
  loaded.image = io::read_image(entry.image);
  loaded.mask = io::read_mask_png(entry.mask);
  require_same_shape(loaded.image.shape, loaded.mask.shape());
  loaded.box = bbox_from_mask(loaded.mask);
  if (entry.scene) {
    loaded.scene = seg::load_scene(*entry.scene);
    require_same_shape(loaded.image.shape, loaded.scene->shape);
  }
  return loaded;
}

void SplitSpec::validate() const {
  for (double f : {train, validation, test}) {
    if (!(f >= 0.0 && f <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "split fractions must lie in [0, 1]");
    }
  }
  if (std::abs(train + validation + test - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidArgument, "split fractions must sum to 1");
  }
}

Splits split(const DatasetManifest& manifest, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = manifest.size();
  if (n < 10) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("cannot split {} entries; need at least 10", n));
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 engine(spec.seed);
  std::shuffle(order.begin(), order.end(), engine);

  // The epsilon absorbs binary representation error in the fractions.
  const auto n_train = static_cast<std::size_t>(std::floor(spec.train * static_cast<double>(n) + 1e-9));
  const auto n_val =
      static_cast<std::size_t>(std::floor(spec.validation * static_cast<double>(n) + 1e-9));

  Splits out;
  for (DatasetManifest* part : {&out.train, &out.validation, &out.test}) {
    part->name = manifest.name;
    part->split_seed = spec.seed;
  }
  for (std::size_t pos = 0; pos < n; ++pos) {
    ManifestEntry entry = manifest.entries[order[pos]];
    if (pos < n_train) {
      entry.split = "train";
      out.train.entries.push_back(std::move(entry));
    } else if (pos < n_train + n_val) {
      entry.split = "val";
      out.validation.entries.push_back(std::move(entry));
    } else {
      entry.split = "test";
      out.test.entries.push_back(std::move(entry));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

seg::SyntheticScene random_scene(const SynthSpec& spec, std::size_t index) {
  spec.shape.validate();
  // Each scene has its own stream so scene i does not depend on count.
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 engine(seq);
  auto uniform = [&](double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(engine() >> 11) * 0x1.0p-53;
  };

  const auto h = static_cast<double>(spec.shape.height);
  const auto w = static_cast<double>(spec.shape.width);
  const double scale = std::min(h, w) / 64.0;

  seg::ShapePrimitive prim;
  prim.center_row = uniform(0.34 * h, 0.66 * h);
  prim.center_col = uniform(0.34 * w, 0.66 * w);
  if (engine() % 2 == 0) {
    prim.kind = seg::PrimitiveKind::kEllipse;
    prim.radius_row = uniform(8.0, 18.0) * scale;
    prim.radius_col = uniform(8.0, 18.0) * scale;
    prim.angle = uniform(0.0, std::numbers::pi);
  } else {
    prim.kind = seg::PrimitiveKind::kBlob;
    prim.radius_row = uniform(10.0, 16.0) * scale;
    prim.radius_col = prim.radius_row;
    for (int order = 2; order <= 4; ++order) {
      prim.harmonics.emplace_back(uniform(0.0, 0.12), uniform(0.0, 2.0 * std::numbers::pi));
    }
  }

  seg::SceneParams params;
  params.noise_amplitude = spec.noise_amplitude;
  params.noise_seed = engine();
  return seg::SyntheticScene::from_primitives(spec.shape, {prim}, params);
}

DatasetManifest synth_corpus(const SynthSpec& spec, const fs::path& out_dir) {
  if (spec.count == 0) throw Error(ErrorCode::kInvalidArgument, "count must be >= 1");
  fs::create_directories(out_dir);
  DatasetManifest manifest;
  manifest.name = out_dir.filename().string();
  manifest.split_seed = spec.seed;
  for (std::size_t i = 0; i < spec.count; ++i) {
    const seg::SyntheticScene scene = random_scene(spec, i);
    const std::string stem = fmt::format("scene_{:04d}", i);
    ManifestEntry entry;
    entry.id = stem;
    entry.image = out_dir / (stem + ".png");
    entry.mask = out_dir / (stem + "_mask.png");
    entry.scene = out_dir / (stem + ".json");
    io::write_png(entry.image, seg::render_scene_image(scene));
    io::write_mask_png(entry.mask, scene.true_mask);
    seg::save_scene(*entry.scene, scene);
    manifest.entries.push_back(std::move(entry));
  }
  save_manifest(out_dir / "manifest.jsonl", manifest);
  return manifest;
}

}  // namespace simsam::dataset
