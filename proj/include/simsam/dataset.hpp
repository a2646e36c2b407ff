#pragma once

// Image / mask corpora: JSON-lines manifests, seeded 80/10/10 splits, and the
// synthetic scene generator.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "simsam/image_io.hpp"
#include "simsam/mask.hpp"
#include "simsam/synthetic_segmenter.hpp"

namespace simsam::dataset {

struct ManifestEntry {
  /// Image file stem; unique within a manifest.
  std::string id;
  std::filesystem::path image;
  std::filesystem::path mask;
  /// "train", "val", "test" or empty.
  std::string split;
  /// Optional synthetic scene descriptor for the image.
  std::optional<std::filesystem::path> scene;
};

struct DatasetManifest {
  std::string name;
  std::vector<ManifestEntry> entries;
  std::uint64_t split_seed = 0;
  /// Entries dropped at load because their mask was empty.
  std::size_t rejected = 0;

  std::size_t size() const noexcept { return entries.size(); }
};

/// One JSON object per line: {"image", "mask", "split"?, "scene"?}, paths
/// relative to the manifest file. Missing or undecodable files and shape
/// mismatches throw (kIo / kDecode / kUnsupportedMedia / kShapeMismatch);
/// entries with an empty mask are dropped with a warning.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Writes `manifest` as JSON lines with paths relative to `path`'s directory.
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

struct LoadedEntry {
  ManifestEntry entry;
  io::Image image;
  /// Ground truth binarized at 128.
  BinaryMask mask;
  BoundingBox box;
  std::optional<seg::SyntheticScene> scene;
};

LoadedEntry load_entry(const ManifestEntry& entry);

struct SplitSpec {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;

  /// Fractions in [0, 1] summing to 1.
  void validate() const;
};

struct Splits {
  DatasetManifest train;
  DatasetManifest validation;
  DatasetManifest test;
};

/// Seeded shuffle, then contiguous partition of sizes floor(train * n),
/// floor(validation * n) and the remainder. Throws kInvalidArgument when
/// n < 10.
Splits split(const DatasetManifest& manifest, const SplitSpec& spec);

struct SynthSpec {
  std::size_t count = 200;
  ImageShape shape{64, 64};
  double noise_amplitude = 0.8;
  std::uint64_t seed = 0;
};

/// One random ellipse or blob per scene, placed well inside the frame.
seg::SyntheticScene random_scene(const SynthSpec& spec, std::size_t index);

/// Writes scene_XXXX.png, scene_XXXX_mask.png, scene_XXXX.json and
/// manifest.jsonl into `out_dir`; byte-identical for equal specs.
DatasetManifest synth_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace simsam::dataset
