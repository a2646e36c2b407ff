#pragma once

// Promptable segmenter abstraction. An image is encoded once into an
// ImageEmbedding; any number of prompt-conditioned decodes then reuse it.
// Every embedding carries atomic call counters so callers can verify the
// encode-once / decode-per-prompt contract.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "simsam/image_io.hpp"
#include "simsam/mask.hpp"

namespace simsam::seg {

struct SegmenterPrompt {
  std::optional<BoundingBox> box;
  std::vector<ClickPrompt> clicks;

  /// At least one of box / clicks, all coordinates inside `shape`.
  void validate(const ImageShape& shape) const;
};

struct CallCounters {
  std::uint64_t encode_calls = 0;
  std::uint64_t decode_calls = 0;
  friend bool operator==(const CallCounters&, const CallCounters&) = default;
};

/// Backend-specific, immutable encoder output.
class EmbeddingPayload {
 public:
  virtual ~EmbeddingPayload() = default;
};

class ImageEmbedding {
 public:
  ImageEmbedding(std::string backend, ImageShape shape,
                 std::shared_ptr<const EmbeddingPayload> payload);

  const std::string& backend() const noexcept { return backend_; }
  const ImageShape& shape() const noexcept { return shape_; }

  template <class T>
  const T& payload_as() const {
    const auto* typed = dynamic_cast<const T*>(payload_.get());
    if (typed == nullptr) {
      throw Error(ErrorCode::kBackend, "embedding belongs to a different backend");
    }
    return *typed;
  }

  CallCounters counters() const noexcept;

 private:
  friend class Segmenter;

  struct Counters {
    std::atomic<std::uint64_t> encode{0};
    std::atomic<std::uint64_t> decode{0};
  };

  std::string backend_;
  ImageShape shape_;
  std::shared_ptr<const EmbeddingPayload> payload_;
  // Shared so copies of an embedding report the same counts.
  std::shared_ptr<Counters> counters_;
};

/// (encode calls, decode calls) since the embedding was created.
CallCounters predicted_latency_counters(const ImageEmbedding& emb);

class Segmenter {
 public:
  virtual ~Segmenter() = default;

  virtual std::string_view backend_id() const noexcept = 0;

  /// Throws kInvalidArgument for an empty image; backends add their own
  /// shape / load failures.
  ImageEmbedding encode(const io::Image& image) const;

  /// Validates the prompt against the embedding, then decodes. Thread-safe.
  ProbabilityMask decode(const ImageEmbedding& emb, const SegmenterPrompt& prompt) const;

 protected:
  virtual std::shared_ptr<const EmbeddingPayload> encode_payload(
      const io::Image& image) const = 0;
  virtual ProbabilityMask decode_payload(const ImageEmbedding& emb,
                                         const SegmenterPrompt& prompt) const = 0;
};

enum class BackendKind { kSynthetic, kNeural };

struct BackendConfig {
  BackendKind kind = BackendKind::kSynthetic;
  /// Directory holding encoder.onnx / decoder.onnx for the neural backend.
  std::filesystem::path model_dir;
};

/// Synthetic backends built here derive their scene from the image itself.
/// Throws kBackend when the neural backend is requested but not compiled in.
std::unique_ptr<Segmenter> make_segmenter(const BackendConfig& config);

}  // namespace simsam::seg
