#include "simsam/segmenter.hpp"

#include <fmt/format.h>

#include "simsam/synthetic_segmenter.hpp"
#ifdef SIMSAM_HAS_ONNXRUNTIME
#include "simsam/onnx_segmenter.hpp"
#endif

namespace simsam::seg {

void SegmenterPrompt::validate(const ImageShape& shape) const {
  if (!box && clicks.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "prompt needs a box or at least one click");
  }
  if (box) box->validate(shape);
  for (const auto& click : clicks) {
    if (!shape.contains(click.row, click.col)) {
      throw Error(ErrorCode::kOutOfBounds,
                  fmt::format("click ({}, {}) outside {}x{} image", click.row, click.col,
                              shape.height, shape.width));
    }
  }
}

ImageEmbedding::ImageEmbedding(std::string backend, ImageShape shape,
                               std::shared_ptr<const EmbeddingPayload> payload)
    : backend_(std::move(backend)),
      shape_(shape),
      payload_(std::move(payload)),
      counters_(std::make_shared<Counters>()) {}

CallCounters ImageEmbedding::counters() const noexcept {
  return {counters_->encode.load(), counters_->decode.load()};
}

CallCounters predicted_latency_counters(const ImageEmbedding& emb) {
  return emb.counters();
}

ImageEmbedding Segmenter::encode(const io::Image& image) const {
  image.shape.validate();
  ImageEmbedding emb(std::string(backend_id()), image.shape, encode_payload(image));
  emb.counters_->encode.fetch_add(1);
  return emb;
}

ProbabilityMask Segmenter::decode(const ImageEmbedding& emb,
                                  const SegmenterPrompt& prompt) const {
  if (emb.backend() != backend_id()) {
    throw Error(ErrorCode::kBackend,
                fmt::format("embedding from backend '{}' given to '{}'", emb.backend(),
                            backend_id()));
  }
  prompt.validate(emb.shape());
  emb.counters_->decode.fetch_add(1);
  return decode_payload(emb, prompt);
}

std::unique_ptr<Segmenter> make_segmenter(const BackendConfig& config) {
  switch (config.kind) {
    case BackendKind::kSynthetic:
      return std::make_unique<SyntheticSegmenter>();
    case BackendKind::kNeural:
#ifdef SIMSAM_HAS_ONNXRUNTIME
      return std::make_unique<OnnxSegmenter>(OnnxModelPaths::from_dir(config.model_dir));
#else
      throw Error(ErrorCode::kBackend,
                  "neural backend not compiled in (configure with SIMSAM_WITH_ONNXRUNTIME=ON)");
#endif
  }
  throw Error(ErrorCode::kBackend, "unknown backend kind");
}

}  // namespace simsam::seg
