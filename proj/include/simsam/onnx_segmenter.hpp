#pragma once

// Neural backend over a SAM-style ONNX export: an image encoder graph
// (image -> image_embeddings) and a prompt decoder graph (image_embeddings,
// point_coords, point_labels, mask_input, has_mask_input, orig_im_size ->
// masks, iou_predictions, low_res_masks). Only built with ONNX Runtime.

#include <filesystem>
#include <memory>

#include "simsam/segmenter.hpp"

namespace simsam::seg {

struct OnnxModelPaths {
  std::filesystem::path encoder;
  std::filesystem::path decoder;

  /// <dir>/encoder.onnx and <dir>/decoder.onnx; throws kIo when either is missing.
  static OnnxModelPaths from_dir(const std::filesystem::path& dir);
};

class OnnxSegmenter final : public Segmenter {
 public:
  /// Long side the encoder expects after resizing.
  static constexpr std::size_t kInputSide = 1024;

  /// Throws kBackend when a graph fails to load.
  explicit OnnxSegmenter(const OnnxModelPaths& paths);
  ~OnnxSegmenter() override;

  std::string_view backend_id() const noexcept override { return "onnx"; }

 protected:
  std::shared_ptr<const EmbeddingPayload> encode_payload(const io::Image& image) const override;
  ProbabilityMask decode_payload(const ImageEmbedding& emb,
                                 const SegmenterPrompt& prompt) const override;

 private:
  struct Sessions;
  std::unique_ptr<Sessions> sessions_;
};

}  // namespace simsam::seg
