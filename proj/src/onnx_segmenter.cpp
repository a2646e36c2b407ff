#include "simsam/onnx_segmenter.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <fmt/format.h>
#include <onnxruntime_cxx_api.h>

namespace simsam::seg {

namespace {

constexpr std::array<float, 3> kPixelMean{123.675f, 116.28f, 103.53f};
constexpr std::array<float, 3> kPixelStd{58.395f, 57.12f, 57.375f};
constexpr std::size_t kLowResSide = 256;

struct OnnxPayload final : EmbeddingPayload {
  std::vector<float> embedding;
  std::vector<std::int64_t> embedding_shape;
  /// Encoder-frame pixels per original pixel.
  double scale = 1.0;
};

std::vector<const char*> names(const std::vector<Ort::AllocatedStringPtr>& owned) {
  std::vector<const char*> out;
  for (const auto& s : owned) out.push_back(s.get());
  return out;
}

/// Bilinear resize to the encoder frame, zero-padded bottom / right, then
/// normalized per channel into NCHW.
std::vector<float> preprocess(const io::Image& image, double scale) {
  const std::size_t side = OnnxSegmenter::kInputSide;
  const std::size_t out_h = std::min<std::size_t>(
      side, static_cast<std::size_t>(std::lround(static_cast<double>(image.shape.height) * scale)));
  const std::size_t out_w = std::min<std::size_t>(
      side, static_cast<std::size_t>(std::lround(static_cast<double>(image.shape.width) * scale)));
  std::vector<float> tensor(3 * side * side, 0.0f);
  const auto sample = [&](double r, double c, int ch) {
    r = std::clamp(r, 0.0, static_cast<double>(image.shape.height - 1));
    c = std::clamp(c, 0.0, static_cast<double>(image.shape.width - 1));
    const auto r0 = static_cast<std::size_t>(r);
    const auto c0 = static_cast<std::size_t>(c);
    const std::size_t r1 = std::min(r0 + 1, image.shape.height - 1);
    const std::size_t c1 = std::min(c0 + 1, image.shape.width - 1);
    const double fr = r - static_cast<double>(r0);
    const double fc = c - static_cast<double>(c0);
    const int src = image.channels == 1 ? 0 : ch;
    const double top = (1 - fc) * image.at(r0, c0, src) + fc * image.at(r0, c1, src);
    const double bottom = (1 - fc) * image.at(r1, c0, src) + fc * image.at(r1, c1, src);
    return (1 - fr) * top + fr * bottom;
  };
  for (int ch = 0; ch < 3; ++ch) {
    float* plane = &tensor[static_cast<std::size_t>(ch) * side * side];
    for (std::size_t r = 0; r < out_h; ++r) {
      const double sr = (static_cast<double>(r) + 0.5) / scale - 0.5;
      for (std::size_t c = 0; c < out_w; ++c) {
        const double sc = (static_cast<double>(c) + 0.5) / scale - 0.5;
        const auto v = static_cast<float>(sample(sr, sc, ch));
        plane[r * side + c] = (v - kPixelMean[ch]) / kPixelStd[ch];
      }
    }
  }
  return tensor;
}

}  // namespace

OnnxModelPaths OnnxModelPaths::from_dir(const std::filesystem::path& dir) {
  OnnxModelPaths paths{dir / "encoder.onnx", dir / "decoder.onnx"};
  for (const auto& p : {paths.encoder, paths.decoder}) {
    if (!std::filesystem::is_regular_file(p)) {
      throw Error(ErrorCode::kIo, fmt::format("model file {} not found", p.string()));
    }
  }
  return paths;
}

struct OnnxSegmenter::Sessions {
  Ort::Env env{ORT_LOGGING_LEVEL_WARNING, "simsam"};
  Ort::SessionOptions options;
  std::unique_ptr<Ort::Session> encoder;
  std::unique_ptr<Ort::Session> decoder;
  std::vector<Ort::AllocatedStringPtr> encoder_in, encoder_out, decoder_in, decoder_out;
};

OnnxSegmenter::OnnxSegmenter(const OnnxModelPaths& paths) : sessions_(std::make_unique<Sessions>()) {
  auto& s = *sessions_;
  try {
    s.encoder = std::make_unique<Ort::Session>(s.env, paths.encoder.c_str(), s.options);
    s.decoder = std::make_unique<Ort::Session>(s.env, paths.decoder.c_str(), s.options);
    Ort::AllocatorWithDefaultOptions alloc;
    for (std::size_t i = 0; i < s.encoder->GetInputCount(); ++i)
      s.encoder_in.push_back(s.encoder->GetInputNameAllocated(i, alloc));
    for (std::size_t i = 0; i < s.encoder->GetOutputCount(); ++i)
      s.encoder_out.push_back(s.encoder->GetOutputNameAllocated(i, alloc));
    for (std::size_t i = 0; i < s.decoder->GetInputCount(); ++i)
      s.decoder_in.push_back(s.decoder->GetInputNameAllocated(i, alloc));
    for (std::size_t i = 0; i < s.decoder->GetOutputCount(); ++i)
      s.decoder_out.push_back(s.decoder->GetOutputNameAllocated(i, alloc));
  } catch (const Ort::Exception& e) {
    throw Error(ErrorCode::kBackend, fmt::format("loading ONNX graphs: {}", e.what()));
  }
  if (s.encoder_in.size() != 1 || s.decoder_in.size() != 6) {
    throw Error(ErrorCode::kBackend,
                fmt::format("expected 1 encoder input and 6 decoder inputs, got {} and {}",
                            s.encoder_in.size(), s.decoder_in.size()));
  }
}

OnnxSegmenter::~OnnxSegmenter() = default;

std::shared_ptr<const EmbeddingPayload> OnnxSegmenter::encode_payload(
    const io::Image& image) const {
  auto& s = *sessions_;
  const double scale = static_cast<double>(kInputSide) /
                       static_cast<double>(std::max(image.shape.height, image.shape.width));
  auto tensor = preprocess(image, scale);
  const std::array<std::int64_t, 4> dims{1, 3, static_cast<std::int64_t>(kInputSide),
                                         static_cast<std::int64_t>(kInputSide)};
  const auto mem = Ort::MemoryInfo::CreateCpu(OrtArenaAllocator, OrtMemTypeDefault);
  Ort::Value input =
      Ort::Value::CreateTensor<float>(mem, tensor.data(), tensor.size(), dims.data(), dims.size());
  const auto in_names = names(s.encoder_in);
  const auto out_names = names(s.encoder_out);
  try {
    auto outputs = s.encoder->Run(Ort::RunOptions{nullptr}, in_names.data(), &input, 1,
                                  out_names.data(), 1);
    auto payload = std::make_shared<OnnxPayload>();
    const auto info = outputs[0].GetTensorTypeAndShapeInfo();
    payload->embedding_shape = info.GetShape();
    const float* data = outputs[0].GetTensorData<float>();
    payload->embedding.assign(data, data + info.GetElementCount());
    payload->scale = scale;
    return payload;
  } catch (const Ort::Exception& e) {
    throw Error(ErrorCode::kBackend, fmt::format("encoder run: {}", e.what()));
  }
}

ProbabilityMask OnnxSegmenter::decode_payload(const ImageEmbedding& emb,
                                              const SegmenterPrompt& prompt) const {
  auto& s = *sessions_;
  const auto& pl = emb.payload_as<OnnxPayload>();
  const ImageShape& shape = emb.shape();

  // Points are (x, y) in the encoder frame; labels 1/0 for clicks and 2/3
  // for box corners. A box-less prompt gets the (0, 0, -1) padding point.
  std::vector<float> coords;
  std::vector<float> labels;
  const auto push = [&](double row, double col, float label) {
    coords.push_back(static_cast<float>((col + 0.5) * pl.scale));
    coords.push_back(static_cast<float>((row + 0.5) * pl.scale));
    labels.push_back(label);
  };
  for (const auto& c : prompt.clicks) {
    push(static_cast<double>(c.row), static_cast<double>(c.col),
         c.label == ClickLabel::kPositive ? 1.0f : 0.0f);
  }
  if (prompt.box) {
    push(static_cast<double>(prompt.box->row_min), static_cast<double>(prompt.box->col_min), 2.0f);
    push(static_cast<double>(prompt.box->row_max), static_cast<double>(prompt.box->col_max), 3.0f);
  } else {
    coords.push_back(0.0f);
    coords.push_back(0.0f);
    labels.push_back(-1.0f);
  }
  const auto n = static_cast<std::int64_t>(labels.size());
  std::vector<float> mask_input(kLowResSide * kLowResSide, 0.0f);
  float has_mask = 0.0f;
  std::array<float, 2> orig{static_cast<float>(shape.height), static_cast<float>(shape.width)};

  const auto mem = Ort::MemoryInfo::CreateCpu(OrtArenaAllocator, OrtMemTypeDefault);
  // Run only reads its inputs; the casts satisfy the non-const tensor API.
  auto embedding = const_cast<float*>(pl.embedding.data());
  const std::array<std::int64_t, 3> coord_dims{1, n, 2};
  const std::array<std::int64_t, 2> label_dims{1, n};
  const std::array<std::int64_t, 4> mask_dims{1, 1, static_cast<std::int64_t>(kLowResSide),
                                              static_cast<std::int64_t>(kLowResSide)};
  const std::array<std::int64_t, 1> one{1};
  const std::array<std::int64_t, 1> two{2};
  std::array<Ort::Value, 6> inputs{
      Ort::Value::CreateTensor<float>(mem, embedding, pl.embedding.size(),
                                      pl.embedding_shape.data(), pl.embedding_shape.size()),
      Ort::Value::CreateTensor<float>(mem, coords.data(), coords.size(), coord_dims.data(), 3),
      Ort::Value::CreateTensor<float>(mem, labels.data(), labels.size(), label_dims.data(), 2),
      Ort::Value::CreateTensor<float>(mem, mask_input.data(), mask_input.size(), mask_dims.data(), 4),
      Ort::Value::CreateTensor<float>(mem, &has_mask, 1, one.data(), 1),
      Ort::Value::CreateTensor<float>(mem, orig.data(), orig.size(), two.data(), 1),
  };
  const auto in_names = names(s.decoder_in);
  const auto out_names = names(s.decoder_out);
  std::vector<Ort::Value> outputs;
  try {
    outputs = s.decoder->Run(Ort::RunOptions{nullptr}, in_names.data(), inputs.data(),
                             inputs.size(), out_names.data(), 1);
  } catch (const Ort::Exception& e) {
    throw Error(ErrorCode::kBackend, fmt::format("decoder run: {}", e.what()));
  }
  const auto info = outputs[0].GetTensorTypeAndShapeInfo();
  if (info.GetElementCount() < shape.pixel_count()) {
    throw Error(ErrorCode::kBackend, "decoder mask smaller than the image");
  }
  // First mask channel, logits at the original resolution.
  const float* logits = outputs[0].GetTensorData<float>();
  std::vector<double> probs(shape.pixel_count());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    probs[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));
  }
  return ProbabilityMask(shape, std::move(probs));
}

}  // namespace simsam::seg
