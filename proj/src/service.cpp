#include "simsam/service.hpp"

#include <atomic>
#include <chrono>
#include <random>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "simsam/image_io.hpp"
#include "simsam/mask_io.hpp"
#include "simsam/pipeline.hpp"

namespace simsam::service {

namespace {

Response json_response(int status, const nlohmann::ordered_json& body) {
  return Response{status, "application/json", body.dump()};
}

Response error_response(int status, std::string_view code, std::string_view message) {
  nlohmann::ordered_json j;
  j["error"] = {{"code", code}, {"message", message}};
  return json_response(status, j);
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kOutOfBounds:
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kConfig:
    case ErrorCode::kEmptyMask:
      return 422;
    case ErrorCode::kUnsupportedMedia:
    case ErrorCode::kDecode:
      return 415;
    case ErrorCode::kTooLarge:
      return 413;
    case ErrorCode::kNotFound:
      return 404;
    case ErrorCode::kIo:
    case ErrorCode::kBackend:
      return 500;
  }
  return 500;
}

Response from_error(const Error& e) {
  return error_response(status_for(e.code()), to_string(e.code()), e.what());
}

struct SegmentRequest {
  BoundingBox box;
  pipeline::PipelineConfig cfg;
};

std::size_t coordinate(const nlohmann::json& v, std::string_view what) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("{} must be a non-negative integer", what));
  }
  return v.get<std::size_t>();
}

ClickLabel parse_label(const nlohmann::json& v) {
  if (v.is_string()) {
    if (v == "positive") return ClickLabel::kPositive;
    if (v == "negative") return ClickLabel::kNegative;
  } else if (v.is_number_integer()) {
    if (v == 1) return ClickLabel::kPositive;
    if (v == 0) return ClickLabel::kNegative;
  }
  throw Error(ErrorCode::kInvalidArgument, "click label must be positive/negative or 1/0");
}

std::string_view label_name(ClickLabel label) {
  return label == ClickLabel::kPositive ? "positive" : "negative";
}

SegmentRequest parse_segment_request(const nlohmann::json& body, const ImageShape& shape,
                                     std::size_t workers) {
  if (!body.is_object()) throw Error(ErrorCode::kInvalidArgument, "body must be a JSON object");
  SegmentRequest req;
  const auto box = body.find("box");
  if (box == body.end() || !box->is_array() || box->size() != 4) {
    throw Error(ErrorCode::kInvalidArgument, "box must be [row_min, col_min, row_max, col_max]");
  }
  req.box = BoundingBox{coordinate((*box)[0], "box"), coordinate((*box)[1], "box"),
                        coordinate((*box)[2], "box"), coordinate((*box)[3], "box")};
  req.box.validate(shape);

  auto& cfg = req.cfg;
  cfg.workers = workers;
  if (const auto k = body.find("k"); k != body.end()) cfg.k = coordinate(*k, "k");
  if (const auto seed = body.find("seed"); seed != body.end()) {
    cfg.seed = static_cast<std::uint64_t>(coordinate(*seed, "seed"));
  }
  try {
    if (const auto a = body.find("aggregation"); a != body.end()) {
      cfg.aggregation = pipeline::parse_aggregation(a->get<std::string>());
    }
    if (const auto c = body.find("clicks"); c != body.end()) {
      cfg.click_source = pipeline::parse_click_source(c->get<std::string>());
    }
    if (const auto t = body.find("threshold"); t != body.end()) cfg.threshold = t->get<double>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "aggregation/clicks must be strings, threshold a number");
  } catch (const Error& e) {
    throw Error(ErrorCode::kInvalidArgument, e.what());
  }
  if (const auto clicks = body.find("user_clicks"); clicks != body.end()) {
    if (!clicks->is_array()) throw Error(ErrorCode::kInvalidArgument, "user_clicks must be an array");
    for (const auto& c : *clicks) {
      if (!c.is_object() || !c.contains("row") || !c.contains("col")) {
        throw Error(ErrorCode::kInvalidArgument, "each user click needs row and col");
      }
      ClickPrompt click{coordinate(c["row"], "click row"), coordinate(c["col"], "click col"),
                        parse_label(c.value("label", nlohmann::json("positive")))};
      if (!shape.contains(click.row, click.col)) {
        throw Error(ErrorCode::kOutOfBounds,
                    fmt::format("click ({}, {}) outside the image", click.row, click.col));
      }
      cfg.user_clicks.push_back(click);
    }
  }
  cfg.validate();
  if (cfg.aggregation != pipeline::Aggregation::kNone && cfg.k > shape.pixel_count()) {
    throw Error(ErrorCode::kInvalidArgument, "k exceeds the pixel count");
  }
  return req;
}

nlohmann::ordered_json rle_json(const BinaryMask& mask) {
  const io::Rle rle = io::rle_encode(mask);
  nlohmann::ordered_json j;
  j["height"] = rle.shape.height;
  j["width"] = rle.shape.width;
  j["counts"] = rle.counts;
  return j;
}

}  // namespace

Service::Service(ServiceConfig config)
    : Service(config, config.backend.kind == seg::BackendKind::kSynthetic
                          ? std::make_unique<seg::SyntheticSegmenter>(config.scene_params)
                          : seg::make_segmenter(config.backend)) {}

Service::Service(ServiceConfig config, std::unique_ptr<seg::Segmenter> segmenter)
    : config_(std::move(config)), segmenter_(std::move(segmenter)) {
  if (config_.max_sessions == 0) {
    throw Error(ErrorCode::kInvalidArgument, "max_sessions must be >= 1");
  }
  id_salt_ = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
}

std::string Service::next_id() {
  // Counter keeps ids unique; the salt keeps them unguessable across restarts.
  std::mt19937_64 engine(id_salt_ ^ ++id_counter_);
  return fmt::format("{:016x}{:04x}", engine(), id_counter_ & 0xffff);
}

std::size_t Service::session_count() const {
  std::lock_guard lock(store_mutex_);
  return lru_.size();
}

std::shared_ptr<Service::Session> Service::find(const std::string& id) {
  std::lock_guard lock(store_mutex_);
  const auto it = index_.find(id);
  if (it == index_.end()) return nullptr;
  lru_.splice(lru_.begin(), lru_, it->second);
  return *it->second;
}

Response Service::post_image(std::span<const std::uint8_t> bytes) {
  try {
    if (io::sniff_format(bytes) == io::ImageFormat::kUnknown) {
      return error_response(415, "unsupported_media", "body is not a PNG or JPEG image");
    }
    const ImageShape shape = io::peek_shape(bytes);
    if (shape.height > config_.max_side || shape.width > config_.max_side) {
      return error_response(413, "too_large",
                            fmt::format("image {}x{} exceeds the {}x{} limit", shape.height,
                                        shape.width, config_.max_side, config_.max_side));
    }
    const io::Image image = io::decode_image(bytes);
    auto embedding = segmenter_->encode(image);

    std::shared_ptr<Session> session;
    {
      std::lock_guard lock(store_mutex_);
      std::string id = next_id();
      session = std::make_shared<Session>(id, image.shape, std::move(embedding));
      lru_.push_front(session);
      index_[id] = lru_.begin();
      while (lru_.size() > config_.max_sessions) {
        spdlog::debug("evicting session {}", lru_.back()->id);
        index_.erase(lru_.back()->id);
        lru_.pop_back();
      }
    }
    nlohmann::ordered_json j;
    j["session_id"] = session->id;
    j["height"] = image.shape.height;
    j["width"] = image.shape.width;
    return json_response(201, j);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kDecode || e.code() == ErrorCode::kUnsupportedMedia) {
      return error_response(415, "unsupported_media", e.what());
    }
    return from_error(e);
  }
}

Response Service::post_segment(const std::string& session_id, std::string_view body) {
  const auto session = find(session_id);
  if (!session) return error_response(404, "not_found", fmt::format("no session '{}'", session_id));

  nlohmann::json request;
  try {
    request = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    return error_response(400, "bad_json", e.what());
  }

  std::lock_guard lock(session->mutex);
  try {
    const SegmentRequest req = parse_segment_request(request, session->shape, config_.decode_workers);
    const auto before = session->embedding.counters();
    const auto start = std::chrono::steady_clock::now();
    const auto run = pipeline::run_with_embedding(*segmenter_, session->embedding, req.box, req.cfg);
    const double total_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    const auto after = session->embedding.counters();

    nlohmann::ordered_json result;
    result["height"] = session->shape.height;
    result["width"] = session->shape.width;
    result["box"] = {req.box.row_min, req.box.col_min, req.box.row_max, req.box.col_max};
    result["k"] = req.cfg.aggregation == pipeline::Aggregation::kNone ? 0 : req.cfg.k;
    result["aggregation"] = pipeline::to_string(req.cfg.aggregation);
    result["clicks"] = pipeline::to_string(req.cfg.click_source);
    result["final"] = rle_json(run.final_mask);
    result["union"] = rle_json(run.union_mask);
    result["baseline"] = rle_json(run.baseline_mask);
    result["medoid_index"] =
        run.medoid_index ? nlohmann::ordered_json(*run.medoid_index) : nlohmann::ordered_json();
    nlohmann::ordered_json candidates = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < run.candidates.size(); ++i) {
      const ClickPrompt& click = run.candidates.clicks[i];
      nlohmann::ordered_json c;
      c["index"] = i;
      c["row"] = click.row;
      c["col"] = click.col;
      c["label"] = label_name(click.label);
      c["score"] = run.medoid_scores.empty() ? nlohmann::ordered_json()
                                             : nlohmann::ordered_json(run.medoid_scores[i]);
      c["area"] = run.candidates.bin_masks[i].count();
      c["mask"] = rle_json(run.candidates.bin_masks[i]);
      candidates.push_back(std::move(c));
    }
    result["candidates"] = std::move(candidates);
    result["counters"] = {{"encode_calls", after.encode_calls},
                          {"decode_calls", after.decode_calls - before.decode_calls}};

    nlohmann::ordered_json payload;
    payload["session_id"] = session->id;
    payload["request_index"] = session->history.size();
    payload["result"] = std::move(result);
    payload["timing_ms"] = {{"baseline", run.timing.baseline_ms},
                            {"candidates", run.timing.candidates_ms},
                            {"aggregation", run.timing.aggregation_ms},
                            {"total", total_ms}};
    payload["session_decode_calls"] = after.decode_calls;

    nlohmann::ordered_json summary;
    summary["request"] = request;
    summary["final_area"] = run.final_mask.count();
    summary["medoid_index"] = payload["result"]["medoid_index"];
    summary["decode_calls"] = after.decode_calls - before.decode_calls;
    session->history.push_back(std::move(summary));
    return json_response(200, payload);
  } catch (const Error& e) {
    return from_error(e);
  }
}

Response Service::get_session(const std::string& session_id) {
  const auto session = find(session_id);
  if (!session) return error_response(404, "not_found", fmt::format("no session '{}'", session_id));
  std::lock_guard lock(session->mutex);
  nlohmann::ordered_json j;
  j["session_id"] = session->id;
  j["height"] = session->shape.height;
  j["width"] = session->shape.width;
  j["encode_calls"] = session->embedding.counters().encode_calls;
  j["history"] = session->history;
  return json_response(200, j);
}

Response Service::healthz() const { return Response{200, "text/plain", "ok"}; }

Response Service::openapi() const { return json_response(200, openapi_document()); }

nlohmann::ordered_json openapi_document() {
  using J = nlohmann::ordered_json;
  const J error_ref = {{"$ref", "#/components/schemas/Error"}};
  auto error_response_doc = [&](std::string_view description) {
    return J{{"description", description},
             {"content", {{"application/json", {{"schema", error_ref}}}}}};
  };
  const J rle = {{"type", "object"},
                 {"required", {"height", "width", "counts"}},
                 {"properties",
                  {{"height", {{"type", "integer"}}},
                   {"width", {{"type", "integer"}}},
                   {"counts",
                    {{"type", "array"},
                     {"items", {{"type", "integer"}}},
                     {"description", "Row-major run lengths, starting with a background run"}}}}}};
  const J session_param = {{"name", "id"}, {"in", "path"}, {"required", true}, {"schema", {{"type", "string"}}}};

  J doc;
  doc["openapi"] = "3.0.3";
  doc["info"] = {{"title", "SimSAM segmentation service"}, {"version", "0.1.0"}};
  doc["paths"]["/healthz"]["get"] = {
      {"summary", "Liveness probe"},
      {"responses", {{"200", {{"description", "ok"}, {"content", {{"text/plain", {{"schema", {{"type", "string"}}}}}}}}}}}};
  doc["paths"]["/images"]["post"] = {
      {"summary", "Upload an image; it is encoded once for the new session"},
      {"requestBody",
       {{"required", true},
        {"content",
         {{"image/png", {{"schema", {{"type", "string"}, {"format", "binary"}}}}},
          {"image/jpeg", {{"schema", {{"type", "string"}, {"format", "binary"}}}}}}}}},
      {"responses",
       {{"201", {{"description", "Session created"},
                 {"content", {{"application/json", {{"schema", {{"$ref", "#/components/schemas/Created"}}}}}}}}},
        {"413", error_response_doc("Image exceeds the size cap")},
        {"415", error_response_doc("Body is not a decodable PNG or JPEG")}}}};
  doc["paths"]["/sessions/{id}"]["get"] = {
      {"summary", "Request history of a session"},
      {"parameters", {session_param}},
      {"responses",
       {{"200", {{"description", "Session summary"},
                 {"content", {{"application/json", {{"schema", {{"$ref", "#/components/schemas/Session"}}}}}}}}},
        {"404", error_response_doc("Unknown session")}}}};
  doc["paths"]["/sessions/{id}/segment"]["post"] = {
      {"summary", "Run SimSAM on the session image"},
      {"parameters", {session_param}},
      {"requestBody",
       {{"required", true},
        {"content", {{"application/json", {{"schema", {{"$ref", "#/components/schemas/SegmentRequest"}}}}}}}}},
      {"responses",
       {{"200", {{"description", "Segmentation result"},
                 {"content", {{"application/json", {{"schema", {{"$ref", "#/components/schemas/SegmentResponse"}}}}}}}}},
        {"400", error_response_doc("Body is not JSON")},
        {"404", error_response_doc("Unknown session")},
        {"422", error_response_doc("Invalid box, clicks or options")}}}};

  auto& schemas = doc["components"]["schemas"];
  schemas["Error"] = {{"type", "object"},
                      {"properties",
                       {{"error",
                         {{"type", "object"},
                          {"properties", {{"code", {{"type", "string"}}}, {"message", {{"type", "string"}}}}}}}}}};
  schemas["Created"] = {{"type", "object"},
                        {"properties",
                         {{"session_id", {{"type", "string"}}},
                          {"height", {{"type", "integer"}}},
                          {"width", {{"type", "integer"}}}}}};
  schemas["Rle"] = rle;
  schemas["Click"] = {{"type", "object"},
                      {"required", {"row", "col"}},
                      {"properties",
                       {{"row", {{"type", "integer"}}},
                        {"col", {{"type", "integer"}}},
                        {"label", {{"type", "string"}, {"enum", {"positive", "negative"}}}}}}};
  schemas["SegmentRequest"] = {
      {"type", "object"},
      {"required", {"box"}},
      {"properties",
       {{"box", {{"type", "array"}, {"items", {{"type", "integer"}}}, {"minItems", 4}, {"maxItems", 4},
                 {"description", "Inclusive [row_min, col_min, row_max, col_max]"}}},
        {"k", {{"type", "integer"}, {"minimum", 1}, {"default", 50}}},
        {"aggregation", {{"type", "string"}, {"enum", {"medoid", "mean", "none"}}, {"default", "medoid"}}},
        {"clicks", {{"type", "string"}, {"enum", {"topk", "random"}}, {"default", "topk"}}},
        {"seed", {{"type", "integer"}, {"default", 0}}},
        {"threshold", {{"type", "number"}, {"default", 0.5}}},
        {"user_clicks", {{"type", "array"}, {"items", {{"$ref", "#/components/schemas/Click"}}}}}}}};
  const J rle_ref = {{"$ref", "#/components/schemas/Rle"}};
  schemas["Candidate"] = {{"type", "object"},
                          {"properties",
                           {{"index", {{"type", "integer"}}},
                            {"row", {{"type", "integer"}}},
                            {"col", {{"type", "integer"}}},
                            {"label", {{"type", "string"}}},
                            {"score", {{"type", "number"}, {"nullable", true},
                                       {"description", "Mean IoU to all candidates (medoid only)"}}},
                            {"area", {{"type", "integer"}}},
                            {"mask", rle_ref}}}};
  schemas["SegmentResponse"] = {
      {"type", "object"},
      {"properties",
       {{"session_id", {{"type", "string"}}},
        {"request_index", {{"type", "integer"}}},
        {"result",
         {{"type", "object"},
          {"description", "Deterministic for a fixed session image and request"},
          {"properties",
           {{"height", {{"type", "integer"}}},
            {"width", {{"type", "integer"}}},
            {"box", {{"type", "array"}, {"items", {{"type", "integer"}}}}},
            {"k", {{"type", "integer"}}},
            {"aggregation", {{"type", "string"}}},
            {"clicks", {{"type", "string"}}},
            {"final", rle_ref},
            {"union", rle_ref},
            {"baseline", rle_ref},
            {"medoid_index", {{"type", "integer"}, {"nullable", true}}},
            {"candidates", {{"type", "array"}, {"items", {{"$ref", "#/components/schemas/Candidate"}}}}},
            {"counters",
             {{"type", "object"},
              {"properties",
               {{"encode_calls", {{"type", "integer"}}}, {"decode_calls", {{"type", "integer"}}}}}}}}}}},
        {"timing_ms", {{"type", "object"}, {"additionalProperties", {{"type", "number"}}}}},
        {"session_decode_calls", {{"type", "integer"}}}}}};
  schemas["Session"] = {{"type", "object"},
                        {"properties",
                         {{"session_id", {{"type", "string"}}},
                          {"height", {{"type", "integer"}}},
                          {"width", {{"type", "integer"}}},
                          {"encode_calls", {{"type", "integer"}}},
                          {"history", {{"type", "array"}, {"items", {{"type", "object"}}}}}}}};
  return doc;
}

// ---------------------------------------------------------------------------
// HTTP binding

namespace {

std::atomic<httplib::Server*> g_server{nullptr};

void reply(httplib::Response& res, const Response& r) {
  res.status = r.status;
  res.set_content(r.body, r.content_type);
}

}  // namespace

bool serve(Service& service, const std::string& host, int port) {
  httplib::Server server;
  server.set_payload_max_length(256u << 20);
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Get("/healthz", [&](const httplib::Request&, httplib::Response& res) {
    reply(res, service.healthz());
  });
  server.Get("/spec", [&](const httplib::Request&, httplib::Response& res) {
    reply(res, service.openapi());
  });
  server.Post("/images", [&](const httplib::Request& req, httplib::Response& res) {
    const auto* data = reinterpret_cast<const std::uint8_t*>(req.body.data());
    reply(res, service.post_image(std::span(data, req.body.size())));
  });
  server.Post(R"(/sessions/([0-9a-f]+)/segment)",
              [&](const httplib::Request& req, httplib::Response& res) {
                reply(res, service.post_segment(req.matches[1].str(), req.body));
              });
  server.Get(R"(/sessions/([0-9a-f]+))", [&](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.get_session(req.matches[1].str()));
  });
  server.set_exception_handler(
      [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string message = "internal error";
        try {
          if (ep) std::rethrow_exception(ep);
        } catch (const std::exception& e) {
          message = e.what();
        }
        reply(res, error_response(500, "internal", message));
      });
  server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::info("{} {} -> {}", req.method, req.path, res.status);
  });

  if (!server.bind_to_port(host, port)) {
    spdlog::error("cannot bind {}:{}", host, port);
    return false;
  }
  g_server.store(&server);
  spdlog::info("listening on {}:{}", host, port);
  const bool ok = server.listen_after_bind();
  g_server.store(nullptr);
  return ok;
}

void stop_serving() {
  if (auto* server = g_server.load()) server->stop();
}

}  // namespace simsam::service
