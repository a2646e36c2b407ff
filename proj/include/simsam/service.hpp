#pragma once

// Interactive segmentation sessions over HTTP. Handlers are plain functions
// from request data to a Response so they can be exercised without sockets;
// serve() binds them to an HTTP server.

#include <cstddef>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "simsam/segmenter.hpp"
#include "simsam/synthetic_segmenter.hpp"

namespace simsam::service {

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct ServiceConfig {
  seg::BackendConfig backend;
  /// Scene parameters of the synthetic backend (the object is gray >= 128).
  seg::SceneParams scene_params;
  std::size_t max_sessions = 64;
  std::size_t max_side = 4096;
  /// Threads for candidate decodes within one request.
  std::size_t decode_workers = 1;
};

class Service {
 public:
  explicit Service(ServiceConfig config);
  Service(ServiceConfig config, std::unique_ptr<seg::Segmenter> segmenter);

  /// 201 {"session_id", "height", "width"}; 415 undecodable; 413 too large.
  Response post_image(std::span<const std::uint8_t> bytes);
  /// 200 result payload; 400 unparsable JSON; 404 unknown session; 422
  /// invalid box, clicks or options.
  Response post_segment(const std::string& session_id, std::string_view body);
  /// 200 {"session_id", "height", "width", "encode_calls", "history"}; 404.
  Response get_session(const std::string& session_id);
  Response healthz() const;
  Response openapi() const;

  std::size_t session_count() const;

 private:
  struct Session {
    Session(std::string session_id, ImageShape image_shape, seg::ImageEmbedding emb)
        : id(std::move(session_id)), shape(image_shape), embedding(std::move(emb)) {}

    std::string id;
    ImageShape shape;
    seg::ImageEmbedding embedding;
    nlohmann::ordered_json history = nlohmann::ordered_json::array();
    std::mutex mutex;
  };

  std::shared_ptr<Session> find(const std::string& id);
  std::string next_id();

  ServiceConfig config_;
  std::unique_ptr<seg::Segmenter> segmenter_;

  mutable std::mutex store_mutex_;
  // Most recently used at the front.
  std::list<std::shared_ptr<Session>> lru_;
  std::unordered_map<std::string, std::list<std::shared_ptr<Session>>::iterator> index_;
  std::uint64_t id_counter_ = 0;
  std::uint64_t id_salt_ = 0;
};

/// OpenAPI 3 description of the endpoints.
nlohmann::ordered_json openapi_document();

/// Blocks serving `service` on host:port until stop_serving() is called.
/// Returns false when the port cannot be bound.
bool serve(Service& service, const std::string& host, int port);
void stop_serving();

}  // namespace simsam::service
