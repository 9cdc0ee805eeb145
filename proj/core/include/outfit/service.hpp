#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "outfit/catalog.hpp"
#include "outfit/index.hpp"
#include "outfit/outfit_encoder.hpp"

namespace outfit {

inline constexpr int kApiVersion = 1;

// What the service answers from. Immutable once built; requests hold a
// reference for their whole lifetime, so a swap never disturbs them.
struct ServiceSnapshot {
  std::shared_ptr<const OutfitModel> model;     // retrieval model matching the index
  std::shared_ptr<const OutfitModel> cp_model;  // compatibility model, may equal `model`
  std::shared_ptr<const EmbeddingIndex> index;
  std::shared_ptr<const Catalog> catalog;
  std::uint64_t fingerprint = 0;
};

// Checks that the index was built by `model` and that every index item is in
// the catalog. `cp_model` defaults to `model` when that has a CP head.
std::shared_ptr<const ServiceSnapshot> make_snapshot(std::shared_ptr<const OutfitModel> model,
                                                     std::shared_ptr<const OutfitModel> cp_model,
                                                     std::shared_ptr<const EmbeddingIndex> index,
                                                     std::shared_ptr<const Catalog> catalog);

struct HttpReply {
  int status = 200;
  std::string body;
};

// Endpoint logic as pure functions of (request, snapshot).
HttpReply handle_healthz(const ServiceSnapshot* snapshot);
HttpReply handle_items(const ServiceSnapshot& snapshot, const std::optional<std::string>& category,
                       const std::optional<std::string>& page,
                       const std::optional<std::string>& page_size);
HttpReply handle_compatibility(const ServiceSnapshot& snapshot, const std::string& body);
HttpReply handle_complete(const ServiceSnapshot& snapshot, const std::string& body);

HttpReply error_reply(int status, const std::string& code, const std::string& message);

// HTTP/1.1 JSON server:
//   GET  /healthz        readiness
//   GET  /items          ?category=&page=&page_size=
//   POST /compatibility  {"item_ids": [...]}
//   POST /complete       {"item_ids": [...], "target": {"kind", "text"}, "k"}
class Service {
 public:
  Service();
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Atomically replaces the snapshot; in-flight requests finish on the old one.
  void set_snapshot(std::shared_ptr<const ServiceSnapshot> snapshot);
  std::shared_ptr<const ServiceSnapshot> snapshot() const;
  bool ready() const { return snapshot() != nullptr; }

  // Binds (port 0 picks an ephemeral port) and returns the bound port.
  int bind(const std::string& host, int port);
  // Serves until stop(); call after bind().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  mutable std::mutex mutex_;
  std::shared_ptr<const ServiceSnapshot> snapshot_;
};

}  // namespace outfit
