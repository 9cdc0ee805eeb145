#include "outfit/service.hpp"

#include <chrono>
#include <unordered_set>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "outfit/checkpoint.hpp"
#include "outfit/errors.hpp"

namespace outfit {
namespace {

using nlohmann::json;

constexpr std::size_t kDefaultPageSize = 50;
constexpr std::size_t kMaxPageSize = 500;
constexpr std::size_t kDefaultK = 10;

// Malformed request: 400 with the given message.
struct BadRequest {
  std::string message;
};

// Unknown item id: 404 naming it.
struct UnknownItem {
  std::string id;
};

json parse_body(const std::string& body) {
  try {
    json j = json::parse(body);
    if (!j.is_object()) throw BadRequest{"request body must be a JSON object"};
    return j;
  } catch (const json::parse_error& e) {
    throw BadRequest{std::string("request body is not valid JSON: ") + e.what()};
  }
}

std::vector<std::string> item_ids(const json& req, const Catalog& catalog) {
  if (!req.contains("item_ids") || !req["item_ids"].is_array()) {
    throw BadRequest{"'item_ids' must be an array of item id strings"};
  }
  std::vector<std::string> ids;
  std::unordered_set<std::string> seen;
  for (const auto& v : req["item_ids"]) {
    if (!v.is_string()) throw BadRequest{"'item_ids' must be an array of item id strings"};
    std::string id = v.get<std::string>();
    if (!seen.insert(id).second) throw BadRequest{"duplicate item id '" + id + "'"};
    ids.push_back(std::move(id));
  }
  for (const auto& id : ids) {
    if (!catalog.contains(id)) throw UnknownItem{id};
  }
  return ids;
}

std::size_t parse_count(const std::optional<std::string>& text, std::size_t fallback, const char* name) {
  if (!text) return fallback;
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(*text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != text->size() || (*text)[0] == '-') {
    throw BadRequest{std::string("'") + name + "' must be a non-negative integer"};
  }
  return static_cast<std::size_t>(v);
}

HttpReply ok(const json& body) { return {200, body.dump()}; }

template <typename F>
HttpReply guarded(F&& f) {
  try {
    return f();
  } catch (const BadRequest& e) {
    return error_reply(400, "bad_request", e.message);
  } catch (const UnknownItem& e) {
    return error_reply(404, "unknown_item", "unknown item id '" + e.id + "'");
  } catch (const InputError& e) {
    return error_reply(400, "bad_request", e.what());
  } catch (const std::exception& e) {
    spdlog::error("request failed: {}", e.what());
    return error_reply(500, "internal", e.what());
  }
}

}  // namespace

HttpReply error_reply(int status, const std::string& code, const std::string& message) {
  return {status, json{{"v", kApiVersion}, {"error", {{"code", code}, {"message", message}}}}.dump()};
}

std::shared_ptr<const ServiceSnapshot> make_snapshot(std::shared_ptr<const OutfitModel> model,
                                                     std::shared_ptr<const OutfitModel> cp_model,
                                                     std::shared_ptr<const EmbeddingIndex> index,
                                                     std::shared_ptr<const Catalog> catalog) {
  if (!model || !index || !catalog) throw ConfigError("service needs a model, an index and a catalog");
  const std::uint64_t fp = fingerprint(*model);
  require_fingerprint(*index, fp);
  if (!model->config().cir_head) throw ConfigError("service model has no retrieval head");
  for (std::size_t row = 0; row < index->size(); ++row) {
    if (!catalog->contains(index->id(row))) {
      throw ConfigError("index item '" + index->id(row) + "' is missing from the catalog");
    }
  }
  if (!cp_model && model->config().cp_head) cp_model = model;
  if (cp_model && !cp_model->config().cp_head) throw ConfigError("compatibility model has no CP head");
  auto snap = std::make_shared<ServiceSnapshot>();
  snap->model = std::move(model);
  snap->cp_model = std::move(cp_model);
  snap->index = std::move(index);
  snap->catalog = std::move(catalog);
  snap->fingerprint = fp;
  return snap;
}

HttpReply handle_healthz(const ServiceSnapshot* snapshot) {
  if (!snapshot) return {503, json{{"v", kApiVersion}, {"status", "not_ready"}}.dump()};
  return ok({{"v", kApiVersion},
             {"status", "ready"},
             {"fingerprint", hex64(snapshot->fingerprint)},
             {"items", snapshot->index->size()},
             {"compatibility", snapshot->cp_model != nullptr}});
}

HttpReply handle_items(const ServiceSnapshot& snapshot, const std::optional<std::string>& category,
                       const std::optional<std::string>& page,
                       const std::optional<std::string>& page_size) {
  return guarded([&] {
    const std::size_t p = parse_count(page, 0, "page");
    const std::size_t size = parse_count(page_size, kDefaultPageSize, "page_size");
    if (size == 0 || size > kMaxPageSize) {
      throw BadRequest{"'page_size' must be between 1 and " + std::to_string(kMaxPageSize)};
    }
    const Catalog& catalog = *snapshot.catalog;
    std::vector<std::size_t> rows;
    if (category && !category->empty()) {
      rows = catalog.items_in_fine(*category);
      if (rows.empty()) rows = catalog.items_in_high(*category);
    } else {
      rows.resize(catalog.size());
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    }
    json items = json::array();
    for (std::size_t i = p * size; i < rows.size() && i < (p + 1) * size; ++i) {
      const Item& item = catalog[rows[i]];
      items.push_back({{"item_id", item.item_id},
                       {"description", item.description},
                       {"fine_category", item.fine_category},
                       {"high_category", item.high_category}});
    }
    return ok({{"v", kApiVersion},
               {"items", items},
               {"page", p},
               {"page_size", size},
               {"total", rows.size()}});
  });
}

HttpReply handle_compatibility(const ServiceSnapshot& snapshot, const std::string& body) {
  return guarded([&]() -> HttpReply {
    const auto started = std::chrono::steady_clock::now();
    const json req = parse_body(body);
    const auto ids = item_ids(req, *snapshot.catalog);
    if (!snapshot.cp_model) {
      return error_reply(501, "unsupported", "the loaded checkpoint has no compatibility head");
    }
    const auto max_len = snapshot.cp_model->config().encoder.max_outfit_len;
    if (ids.size() < 2 || ids.size() > max_len) {
      throw BadRequest{"compatibility needs between 2 and " + std::to_string(max_len) + " items"};
    }
    nn::NoGradGuard no_grad;
    std::vector<const Item*> items;
    for (const auto& id : ids) items.push_back(&snapshot.catalog->at(id));
    const double score = snapshot.cp_model->cp_forward(snapshot.cp_model->encode_items(items)).item();
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return ok({{"v", kApiVersion}, {"score", score}, {"latency_ms", ms}});
  });
}

HttpReply handle_complete(const ServiceSnapshot& snapshot, const std::string& body) {
  return guarded([&] {
    const json req = parse_body(body);
    const auto ids = item_ids(req, *snapshot.catalog);
    const auto max_partial = snapshot.model->config().encoder.max_outfit_len;
    if (ids.empty() || ids.size() > max_partial) {
      throw BadRequest{"completion needs between 1 and " + std::to_string(max_partial) + " items"};
    }
    if (!req.contains("target") || !req["target"].is_object()) {
      throw BadRequest{"'target' must be an object with 'kind' and 'text'"};
    }
    const json& target = req["target"];
    if (!target.contains("text") || !target["text"].is_string() || target["text"].get<std::string>().empty()) {
      throw BadRequest{"'target.text' must be a non-empty string"};
    }
    TargetSpec spec;
    spec.kind = parse_target_kind(target.value("kind", std::string("category")));
    spec.text = target["text"].get<std::string>();
    std::size_t k = kDefaultK;
    if (req.contains("k")) {
      if (!req["k"].is_number_integer() || req["k"].get<long long>() < 1) {
        throw BadRequest{"'k' must be a positive integer"};
      }
      k = req["k"].get<std::size_t>();
    }
    const KnnResult result = complete_outfit(*snapshot.model, *snapshot.index, ids, spec, k);
    json candidates = json::array();
    for (const auto& n : result.neighbors) {
      candidates.push_back({{"item_id", n.item_id},
                            {"distance", n.distance},
                            {"category", n.fine_category},
                            {"high_category", n.high_category}});
    }
    return ok({{"v", kApiVersion}, {"status", to_string(result.status)}, {"candidates", candidates}});
  });
}

struct Service::Impl {
  httplib::Server server;
};

Service::Service() : impl_(std::make_unique<Impl>()) {
  auto send = [](httplib::Response& res, const HttpReply& reply) {
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  };
  auto optional_param = [](const httplib::Request& req, const char* name) -> std::optional<std::string> {
    if (!req.has_param(name)) return std::nullopt;
    return req.get_param_value(name);
  };
  auto& server = impl_->server;
  server.Get("/healthz", [this, send](const httplib::Request&, httplib::Response& res) {
    const auto snap = snapshot();
    send(res, handle_healthz(snap.get()));
  });
  server.Get("/items", [this, send, optional_param](const httplib::Request& req, httplib::Response& res) {
    const auto snap = snapshot();
    if (!snap) return send(res, error_reply(503, "not_ready", "service is not ready"));
    send(res, handle_items(*snap, optional_param(req, "category"), optional_param(req, "page"),
                           optional_param(req, "page_size")));
  });
  server.Post("/compatibility", [this, send](const httplib::Request& req, httplib::Response& res) {
    const auto snap = snapshot();
    if (!snap) return send(res, error_reply(503, "not_ready", "service is not ready"));
    send(res, handle_compatibility(*snap, req.body));
  });
  server.Post("/complete", [this, send](const httplib::Request& req, httplib::Response& res) {
    const auto snap = snapshot();
    if (!snap) return send(res, error_reply(503, "not_ready", "service is not ready"));
    send(res, handle_complete(*snap, req.body));
  });
  server.set_error_handler([send](const httplib::Request&, httplib::Response& res) {
    if (res.status == 404 && res.body.empty()) {
      send(res, error_reply(404, "not_found", "no such endpoint"));
    }
  });
}

Service::~Service() { stop(); }

void Service::set_snapshot(std::shared_ptr<const ServiceSnapshot> snapshot) {
  std::lock_guard lock(mutex_);
  snapshot_ = std::move(snapshot);
}

std::shared_ptr<const ServiceSnapshot> Service::snapshot() const {
  std::lock_guard lock(mutex_);
  return snapshot_;
}

int Service::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw InputError("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void Service::run() { impl_->server.listen_after_bind(); }

void Service::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace outfit
