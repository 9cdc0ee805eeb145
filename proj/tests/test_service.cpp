#include <doctest.h>

#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "outfit/checkpoint.hpp"
#include "outfit/errors.hpp"
#include "outfit/service.hpp"
#include "support/fixtures.hpp"

using namespace outfit;
using namespace outfit::testing;
using nlohmann::json;

namespace {

std::shared_ptr<const ServiceSnapshot> both_heads_snapshot(std::uint64_t seed = 3) {
  ModelConfig config = tiny_model(6, seed);
  config.cir_head = true;
  auto model = std::make_shared<const OutfitModel>(config);
  auto catalog = std::make_shared<const Catalog>(small_catalog(8));
  auto index = std::make_shared<const EmbeddingIndex>(build_index(*catalog, *model));
  return make_snapshot(model, nullptr, index, catalog);
}

std::string complete_body(const std::vector<std::string>& ids, const std::string& target, int k) {
  return json{{"item_ids", ids}, {"target", {{"kind", "category"}, {"text", target}}}, {"k", k}}.dump();
}

}  // namespace

TEST_CASE("readiness before and after the snapshot") {
  const HttpReply not_ready = handle_healthz(nullptr);
  CHECK(not_ready.status == 503);
  CHECK(json::parse(not_ready.body).at("status") == "not_ready");
  const auto snap = both_heads_snapshot();
  const HttpReply ready = handle_healthz(snap.get());
  CHECK(ready.status == 200);
  const json body = json::parse(ready.body);
  CHECK(body.at("status") == "ready");
  CHECK(body.at("items") == 32);
  CHECK(body.at("fingerprint") == hex64(snap->fingerprint));
  CHECK(body.at("v") == kApiVersion);
}

TEST_CASE("snapshot construction checks fingerprints and catalog coverage") {
  auto model = std::make_shared<const OutfitModel>(tiny_cir_model());
  auto other = std::make_shared<const OutfitModel>(tiny_cir_model(6, 4));
  auto catalog = std::make_shared<const Catalog>(small_catalog(4));
  auto index = std::make_shared<const EmbeddingIndex>(build_index(*catalog, *model));
  CHECK_NOTHROW(make_snapshot(model, nullptr, index, catalog));
  CHECK_THROWS_AS(make_snapshot(other, nullptr, index, catalog), ConfigError);
  auto smaller = std::make_shared<const Catalog>(small_catalog(2));
  CHECK_THROWS_AS(make_snapshot(model, nullptr, index, smaller), ConfigError);
  auto cp_only = std::make_shared<const OutfitModel>(tiny_model());
  CHECK_THROWS_AS(make_snapshot(model, model, index, catalog), ConfigError);
  CHECK(make_snapshot(model, cp_only, index, catalog)->cp_model == cp_only);
  CHECK(make_snapshot(model, nullptr, index, catalog)->cp_model == nullptr);
}

TEST_CASE("compatibility endpoint") {
  const auto snap = both_heads_snapshot();
  const HttpReply a = handle_compatibility(*snap, R"({"item_ids": ["tee-1", "boot-2", "sneaker-3"]})");
  const HttpReply b = handle_compatibility(*snap, R"({"item_ids": ["sneaker-3", "tee-1", "boot-2"]})");
  REQUIRE(a.status == 200);
  const double sa = json::parse(a.body).at("score");
  const double sb = json::parse(b.body).at("score");
  CHECK(sa > 0.0);
  CHECK(sa < 1.0);
  CHECK(std::abs(sa - sb) < 1e-9);
  CHECK(json::parse(a.body).at("latency_ms").get<double>() >= 0.0);

  const HttpReply unknown = handle_compatibility(*snap, R"({"item_ids": ["tee-1", "zzz"]})");
  CHECK(unknown.status == 404);
  CHECK(unknown.body.find("zzz") != std::string::npos);
  CHECK(handle_compatibility(*snap, R"({"item_ids": ["tee-1"]})").status == 400);
  CHECK(handle_compatibility(*snap, R"({"item_ids": ["tee-1", "tee-1"]})").status == 400);
  CHECK(handle_compatibility(*snap, R"({"items": []})").status == 400);
  CHECK(handle_compatibility(*snap, "not json").status == 400);
  CHECK(handle_compatibility(*snap, "[1, 2]").status == 400);

  auto model = std::make_shared<const OutfitModel>(tiny_cir_model());
  auto catalog = std::make_shared<const Catalog>(small_catalog(4));
  auto index = std::make_shared<const EmbeddingIndex>(build_index(*catalog, *model));
  const auto retrieval_only = make_snapshot(model, nullptr, index, catalog);
  CHECK(handle_compatibility(*retrieval_only, R"({"item_ids": ["tee-1", "boot-2"]})").status == 501);
}

TEST_CASE("complete endpoint") {
  const auto snap = both_heads_snapshot();
  const std::vector<std::string> partial{"tee-1", "boot-2", "blouse-3"};
  const HttpReply reply = handle_complete(*snap, complete_body(partial, "shoes", 5));
  REQUIRE(reply.status == 200);
  const json body = json::parse(reply.body);
  CHECK(body.at("status") == "ok");
  const auto& candidates = body.at("candidates");
  CHECK(candidates.size() == 5);
  double previous = -1.0;
  for (const auto& c : candidates) {
    const std::string id = c.at("item_id");
    CHECK(std::find(partial.begin(), partial.end(), id) == partial.end());
    CHECK(c.at("high_category") == "shoes");
    CHECK(c.at("distance").get<double>() >= previous);
    previous = c.at("distance");
  }
  CHECK(handle_complete(*snap, complete_body(partial, "shoes", 5)).body == reply.body);

  const std::vector<std::string> reordered{"blouse-3", "tee-1", "boot-2"};
  const json again = json::parse(handle_complete(*snap, complete_body(reordered, "shoes", 5)).body);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    CHECK(again["candidates"][i]["item_id"] == candidates[i]["item_id"]);
  }

  const HttpReply few = handle_complete(*snap, complete_body(partial, "boot", 50));
  CHECK(json::parse(few.body).at("candidates").size() == 7);

  const HttpReply empty = handle_complete(*snap, complete_body(partial, "hat", 5));
  CHECK(empty.status == 200);
  CHECK(json::parse(empty.body).at("status") == "empty_pool");
  CHECK(json::parse(empty.body).at("candidates").empty());

  const HttpReply free_text = handle_complete(
      *snap, json{{"item_ids", partial}, {"target", {{"kind", "free_text"}, {"text", "bold boots"}}}, {"k", 3}}.dump());
  CHECK(free_text.status == 200);
  CHECK(json::parse(free_text.body).at("candidates").size() == 3);

  const HttpReply unknown = handle_complete(*snap, complete_body({"zzz"}, "shoes", 5));
  CHECK(unknown.status == 404);
  CHECK(unknown.body.find("zzz") != std::string::npos);
  CHECK(handle_complete(*snap, complete_body(partial, "shoes", 0)).status == 400);
  CHECK(handle_complete(*snap, complete_body({}, "shoes", 5)).status == 400);
  CHECK(handle_complete(*snap, R"({"item_ids": ["tee-1"], "target": {"kind": "category", "text": ""}})").status ==
        400);
  CHECK(handle_complete(*snap, R"({"item_ids": ["tee-1"]})").status == 400);
  CHECK(handle_complete(*snap, R"({"item_ids": ["tee-1"], "target": {"kind": "colour", "text": "x"}})").status ==
        400);
}

TEST_CASE("items endpoint pages through the catalog") {
  const auto snap = both_heads_snapshot();
  const json first = json::parse(handle_items(*snap, std::nullopt, std::nullopt, std::string("10")).body);
  CHECK(first.at("total") == 32);
  CHECK(first.at("items").size() == 10);
  const json last = json::parse(handle_items(*snap, std::nullopt, std::string("3"), std::string("10")).body);
  CHECK(last.at("items").size() == 2);
  const json tops = json::parse(handle_items(*snap, std::string("tops"), std::nullopt, std::nullopt).body);
  CHECK(tops.at("total") == 16);
  const json tees = json::parse(handle_items(*snap, std::string("tee"), std::nullopt, std::nullopt).body);
  CHECK(tees.at("total") == 8);
  for (const auto& item : tees.at("items")) CHECK(item.at("fine_category") == "tee");
  CHECK(handle_items(*snap, std::nullopt, std::string("-1"), std::nullopt).status == 400);
  CHECK(handle_items(*snap, std::nullopt, std::nullopt, std::string("0")).status == 400);
  CHECK(handle_items(*snap, std::nullopt, std::string("x"), std::nullopt).status == 400);
}

TEST_CASE("live server over HTTP") {
  Service service;
  const int port = service.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread server([&] { service.run(); });
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(10, 0);

  auto health = client.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 503);
  CHECK_FALSE(service.ready());
  auto early = client.Post("/complete", complete_body({"tee-1"}, "shoes", 3), "application/json");
  REQUIRE(early);
  CHECK(early->status == 503);

  service.set_snapshot(both_heads_snapshot());
  CHECK(service.ready());
  health = client.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);

  const std::string body = complete_body({"tee-1", "boot-2"}, "tops", 5);
  auto a = client.Post("/complete", body, "application/json");
  auto b = client.Post("/complete", body, "application/json");
  REQUIRE(a);
  REQUIRE(b);
  CHECK(a->status == 200);
  CHECK(a->body == b->body);
  CHECK(a->get_header_value("Content-Type") == "application/json");
  CHECK(json::parse(a->body).at("candidates").size() <= 5);

  auto first = client.Post("/compatibility", R"({"item_ids": ["tee-1", "boot-2", "sneaker-4"]})", "application/json");
  auto second = client.Post("/compatibility", R"({"item_ids": ["boot-2", "sneaker-4", "tee-1"]})", "application/json");
  REQUIRE(first);
  REQUIRE(second);
  CHECK(std::abs(json::parse(first->body).at("score").get<double>() -
                 json::parse(second->body).at("score").get<double>()) < 1e-9);

  auto unknown = client.Post("/compatibility", R"({"item_ids": ["tee-1", "zzz"]})", "application/json");
  REQUIRE(unknown);
  CHECK(unknown->status == 404);
  CHECK(unknown->body.find("zzz") != std::string::npos);

  auto items = client.Get("/items?category=boot&page_size=3");
  REQUIRE(items);
  CHECK(json::parse(items->body).at("items").size() == 3);

  auto missing = client.Get("/nowhere");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  CHECK(json::parse(missing->body).at("error").at("code") == "not_found");

  std::vector<std::thread> clients;
  std::vector<std::string> bodies(8);
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    clients.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", port);
      if (auto r = c.Post("/complete", body, "application/json")) bodies[i] = r->body;
    });
  }
  for (auto& t : clients) t.join();
  for (const auto& got : bodies) CHECK(got == a->body);

  service.stop();
  server.join();
}
