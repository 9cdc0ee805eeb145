#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <utility>

#include "outfit/data.hpp"
#include "outfit/errors.hpp"
#include "outfit/item_encoders.hpp"
#include "outfit/outfit_encoder.hpp"
#include "support/fixtures.hpp"

using namespace outfit;
using namespace outfit::testing;

namespace {

struct Encoders {
  nn::ParameterStore store;
  Rng rng;
  ItemEncoder encoder;
  explicit Encoders(const ItemEncoderConfig& c, std::uint64_t seed = 1) : rng(seed), encoder(c, store, rng) {}
};

ItemEncoderConfig small_items() { return tiny_model().items; }

}  // namespace

TEST_CASE("text normalisation") {
  CHECK(normalize_text("red dress") == normalize_text("red dress "));
  CHECK(normalize_text("  Red,   DRESS!! ") == "red dress");
  CHECK(normalize_text("") == "");
  CHECK(tokenize("Red, dress") == std::vector<std::string>{"red", "dress"});
}

TEST_CASE("text encoder is deterministic and handles empty text") {
  Encoders e(small_items());
  const auto a = e.encoder.encode_text("red dress");
  const auto b = e.encoder.encode_text("red dress ");
  const auto c = e.encoder.encode_text("Red dress");
  CHECK(a.value() == b.value());
  CHECK(a.value() == c.value());
  CHECK(a.cols() == 4);

  const auto empty = e.encoder.encode_text("");
  CHECK(empty.value().all_finite());
  CHECK(empty.value() == e.encoder.encode_text("   ").value());
  for (const char* word : {"red", "dress", "wool", "x"}) {
    const std::size_t bucket = e.encoder.featurizer().bucket_of(word);
    CHECK(bucket >= 1);
    CHECK(bucket < 64);
  }
}

TEST_CASE("zero payload through a zero-initialised output layer gives zero") {
  ItemEncoderConfig c = small_items();
  c.zero_init_image_output = true;
  Encoders e(c);
  const std::vector<double> payload(c.payload_dim, 0.0);
  const auto img = e.encoder.encode_image(payload);
  CHECK(img.cols() == c.d_img);
  for (double v : img.value().storage()) CHECK(v == 0.0);
}

TEST_CASE("image output dimension and payload contract") {
  ItemEncoderConfig c = small_items();
  Encoders e(c);
  oracle::Gen gen(3);
  for (int i = 0; i < 10; ++i) CHECK(e.encoder.encode_image(gen.vec(c.payload_dim)).cols() == c.d_img);
  CHECK_THROWS_AS(e.encoder.encode_image(gen.vec(c.payload_dim + 1)), InputError);
  std::vector<double> bad(c.payload_dim, 0.0);
  bad[1] = std::nan("");
  CHECK_THROWS_AS(e.encoder.encode_image(bad), InputError);
}

TEST_CASE("item feature is image then text") {
  ItemEncoderConfig c = small_items();
  Encoders e(c);
  const Catalog catalog = small_catalog();
  const Item& item = catalog[3];
  const auto u = e.encoder.encode_item(item);
  const auto img = e.encoder.encode_image(item.payload);
  const auto txt = e.encoder.encode_text(item.description);
  REQUIRE(u.cols() == 8);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(u.value()[i] == img.value()[i]);
    CHECK(u.value()[4 + i] == txt.value()[i]);
  }
}

TEST_CASE("batch encoding matches single-item encoding") {
  Encoders e(small_items());
  const Catalog catalog = small_catalog();
  std::vector<const Item*> items;
  for (std::size_t i = 0; i < 7; ++i) items.push_back(&catalog[i * 3]);
  const auto batch = e.encoder.encode_items(items);
  REQUIRE(batch.rows() == 7);
  for (std::size_t r = 0; r < 7; ++r) {
    const auto single = e.encoder.encode_item(*items[r]);
    for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(batch.value().at(r, c) - single.value()[c]) < 1e-12);
  }
}

TEST_CASE("category text source ties text embeddings to the fine category") {
  ItemEncoderConfig c = small_items();
  c.text_source = TextSource::Category;
  Encoders e(c);
  const Catalog catalog = small_catalog();
  const auto& tees = catalog.items_in_fine("tee");
  const auto a = e.encoder.encode_item(catalog[tees[0]]);
  const auto b = e.encoder.encode_item(catalog[tees[1]]);
  for (std::size_t i = 4; i < 8; ++i) CHECK(a.value()[i] == b.value()[i]);
}

TEST_CASE("gradient reaches both encoders") {
  Encoders e(small_items());
  const Catalog catalog = small_catalog();
  std::vector<const Item*> items{&catalog[0], &catalog[7], &catalog[13]};
  const auto u = e.encoder.encode_items(items);
  nn::backward(nn::sum(nn::mul(u, u)));
  double image_norm = 0.0, text_norm = 0.0;
  for (const auto& [name, p] : e.store.all()) {
    if (!p.has_grad()) continue;
    double s = 0.0;
    for (double g : p.grad().storage()) s += g * g;
    if (name.rfind("image.", 0) == 0) image_norm += s;
    if (name.rfind("text.", 0) == 0) text_norm += s;
  }
  CHECK(image_norm > 0.0);
  CHECK(text_norm > 0.0);
}

TEST_CASE("image embeddings separate planted styles under a nearest-centroid probe") {
  SyntheticSpec spec = small_synthetic_spec();
  const DatasetSplit data = generate_synthetic(spec, 5);
  ItemEncoderConfig c = small_items();
  c.payload_dim = spec.payload_dim;
  c.d_img = 32;
  c.image_hidden = 64;
  Encoders e(c, 9);
  using Key = std::pair<std::string, int>;
  std::map<Key, std::vector<double>> centroid;
  std::map<Key, std::size_t> count;
  std::vector<std::pair<Key, std::vector<double>>> held_out;
  for (std::size_t i = 0; i < data.catalog.size(); ++i) {
    const Item& item = data.catalog[i];
    const Key key{item.fine_category, data.latent_style.at(item.item_id)};
    const auto v = e.encoder.encode_image(item.payload).value().storage();
    if ((i / spec.num_styles) % 2 == 0) {
      auto& cen = centroid[key];
      cen.resize(v.size(), 0.0);
      for (std::size_t j = 0; j < v.size(); ++j) cen[j] += v[j];
      ++count[key];
    } else {
      held_out.emplace_back(key, v);
    }
  }
  for (auto& [key, cen] : centroid) {
    for (auto& x : cen) x /= static_cast<double>(count[key]);
  }
  std::size_t correct = 0;
  for (const auto& [key, v] : held_out) {
    int best = -1;
    double best_d = 1e300;
    for (const auto& [k, cen] : centroid) {
      if (k.first != key.first) continue;
      const double d = oracle::euclid(v, cen);
      if (d < best_d) best_d = d, best = k.second;
    }
    if (best == key.second) ++correct;
  }
  const double accuracy = static_cast<double>(correct) / static_cast<double>(held_out.size());
  CHECK(accuracy > 0.95);
}

TEST_CASE("cnn backbone shapes and gradients") {
  ItemEncoderConfig c = small_items();
  c.image = ImageBackbone::Cnn;
  c.payload_dim = 1024;
  Encoders e(c);
  oracle::Gen gen(4);
  std::vector<double> raster(1024);
  for (auto& x : raster) x = gen.uniform(0, 1);
  const auto img = e.encoder.encode_image(raster);
  CHECK(img.cols() == c.d_img);
  nn::backward(nn::sum(nn::mul(img, img)));
  bool any = false;
  for (const auto& [name, p] : e.store.all()) {
    if (name.rfind("image.", 0) == 0 && p.has_grad()) any = true;
  }
  CHECK(any);

  ItemEncoderConfig bad = c;
  bad.payload_dim = 32;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("backbone names parse") {
  CHECK(parse_image_backbone("mlp") == ImageBackbone::Mlp);
  CHECK(parse_image_backbone("cnn") == ImageBackbone::Cnn);
  CHECK_THROWS_AS(parse_image_backbone("resnet"), ConfigError);
  CHECK(parse_text_source("category") == TextSource::Category);
}
