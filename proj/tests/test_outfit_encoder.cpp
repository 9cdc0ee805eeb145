#include <doctest.h>

#include <cmath>

#include "outfit/errors.hpp"
#include "outfit/losses.hpp"
#include "outfit/outfit_encoder.hpp"
#include "support/fixtures.hpp"

using namespace outfit;
using namespace outfit::testing;

namespace {

nn::Var random_features(oracle::Gen& gen, std::size_t rows, std::size_t dim = 8) {
  return nn::Var::constant(nn::Tensor({rows, dim}, gen.vec(rows * dim)));
}

nn::Var permute_rows(const nn::Var& x, const std::vector<std::size_t>& perm) {
  return nn::gather_rows(x, perm);
}

nn::Var pad(const nn::Var& x, std::size_t total, oracle::Gen& gen) {
  const std::size_t extra = total - x.rows();
  if (extra == 0) return x;
  return nn::concat_rows({x, nn::Var::constant(nn::Tensor({extra, x.cols()}, gen.vec(extra * x.cols(), 30.0)))});
}

std::vector<bool> valid_mask(std::size_t real, std::size_t total) {
  std::vector<bool> v(total, false);
  for (std::size_t i = 0; i < real; ++i) v[i] = true;
  return v;
}

ModelConfig both_heads() {
  ModelConfig c = tiny_model();
  c.cir_head = true;
  return c;
}

}  // namespace

TEST_CASE("compatibility score lies strictly inside (0, 1)") {
  OutfitModel model(tiny_model());
  oracle::Gen gen(1);
  for (int i = 0; i < 50; ++i) {
    const double s = model.cp_forward(random_features(gen, 2 + gen.index(7), 8)).item();
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("both heads are invariant to item order") {
  OutfitModel model(both_heads());
  oracle::Gen gen(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + gen.index(7);
    const auto x = random_features(gen, n);
    const auto perm = gen.permutation(n);
    const auto px = permute_rows(x, perm);
    CHECK(std::abs(model.cp_forward(x).item() - model.cp_forward(px).item()) < 1e-9);
    const auto spec = TargetSpec::category("boot");
    const auto t = model.cir_forward(x, spec);
    const auto pt = model.cir_forward(px, spec);
    for (std::size_t i = 0; i < t.value().size(); ++i) CHECK(std::abs(t.value()[i] - pt.value()[i]) < 1e-9);
  }
}

TEST_CASE("padding with a mask is a no-op") {
  OutfitModel model(both_heads());
  oracle::Gen gen(3);
  for (std::size_t n = 2; n <= 7; ++n) {
    const auto x = random_features(gen, n);
    const auto padded = pad(x, 8, gen);
    const auto mask = valid_mask(n, 8);
    CHECK(std::abs(model.cp_forward(x).item() - model.cp_forward(padded, mask).item()) < 1e-12);
    const auto spec = TargetSpec::free_text("soft wool boot");
    const auto t = model.cir_forward(x, spec);
    const auto tp = model.cir_forward(padded, spec, mask);
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(t.value()[i] - tp.value()[i]) < 1e-12);
  }
}

TEST_CASE("outfit length contract") {
  OutfitModel model(both_heads());
  oracle::Gen gen(4);
  CHECK_THROWS_AS(model.cp_forward(random_features(gen, 1)), InputError);
  CHECK_THROWS_AS(model.cp_forward(random_features(gen, 9)), InputError);
  CHECK_THROWS_AS(model.cp_forward(random_features(gen, 3), {true, false, false}), InputError);
  CHECK_NOTHROW(model.cir_forward(random_features(gen, 1), TargetSpec::category("tee")));
  CHECK_THROWS_AS(model.cir_forward(random_features(gen, 2), TargetSpec::category("tee"), {false, false}),
                  InputError);
  CHECK_THROWS_AS(model.cp_forward(random_features(gen, 3, 6)), DimensionError);
  CHECK_THROWS_AS(model.cir_forward(random_features(gen, 2), TargetSpec::category("")), InputError);
}

TEST_CASE("target embedding shape and dependence on the target") {
  OutfitModel model(both_heads());
  oracle::Gen gen(5);
  const auto x = random_features(gen, 3);
  const auto a = model.cir_forward(x, TargetSpec::category("tee"));
  const auto b = model.cir_forward(x, TargetSpec::category("boot"));
  CHECK(a.cols() == model.config().encoder.model_dim);
  double diff = 0.0;
  for (std::size_t i = 0; i < 8; ++i) diff += std::abs(a.value()[i] - b.value()[i]);
  CHECK(diff > 0.0);

  const auto token = model.target_token(TargetSpec::category("tee"));
  const auto empty = model.params().get("trunk.empty_image");
  for (std::size_t i = 0; i < 4; ++i) CHECK(token.value()[i] == empty.value()[i]);
}

TEST_CASE("heads are only available when configured") {
  OutfitModel cp_only(tiny_model());
  OutfitModel cir_only(tiny_cir_model());
  oracle::Gen gen(6);
  const auto x = random_features(gen, 3);
  CHECK_THROWS_AS(cp_only.cir_forward(x, TargetSpec::category("tee")), ConfigError);
  CHECK_THROWS_AS(cir_only.cp_forward(x), ConfigError);
  CHECK_FALSE(cp_only.params().contains("cir_head.fc1.weight"));
  CHECK(cir_only.params().contains("cir_head.fc2.weight"));
}

TEST_CASE("forward calls are counted") {
  OutfitModel model(both_heads());
  oracle::Gen gen(7);
  const auto x = random_features(gen, 3);
  model.cp_forward(x);
  model.cp_forward(x);
  model.cir_forward(x, TargetSpec::category("tee"));
  CHECK(model.cp_forward_calls() == 2);
  CHECK(model.cir_forward_calls() == 1);
}

TEST_CASE("configuration validation and serialisation") {
  ModelConfig c = tiny_model();
  c.encoder.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_model();
  c.encoder.model_dim = 10;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_model();
  c.encoder.max_outfit_len = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_model();
  c.cp_head = c.cir_head = false;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  const ModelConfig full = both_heads();
  const nlohmann::json j = full;
  CHECK(j.get<ModelConfig>() == full);
  CHECK(EncoderConfig::full_scale().layers == 6);
  CHECK(EncoderConfig::full_scale().heads == 16);
}

TEST_CASE("same seed builds identical parameters") {
  OutfitModel a(both_heads());
  OutfitModel b(both_heads());
  for (const auto& [name, p] : a.params().all()) CHECK(p.value() == b.params().get(name).value());
}

TEST_CASE("full compatibility forward with focal loss matches finite differences") {
  const Catalog catalog = small_catalog();
  for (int point = 0; point < 3; ++point) {
    OutfitModel model(tiny_model(6, 40 + point));
    const auto items = item_ptrs(catalog, {"tee-1", "sneaker-2", "blouse-4"});
    std::vector<nn::Var> leaves;
    for (const auto& [name, p] : model.params().all()) {
      if (model.params().trainable(name)) leaves.push_back(p);
    }
    const int label = point % 2;
    auto f = [&] {
      const auto score = model.cp_forward(model.encode_items(items));
      const std::vector<int> labels{label};
      return focal_loss(score, labels);
    };
    CHECK(nn::grad_check(f, leaves, 1e-5) < 1e-4);
  }
}
