#include <doctest.h>

#include <cmath>
#include <functional>

#include "outfit/errors.hpp"
#include "outfit/nn/layers.hpp"
#include "outfit/nn/tensor.hpp"
#include "support/oracles.hpp"

using namespace outfit;
using namespace outfit::nn;

namespace {

Var leaf_random(oracle::Gen& gen, std::size_t rows, std::size_t cols, double sigma = 1.0) {
  return Var::leaf(Tensor({rows, cols}, gen.vec(rows * cols, sigma)));
}

void set_identity(Linear& layer) {
  auto& w = layer.weight.mutable_value();
  w.fill(0.0);
  for (std::size_t i = 0; i < std::min(w.rows(), w.cols()); ++i) w.at(i, i) = 1.0;
  layer.bias.mutable_value().fill(0.0);
}

}  // namespace

TEST_CASE("matmul examples") {
  const Var id = Var::constant(Tensor::from_rows({{1, 0}, {0, 1}}));
  const Var b = Var::constant(Tensor::from_rows({{5, 6}, {7, 8}}));
  CHECK(matmul(id, b).value() == b.value());

  const Var a = Var::constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  const Var ones = Var::constant(Tensor::from_rows({{1}, {1}}));
  CHECK(matmul(a, ones).value() == Tensor::from_rows({{3}, {7}}));

  const Var zero = Var::constant(Tensor::zeros(2, 2));
  CHECK(matmul(zero, b).value() == Tensor::zeros(2, 2));

  CHECK_THROWS_AS(matmul(a, Var::constant(Tensor::zeros(3, 1))), DimensionError);
}

TEST_CASE("softmax examples") {
  const Var u = softmax_rows(Var::constant(Tensor::row({0, 0, 0})));
  for (std::size_t i = 0; i < 3; ++i) CHECK(u.value()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const Var v = softmax_rows(Var::constant(Tensor::row({0, std::log(2.0)})));
  CHECK(v.value()[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(v.value()[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));

  oracle::Gen gen(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = gen.vec(7, 5.0);
    const double c = gen.uniform(-100, 100);
    std::vector<double> shifted = x;
    for (auto& s : shifted) s += c;
    const Var a = softmax_rows(Var::constant(Tensor::row(x)));
    const Var b = softmax_rows(Var::constant(Tensor::row(shifted)));
    double total = 0.0;
    for (std::size_t i = 0; i < 7; ++i) {
      CHECK(std::abs(a.value()[i] - b.value()[i]) < 1e-12);
      CHECK(a.value()[i] > 0.0);
      total += a.value()[i];
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("layer norm examples") {
  const Var ones = Var::constant(Tensor::row({1, 1, 1}));
  const Var zeros3 = Var::constant(Tensor::row({0, 0, 0}));
  const Var c = layer_norm(Var::constant(Tensor::row({5, 5, 5})), ones, zeros3, 1e-5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(c.value()[i] == 0.0);

  const Var g = Var::constant(Tensor::row({1, 1}));
  const Var z = Var::constant(Tensor::row({0, 0}));
  const Var n = layer_norm(Var::constant(Tensor::row({1, 3})), g, z, 0.0);
  CHECK(n.value()[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(n.value()[1] == doctest::Approx(1.0).epsilon(1e-15));

  const Var shifted = layer_norm(Var::constant(Tensor::row({1, 3})), g, Var::constant(Tensor::row({2, 2})), 0.0);
  CHECK(shifted.value()[0] == doctest::Approx(1.0));
  CHECK(shifted.value()[1] == doctest::Approx(3.0));

  oracle::Gen gen(12);
  const Var x = leaf_random(gen, 5, 9, 10.0);
  const Var out = layer_norm(x, Var::constant(Tensor({1, 9}, 1.0)), Var::constant(Tensor({1, 9}, 0.0)), 1e-5);
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0.0;
    for (std::size_t c2 = 0; c2 < 9; ++c2) mean += out.value().at(r, c2);
    CHECK(std::abs(mean / 9.0) < 1e-10);
  }
}

TEST_CASE("attention hand-evaluated examples") {
  Rng rng(1);
  ParameterStore store;
  auto mha = MultiHeadAttention::create(store, "a", 2, 1, rng);
  set_identity(mha.query);
  set_identity(mha.key);
  set_identity(mha.value);
  set_identity(mha.output);

  const Var single = Var::constant(Tensor::row({0.3, -1.2}));
  const Var out1 = mha.forward(single, single);
  CHECK(out1.value()[0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(out1.value()[1] == doctest::Approx(-1.2).epsilon(1e-15));

  const Var two = Var::constant(Tensor::from_rows({{1, 0}, {0, 1}}));
  const Var out2 = mha.forward(two, two);
  const double e = std::exp(1.0 / std::sqrt(2.0));
  const double w0 = e / (e + 1.0);
  CHECK(w0 == doctest::Approx(0.6698).epsilon(1e-4));
  CHECK(out2.value().at(0, 0) == doctest::Approx(w0).epsilon(1e-14));
  CHECK(out2.value().at(0, 1) == doctest::Approx(1.0 - w0).epsilon(1e-14));

  CHECK_THROWS_AS(MultiHeadAttention::create(store, "b", 6, 4, rng), ConfigError);
}

TEST_CASE("attention is permutation equivariant") {
  Rng rng(5);
  ParameterStore store;
  auto block = TransformerBlock::create(store, "blk", 4, 2, 8, rng);
  auto mha = MultiHeadAttention::create(store, "mha", 4, 2, rng);
  oracle::Gen gen(21);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t rows = 3 + gen.index(4);
    const auto data = gen.vec(rows * 4);
    const auto perm = gen.permutation(rows);
    std::vector<double> permuted(rows * 4);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < 4; ++c) permuted[r * 4 + c] = data[perm[r] * 4 + c];
    }
    const Var x = Var::constant(Tensor({rows, 4}, data));
    const Var px = Var::constant(Tensor({rows, 4}, permuted));
    const Var a = mha.forward(x, x);
    const Var pa = mha.forward(px, px);
    const Var b = block.forward(x);
    const Var pb = block.forward(px);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(std::abs(pa.value().at(r, c) - a.value().at(perm[r], c)) < 1e-9);
        CHECK(std::abs(pb.value().at(r, c) - b.value().at(perm[r], c)) < 1e-9);
      }
    }
  }
}

TEST_CASE("masked keys do not influence attention") {
  Rng rng(6);
  ParameterStore store;
  auto mha = MultiHeadAttention::create(store, "mha", 4, 2, rng);
  oracle::Gen gen(8);
  const Var x = Var::constant(Tensor({3, 4}, gen.vec(12)));
  std::vector<double> padded_data = x.value().storage();
  for (int i = 0; i < 8; ++i) padded_data.push_back(gen.normal(50.0));
  const Var padded = Var::constant(Tensor({5, 4}, padded_data));
  const Tensor mask = additive_key_mask({true, true, true, false, false});
  CHECK(mask[3] == kMaskedLogit);
  CHECK(mask[0] == 0.0);
  const Var a = mha.forward(x, x);
  const Var b = mha.forward(x, padded, &mask);
  for (std::size_t i = 0; i < a.value().size(); ++i) CHECK(std::abs(a.value()[i] - b.value()[i]) < 1e-12);
}

TEST_CASE("grad_check on x squared") {
  Var x = Var::leaf(Tensor::scalar(3.0));
  std::vector<Var> leaves{x};
  const double err = grad_check([&] { return mul(x, x); }, leaves, 1e-5);
  CHECK(err < 1e-8);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("elementwise and structural ops match finite differences") {
  oracle::Gen gen(31);
  for (int point = 0; point < 20; ++point) {
    Var a = leaf_random(gen, 3, 4);
    Var b = leaf_random(gen, 3, 4);
    Var w = leaf_random(gen, 4, 2);
    Var row = leaf_random(gen, 1, 4);
    Var pos = Var::leaf(Tensor({3, 4}, [&] {
      auto v = gen.vec(12);
      for (auto& x : v) x = 0.5 + std::abs(x);
      return v;
    }()));
    std::vector<std::pair<const char*, std::function<Var()>>> cases = {
        {"matmul", [&] { return sum(matmul(a, w)); }},
        {"add", [&] { return sum(mul(add(a, b), a)); }},
        {"sub", [&] { return sum(mul(sub(a, b), b)); }},
        {"mul", [&] { return sum(mul(a, b)); }},
        {"scale", [&] { return sum(mul(scale(a, -1.7), a)); }},
        {"add_scalar", [&] { return sum(mul(add_scalar(a, 0.3), a)); }},
        {"add_row", [&] { return sum(mul(add_row(a, row), a)); }},
        {"transpose", [&] { return sum(matmul(transpose(a), b)); }},
        {"reshape", [&] { return sum(matmul(reshape(a, {4, 3}), a)); }},
        {"gelu", [&] { return sum(gelu(a)); }},
        {"sigmoid", [&] { return sum(sigmoid(a)); }},
        {"log", [&] { return sum(log(pos)); }},
        {"sqrt", [&] { return sum(sqrt(pos)); }},
        {"softmax", [&] { return sum(mul(softmax_rows(a), b)); }},
        {"concat_rows", [&] { return sum(mul(concat_rows({a, b}), concat_rows({b, a}))); }},
        {"concat_cols", [&] { return sum(matmul(concat_cols({a, b}), transpose(concat_cols({b, a})))); }},
        {"slice_rows", [&] { return sum(mul(slice_rows(a, 1, 2), slice_rows(b, 0, 2))); }},
        {"slice_cols", [&] { return sum(mul(slice_cols(a, 1, 2), slice_cols(b, 2, 2))); }},
        {"gather_rows", [&] {
           const std::vector<std::size_t> idx{2, 0, 2};
           return sum(mul(gather_rows(a, idx), gather_rows(b, idx)));
         }},
        {"mean", [&] { return mean(mul(a, b)); }},
        {"layer_norm", [&] { return sum(mul(layer_norm(a, row, slice_rows(b, 0, 1), 1e-5), b)); }},
    };
    std::vector<Var> leaves{a, b, w, row, pos};
    for (auto& [name, f] : cases) {
      CAPTURE(name);
      CHECK(grad_check(f, leaves, 1e-5) < 1e-4);
    }
  }
}

TEST_CASE("relu and min_of gradients away from kinks") {
  oracle::Gen gen(32);
  for (int point = 0; point < 20; ++point) {
    auto data = gen.vec(6);
    for (auto& x : data) x += x >= 0 ? 0.1 : -0.1;
    Var a = Var::leaf(Tensor({2, 3}, data));
    std::vector<Var> scalars;
    for (int i = 0; i < 4; ++i) scalars.push_back(Var::leaf(Tensor::scalar(static_cast<double>(i) + gen.uniform(0, 0.5))));
    std::vector<Var> leaves{a};
    CHECK(grad_check([&] { return sum(mul(relu(a), a)); }, leaves, 1e-5) < 1e-4);
    CHECK(grad_check([&] { return min_of(scalars); }, scalars, 1e-5) < 1e-4);
  }
}

TEST_CASE("convolution and pooling gradients") {
  oracle::Gen gen(33);
  for (int point = 0; point < 20; ++point) {
    Var x = leaf_random(gen, 2, 16);
    Var w = leaf_random(gen, 3, 2 * 9, 0.5);
    Var b = leaf_random(gen, 1, 3);
    std::vector<Var> leaves{x, w, b};
    auto f = [&] {
      const Var y = conv2d(x, w, b, 4, 4, 3);
      const Var p = avg_pool2(y, 4, 4);
      return sum(mul(p, p));
    };
    CHECK(grad_check(f, leaves, 1e-5) < 1e-4);
  }
}

TEST_CASE("layers match finite differences") {
  oracle::Gen gen(34);
  for (int point = 0; point < 20; ++point) {
    Rng rng(100 + point);
    ParameterStore store;
    auto lin = Linear::create(store, "lin", 4, 3, rng);
    auto norm = LayerNorm::create(store, "ln", 4);
    auto mha = MultiHeadAttention::create(store, "mha", 4, 2, rng);
    auto block = TransformerBlock::create(store, "blk", 4, 2, 6, rng);
    for (const auto& [name, p] : store.all()) {
      auto& v = store.get(name).mutable_value().storage();
      for (auto& x : v) x += gen.normal(0.1);
    }
    Var x = leaf_random(gen, 3, 4);
    Var probe = Var::constant(Tensor({3, 4}, gen.vec(12)));
    const Tensor mask = additive_key_mask({true, true, false});
    std::vector<Var> leaves{x};
    for (const auto& [name, p] : store.all()) leaves.push_back(p);
    CHECK(grad_check([&] { return sum(mul(lin.forward(x), slice_cols(probe, 0, 3))); }, leaves) < 1e-4);
    CHECK(grad_check([&] { return sum(mul(norm.forward(x), probe)); }, leaves) < 1e-4);
    CHECK(grad_check([&] { return sum(mul(mha.forward(x, x, &mask), probe)); }, leaves) < 1e-4);
    CHECK(grad_check([&] { return sum(mul(block.forward(x, &mask), probe)); }, leaves) < 1e-4);
  }
}

TEST_CASE("backward visits each node once and fills leaf gradients") {
  Var x = Var::leaf(Tensor::scalar(2.0));
  Var y = mul(x, x);
  Var z = add(y, y);
  backward(z);
  CHECK(x.grad()[0] == doctest::Approx(8.0));

  Var c = Var::constant(Tensor::scalar(1.0));
  Var d = Var::leaf(Tensor::scalar(1.0));
  backward(mul(c, d));
  CHECK(d.has_grad());
  CHECK_FALSE(c.has_grad());
}

TEST_CASE("no-grad guard records no graph") {
  Var x = Var::leaf(Tensor::scalar(2.0));
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    const Var y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(grad_enabled());
}

TEST_CASE("finite checks raise on NaN") {
  const bool previous = finite_checks();
  set_finite_checks(true);
  const Var neg = Var::constant(Tensor::scalar(-1.0));
  CHECK_THROWS_AS(log(neg), NumericError);
  set_finite_checks(previous);
}

TEST_CASE("tensor shape invariants") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  const Tensor t({2, 3}, 1.0);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
}

TEST_CASE("forward and backward are bit deterministic") {
  auto run = [] {
    Rng rng(77);
    ParameterStore store;
    auto block = TransformerBlock::create(store, "blk", 8, 2, 16, rng);
    oracle::Gen gen(78);
    const Var x = Var::constant(Tensor({4, 8}, gen.vec(32)));
    const Var y = sum(mul(block.forward(x), block.forward(x)));
    backward(y);
    std::vector<double> out{y.item()};
    for (const auto& [name, p] : store.all()) {
      for (double g : p.grad().storage()) out.push_back(g);
    }
    return out;
  };
  CHECK(run() == run());
}
