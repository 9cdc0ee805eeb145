#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "outfit/data.hpp"
#include "outfit/index.hpp"
#include "outfit/nn/layers.hpp"
#include "outfit/nn/tensor.hpp"
#include "outfit/outfit_encoder.hpp"

using namespace outfit;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& v : out) v = normal(gen);
  return out;
}

ModelConfig bench_model(std::size_t payload_dim) {
  ModelConfig c;
  c.items.payload_dim = payload_dim;
  c.items.image_hidden = 64;
  c.items.d_img = 32;
  c.items.d_text = 32;
  c.encoder.model_dim = 64;
  c.encoder.layers = 2;
  c.encoder.heads = 4;
  c.encoder.ff_hidden = 128;
  c.encoder.max_outfit_len = 8;
  c.cir_head = true;
  return c;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const nn::Var a = nn::Var::constant(nn::Tensor({n, n}, random_values(n * n, 1)));
  const nn::Var b = nn::Var::constant(nn::Tensor({n, n}, random_values(n * n, 2)));
  nn::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(nn::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_AttentionForwardBackward(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  nn::ParameterStore store;
  auto block = nn::TransformerBlock::create(store, "blk", 64, 4, 128, rng);
  const nn::Var x = nn::Var::leaf(nn::Tensor({len, 64}, random_values(len * 64, 4)));
  const nn::Tensor mask = nn::additive_key_mask(std::vector<bool>(len, true));
  for (auto _ : state) {
    store.zero_grad();
    nn::backward(nn::sum(block.forward(x, &mask)));
  }
}
BENCHMARK(BM_AttentionForwardBackward)->Arg(4)->Arg(8);

void BM_KnnQuery(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  constexpr std::size_t kDim = 64;
  EmbeddingIndex index(1, kDim);
  const auto values = random_values(n * kDim, 5);
  for (std::size_t i = 0; i < n; ++i) {
    index.add("item-" + std::to_string(i),
              std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(i * kDim),
                                  values.begin() + static_cast<std::ptrdiff_t>((i + 1) * kDim)),
              "fine-" + std::to_string(i % 8), "high-" + std::to_string(i % 4));
  }
  const auto target = random_values(kDim, 6);
  for (auto _ : state) benchmark::DoNotOptimize(index.knn_query(target, 10));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_KnnQuery)->Arg(1000)->Arg(10000)->Arg(100000);

void BM_CpForward(benchmark::State& state) {
  const DatasetSplit data = generate_synthetic(SyntheticSpec{}, 7);
  const OutfitModel model(bench_model(data.catalog[0].payload.size()));
  const Outfit& outfit = data.test.front();
  std::vector<const Item*> items;
  for (const auto& id : outfit.items) items.push_back(&data.catalog.at(id));
  nn::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model.cp_forward(model.encode_items(items)));
}
BENCHMARK(BM_CpForward);

void BM_CompleteOutfit(benchmark::State& state) {
  const DatasetSplit data = generate_synthetic(SyntheticSpec{}, 8);
  const OutfitModel model(bench_model(data.catalog[0].payload.size()));
  const EmbeddingIndex index = build_index(data.catalog, model);
  const Outfit& outfit = data.test.front();
  const std::vector<std::string> partial(outfit.items.begin(), outfit.items.end() - 1);
  const auto spec = TargetSpec::category(data.catalog.at(outfit.items.back()).fine_category);
  for (auto _ : state) benchmark::DoNotOptimize(complete_outfit(model, index, partial, spec, 10));
}
BENCHMARK(BM_CompleteOutfit);

}  // namespace

BENCHMARK_MAIN();
