#include "outfit/nn/layers.hpp"

#include <cmath>

#include "outfit/errors.hpp"

namespace outfit::nn {

Var ParameterStore::add(const std::string& name, Tensor init, bool trainable) {
  if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Var v = Var::leaf(std::move(init), true);
  params_.emplace(name, v);
  trainable_.emplace(name, trainable);
  return v;
}

Var ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

bool ParameterStore::trainable(const std::string& name) const {
  auto it = trainable_.find(name);
  if (it == trainable_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

void ParameterStore::set_trainable(const std::string& name, bool on) {
  auto it = trainable_.find(name);
  if (it == trainable_.end()) throw ConfigError("unknown parameter: " + name);
  it->second = on;
}

void ParameterStore::set_trainable_prefix(const std::string& prefix, bool on) {
  for (auto& [name, flag] : trainable_) {
    if (name.rfind(prefix, 0) == 0) flag = on;
  }
}

std::vector<Var> ParameterStore::trainable_params() const {
  std::vector<Var> out;
  for (const auto& [name, v] : params_) {
    if (trainable_.at(name)) out.push_back(v);
  }
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& [name, v] : params_) {
    Var copy = v;
    copy.zero_grad();
  }
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : params_) n += v.value().size();
  return n;
}

Tensor init_tensor(std::size_t rows, std::size_t cols, Init init, Rng& rng) {
  Tensor t = Tensor::zeros(rows, cols);
  if (init == Init::XavierUniform) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : t.storage()) v = dist(rng);
  }
  return t;
}

Linear Linear::create(ParameterStore& store, const std::string& prefix, std::size_t in,
                      std::size_t out, Rng& rng, Init init) {
  Linear l;
  l.weight = store.add(prefix + ".weight", init_tensor(in, out, init, rng));
  l.bias = store.add(prefix + ".bias", Tensor::zeros(1, out));
  return l;
}

Var Linear::forward(const Var& x) const { return add_row(matmul(x, weight), bias); }

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& prefix, std::size_t dim) {
  LayerNorm n;
  n.gamma = store.add(prefix + ".gamma", Tensor({1, dim}, 1.0));
  n.beta = store.add(prefix + ".beta", Tensor::zeros(1, dim));
  return n;
}

MultiHeadAttention MultiHeadAttention::create(ParameterStore& store, const std::string& prefix,
                                              std::size_t dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention: model dim " + std::to_string(dim) +
                      " is not divisible by head count " + std::to_string(heads));
  }
  MultiHeadAttention a;
  a.query = Linear::create(store, prefix + ".query", dim, dim, rng);
  a.key = Linear::create(store, prefix + ".key", dim, dim, rng);
  a.value = Linear::create(store, prefix + ".value", dim, dim, rng);
  a.output = Linear::create(store, prefix + ".output", dim, dim, rng);
  a.heads = heads;
  return a;
}

Var MultiHeadAttention::forward(const Var& q_in, const Var& kv_in, const Tensor* key_mask) const {
  const std::size_t dim = query.out_features();
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention: model dim " + std::to_string(dim) +
                      " is not divisible by head count " + std::to_string(heads));
  }
  if (key_mask && key_mask->size() != kv_in.rows()) {
    throw DimensionError("attention: mask length differs from key count");
  }
  const std::size_t head_dim = dim / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(head_dim));

  const Var q = query.forward(q_in);
  const Var k = key.forward(kv_in);
  const Var v = value.forward(kv_in);
  Var mask;
  if (key_mask) mask = Var::constant(*key_mask);

  std::vector<Var> per_head;
  per_head.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = slice_cols(q, h * head_dim, head_dim);
    const Var kh = slice_cols(k, h * head_dim, head_dim);
    const Var vh = slice_cols(v, h * head_dim, head_dim);
    Var scores = scale(matmul(qh, transpose(kh)), scale_factor);
    if (key_mask) scores = add_row(scores, mask);
    per_head.push_back(matmul(softmax_rows(scores), vh));
  }
  const Var merged = heads == 1 ? per_head.front() : concat_cols(per_head);
  return output.forward(merged);
}

TransformerBlock TransformerBlock::create(ParameterStore& store, const std::string& prefix,
                                          std::size_t dim, std::size_t heads,
                                          std::size_t ff_hidden, Rng& rng) {
  TransformerBlock b;
  b.norm1 = LayerNorm::create(store, prefix + ".norm1", dim);
  b.attention = MultiHeadAttention::create(store, prefix + ".attention", dim, heads, rng);
  b.norm2 = LayerNorm::create(store, prefix + ".norm2", dim);
  b.ff_in = Linear::create(store, prefix + ".ff_in", dim, ff_hidden, rng);
  b.ff_out = Linear::create(store, prefix + ".ff_out", ff_hidden, dim, rng);
  return b;
}

Var TransformerBlock::forward(const Var& x, const Tensor* key_mask) const {
  const Var h = norm1.forward(x);
  const Var attended = add(x, attention.forward(h, h, key_mask));
  const Var ff = ff_out.forward(gelu(ff_in.forward(norm2.forward(attended))));
  return add(attended, ff);
}

Tensor additive_key_mask(const std::vector<bool>& valid) {
  Tensor m = Tensor::zeros(1, valid.size());
  for (std::size_t i = 0; i < valid.size(); ++i) m[i] = valid[i] ? 0.0 : kMaskedLogit;
  return m;
}

}  // namespace outfit::nn
