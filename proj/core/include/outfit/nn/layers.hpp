#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "outfit/nn/tensor.hpp"

namespace outfit::nn {

using Rng = std::mt19937_64;

// Named, ordered collection of model parameters. Iteration order is the
// lexicographic order of names, which fixes serialisation and hashing order.
class ParameterStore {
 public:
  Var add(const std::string& name, Tensor init, bool trainable = true);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Var get(const std::string& name) const;
  bool trainable(const std::string& name) const;
  void set_trainable(const std::string& name, bool on);
  // Freezes / unfreezes every parameter whose name starts with prefix.
  void set_trainable_prefix(const std::string& prefix, bool on);

  const std::map<std::string, Var>& all() const { return params_; }
  std::vector<Var> trainable_params() const;
  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::map<std::string, Var> params_;
  std::map<std::string, bool> trainable_;
};

enum class Init { XavierUniform, Zero };

Tensor init_tensor(std::size_t rows, std::size_t cols, Init init, Rng& rng);

// y = x·W + b, with W stored [in × out].
struct Linear {
  Var weight;
  Var bias;

  static Linear create(ParameterStore& store, const std::string& prefix, std::size_t in,
                       std::size_t out, Rng& rng, Init init = Init::XavierUniform);
  Var forward(const Var& x) const;
  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }
};

struct LayerNorm {
  Var gamma;
  Var beta;
  double eps = 1e-5;

  static LayerNorm create(ParameterStore& store, const std::string& prefix, std::size_t dim);
  Var forward(const Var& x) const { return layer_norm(x, gamma, beta, eps); }
};

struct MultiHeadAttention {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParameterStore& store, const std::string& prefix,
                                   std::size_t dim, std::size_t heads, Rng& rng);

  // Scaled dot-product attention per head over kv rows, concatenated and
  // projected. `key_mask` is an optional additive [1 × L_kv] row (0 for
  // valid keys, large negative for padding). No positional information is
  // ever added, so the map is equivariant in the rows of its inputs.
  Var forward(const Var& q_in, const Var& kv_in, const Tensor* key_mask = nullptr) const;
};

// Pre-norm transformer encoder block with a GELU feed-forward sublayer.
struct TransformerBlock {
  LayerNorm norm1;
  MultiHeadAttention attention;
  LayerNorm norm2;
  Linear ff_in;
  Linear ff_out;

  static TransformerBlock create(ParameterStore& store, const std::string& prefix,
                                 std::size_t dim, std::size_t heads, std::size_t ff_hidden,
                                 Rng& rng);
  Var forward(const Var& x, const Tensor* key_mask = nullptr) const;
};

// Additive attention mask row: 0 where valid[i], -1e9 otherwise.
Tensor additive_key_mask(const std::vector<bool>& valid);

inline constexpr double kMaskedLogit = -1e9;

}  // namespace outfit::nn
