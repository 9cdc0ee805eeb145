#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "outfit/item_encoders.hpp"
#include "outfit/nn/layers.hpp"

namespace outfit {

struct EncoderConfig {
  std::size_t model_dim = 128;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_hidden = 256;
  std::size_t max_outfit_len = 8;

  // Six layers, sixteen heads.
  static EncoderConfig full_scale();
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct ModelConfig {
  ItemEncoderConfig items;
  EncoderConfig encoder;
  bool cp_head = true;
  bool cir_head = false;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

enum class TargetKind { Category, FreeText };

// What the caller wants retrieved: a category name or a free-text description.
struct TargetSpec {
  TargetKind kind = TargetKind::Category;
  std::string text;

  static TargetSpec category(std::string name) { return {TargetKind::Category, std::move(name)}; }
  static TargetSpec free_text(std::string text) { return {TargetKind::FreeText, std::move(text)}; }
};

const char* to_string(TargetKind k);
TargetKind parse_target_kind(const std::string& text);

// Item encoders, the set transformer trunk with its two task tokens, and
// the compatibility / retrieval heads.
//
// Parameter names:
//   image.*, text.head.*           item encoders
//   trunk.outfit_token             x_Outfit, [1 × model_dim]
//   trunk.empty_image              x_Img, [1 × d_img]
//   trunk.layer{i}.*, trunk.final_norm.*
//   cp_head.*, cir_head.*
class OutfitModel {
 public:
  explicit OutfitModel(const ModelConfig& config);
  OutfitModel(const OutfitModel&) = delete;
  OutfitModel& operator=(const OutfitModel&) = delete;

  const ModelConfig& config() const { return config_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }
  const ItemEncoder& items() const { return *item_encoder_; }

  nn::Var encode_items(std::span<const Item* const> items) const {
    return item_encoder_->encode_items(items);
  }

  // Compatibility score in (0, 1), [1 × 1]. `features` holds one row per slot;
  // `valid` (empty = all valid) marks real items, the rest is padding.
  nn::Var cp_forward(const nn::Var& features, const std::vector<bool>& valid = {}) const;

  // Target item embedding t, [1 × model_dim], in the same space as the rows
  // produced by encode_items.
  nn::Var cir_forward(const nn::Var& features, const TargetSpec& spec,
                      const std::vector<bool>& valid = {}) const;

  // s = x_Img ++ E_text(spec.text), [1 × model_dim].
  nn::Var target_token(const TargetSpec& spec) const;

  std::uint64_t cp_forward_calls() const { return cp_calls_.load(); }
  std::uint64_t cir_forward_calls() const { return cir_calls_.load(); }

 private:
  // Runs the trunk on token ++ features and returns the token's output row.
  nn::Var encode_set(const nn::Var& token, const nn::Var& features, const std::vector<bool>& valid,
                     std::size_t min_valid) const;

  ModelConfig config_;
  nn::ParameterStore params_;
  std::unique_ptr<ItemEncoder> item_encoder_;
  nn::Var outfit_token_;
  nn::Var empty_image_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm final_norm_;
  nn::Linear cp_fc1_, cp_fc2_;
  nn::Linear cir_fc1_, cir_fc2_;
  mutable std::atomic<std::uint64_t> cp_calls_{0};
  mutable std::atomic<std::uint64_t> cir_calls_{0};
};

}  // namespace outfit
