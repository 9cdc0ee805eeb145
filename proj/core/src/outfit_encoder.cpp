#include "outfit/outfit_encoder.hpp"

#include <json.hpp>

#include "outfit/errors.hpp"

namespace outfit {

EncoderConfig EncoderConfig::full_scale() {
  EncoderConfig c;
  c.layers = 6;
  c.heads = 16;
  c.ff_hidden = 512;
  return c;
}

void EncoderConfig::validate() const {
  if (layers < 1) throw ConfigError("encoder: at least one layer is required");
  if (heads == 0 || model_dim % heads != 0) {
    throw ConfigError("encoder: model_dim " + std::to_string(model_dim) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  if (max_outfit_len < 2) throw ConfigError("encoder: max_outfit_len must be at least 2");
  if (ff_hidden == 0) throw ConfigError("encoder: ff_hidden must be positive");
}

void ModelConfig::validate() const {
  items.validate();
  encoder.validate();
  if (items.d_img + items.d_text != encoder.model_dim) {
    throw ConfigError("model: d_img + d_text (" + std::to_string(items.d_img + items.d_text) +
                      ") must equal the transformer model_dim (" +
                      std::to_string(encoder.model_dim) + ")");
  }
  if (!cp_head && !cir_head) throw ConfigError("model: at least one of the cp and cir heads is required");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{
      {"image_encoder", to_string(c.items.image)},
      {"payload_dim", c.items.payload_dim},
      {"image_hidden", c.items.image_hidden},
      {"d_img", c.items.d_img},
      {"d_text", c.items.d_text},
      {"text_encoder", "hash_bow"},
      {"hash_buckets", c.items.hash_buckets},
      {"text_feature_dim", c.items.text_feature_dim},
      {"text_projection_seed", c.items.text_projection_seed},
      {"text_source", to_string(c.items.text_source)},
      {"zero_init_image_output", c.items.zero_init_image_output},
      {"model_dim", c.encoder.model_dim},
      {"layers", c.encoder.layers},
      {"heads", c.encoder.heads},
      {"ff_hidden", c.encoder.ff_hidden},
      {"max_outfit_len", c.encoder.max_outfit_len},
      {"cp_head", c.cp_head},
      {"cir_head", c.cir_head},
      {"seed", c.seed},
  };
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  try {
    c.items.image = parse_image_backbone(j.at("image_encoder").get<std::string>());
    c.items.payload_dim = j.at("payload_dim").get<std::size_t>();
    c.items.image_hidden = j.at("image_hidden").get<std::size_t>();
    c.items.d_img = j.at("d_img").get<std::size_t>();
    c.items.d_text = j.at("d_text").get<std::size_t>();
    if (j.at("text_encoder").get<std::string>() != "hash_bow") {
      throw ConfigError("text_encoder must be hash_bow");
    }
    c.items.hash_buckets = j.at("hash_buckets").get<std::size_t>();
    c.items.text_feature_dim = j.at("text_feature_dim").get<std::size_t>();
    c.items.text_projection_seed = j.at("text_projection_seed").get<std::uint64_t>();
    c.items.text_source = parse_text_source(j.at("text_source").get<std::string>());
    c.items.zero_init_image_output = j.at("zero_init_image_output").get<bool>();
    c.encoder.model_dim = j.at("model_dim").get<std::size_t>();
    c.encoder.layers = j.at("layers").get<std::size_t>();
    c.encoder.heads = j.at("heads").get<std::size_t>();
    c.encoder.ff_hidden = j.at("ff_hidden").get<std::size_t>();
    c.encoder.max_outfit_len = j.at("max_outfit_len").get<std::size_t>();
    c.cp_head = j.at("cp_head").get<bool>();
    c.cir_head = j.at("cir_head").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

const char* to_string(TargetKind k) { return k == TargetKind::Category ? "category" : "free_text"; }

TargetKind parse_target_kind(const std::string& text) {
  if (text == "category") return TargetKind::Category;
  if (text == "free_text" || text == "text") return TargetKind::FreeText;
  throw InputError("target kind must be category or free_text, got '" + text + "'");
}

OutfitModel::OutfitModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const std::size_t d = config_.encoder.model_dim;
  item_encoder_ = std::make_unique<ItemEncoder>(config_.items, params_, rng);
  outfit_token_ =
      params_.add("trunk.outfit_token", nn::init_tensor(1, d, nn::Init::XavierUniform, rng));
  empty_image_ = params_.add("trunk.empty_image",
                             nn::init_tensor(1, config_.items.d_img, nn::Init::XavierUniform, rng));
  for (std::size_t l = 0; l < config_.encoder.layers; ++l) {
    blocks_.push_back(nn::TransformerBlock::create(params_, "trunk.layer" + std::to_string(l), d,
                                                   config_.encoder.heads,
                                                   config_.encoder.ff_hidden, rng));
  }
  final_norm_ = nn::LayerNorm::create(params_, "trunk.final_norm", d);
  if (config_.cp_head) {
    cp_fc1_ = nn::Linear::create(params_, "cp_head.fc1", d, d, rng);
    cp_fc2_ = nn::Linear::create(params_, "cp_head.fc2", d, 1, rng);
  }
  if (config_.cir_head) {
    cir_fc1_ = nn::Linear::create(params_, "cir_head.fc1", d, d, rng);
    cir_fc2_ = nn::Linear::create(params_, "cir_head.fc2", d, d, rng);
  }
}

nn::Var OutfitModel::encode_set(const nn::Var& token, const nn::Var& features,
                                const std::vector<bool>& valid, std::size_t min_valid) const {
  const std::size_t d = config_.encoder.model_dim;
  if (features.cols() != d) {
    throw DimensionError("feature rows have " + std::to_string(features.cols()) +
                         " columns, model_dim is " + std::to_string(d));
  }
  const std::size_t slots = features.rows();
  if (!valid.empty() && valid.size() != slots) {
    throw DimensionError("mask length " + std::to_string(valid.size()) + " differs from " +
                         std::to_string(slots) + " feature rows");
  }
  std::size_t real = valid.empty() ? slots : 0;
  for (bool v : valid) real += v ? 1 : 0;
  if (real < min_valid) {
    throw InputError("outfit has " + std::to_string(real) + " item(s); at least " +
                     std::to_string(min_valid) + " required");
  }
  if (slots > config_.encoder.max_outfit_len) {
    throw InputError("outfit has " + std::to_string(slots) + " slots; max_outfit_len is " +
                     std::to_string(config_.encoder.max_outfit_len));
  }

  nn::Tensor mask_row;
  const nn::Tensor* mask = nullptr;
  if (real != slots) {
    std::vector<bool> with_token;
    with_token.reserve(slots + 1);
    with_token.push_back(true);
    with_token.insert(with_token.end(), valid.begin(), valid.end());
    mask_row = nn::additive_key_mask(with_token);
    mask = &mask_row;
  }

  nn::Var x = nn::concat_rows({token, features});
  for (std::size_t l = 0; l + 1 < blocks_.size(); ++l) x = blocks_[l].forward(x, mask);

  // Only the token row is read out, so the last block computes that row alone.
  const nn::TransformerBlock& last = blocks_.back();
  const nn::Var h = last.norm1.forward(x);
  const nn::Var attended = nn::add(nn::slice_rows(x, 0, 1),
                                   last.attention.forward(nn::slice_rows(h, 0, 1), h, mask));
  const nn::Var out = nn::add(
      attended, last.ff_out.forward(nn::gelu(last.ff_in.forward(last.norm2.forward(attended)))));
  return final_norm_.forward(out);
}

nn::Var OutfitModel::cp_forward(const nn::Var& features, const std::vector<bool>& valid) const {
  if (!config_.cp_head) throw ConfigError("model has no compatibility head");
  cp_calls_.fetch_add(1);
  const nn::Var state = encode_set(outfit_token_, features, valid, 2);
  return nn::sigmoid(cp_fc2_.forward(nn::gelu(cp_fc1_.forward(state))));
}

nn::Var OutfitModel::target_token(const TargetSpec& spec) const {
  if (spec.text.empty()) throw InputError("target specification text is empty");
  return nn::concat_cols({empty_image_, item_encoder_->encode_text(spec.text)});
}

nn::Var OutfitModel::cir_forward(const nn::Var& features, const TargetSpec& spec,
                                 const std::vector<bool>& valid) const {
  if (!config_.cir_head) throw ConfigError("model has no retrieval head");
  cir_calls_.fetch_add(1);
  const nn::Var state = encode_set(target_token(spec), features, valid, 1);
  return cir_fc2_.forward(nn::gelu(cir_fc1_.forward(state)));
}

}  // namespace outfit
