#include "outfit/item_encoders.hpp"

#include <cctype>
#include <cmath>
#include <random>

#include "outfit/errors.hpp"
#include "outfit/image.hpp"

namespace outfit {

const char* to_string(ImageBackbone b) { return b == ImageBackbone::Mlp ? "mlp" : "cnn"; }
const char* to_string(TextSource s) { return s == TextSource::Description ? "description" : "category"; }

ImageBackbone parse_image_backbone(const std::string& text) {
  if (text == "mlp") return ImageBackbone::Mlp;
  if (text == "cnn") return ImageBackbone::Cnn;
  throw ConfigError("image_encoder must be mlp or cnn, got '" + text + "'");
}

TextSource parse_text_source(const std::string& text) {
  if (text == "description") return TextSource::Description;
  if (text == "category") return TextSource::Category;
  throw ConfigError("text_source must be description or category, got '" + text + "'");
}

void ItemEncoderConfig::validate() const {
  if (d_img == 0 || d_text == 0) throw ConfigError("item encoder: d_img and d_text must be positive");
  if (payload_dim == 0) throw ConfigError("item encoder: payload_dim must be positive");
  if (hash_buckets < 2 || text_feature_dim == 0) {
    throw ConfigError("item encoder: hash_buckets must be >= 2 and text_feature_dim positive");
  }
  if (image == ImageBackbone::Cnn && payload_dim != kRasterSide * kRasterSide) {
    throw ConfigError("item encoder: the cnn backbone needs payload_dim = 1024 (32x32 raster)");
  }
}

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (std::ispunct(c)) continue;
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  const std::string norm = normalize_text(text);
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start < norm.size()) {
    std::size_t end = norm.find(' ', start);
    if (end == std::string::npos) end = norm.size();
    tokens.push_back(norm.substr(start, end - start));
    start = end + 1;
  }
  return tokens;
}

// ---- HashBowFeaturizer ----------------------------------------------------

HashBowFeaturizer::HashBowFeaturizer(std::size_t buckets, std::size_t dim, std::uint64_t seed)
    : buckets_(buckets), dim_(dim), projection_(buckets * dim) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  for (auto& v : projection_) v = normal(rng);
}

std::size_t HashBowFeaturizer::bucket_of(std::string_view token) const {
  // FNV-1a, 64 bit
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : token) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return 1 + static_cast<std::size_t>(h % (buckets_ - 1));
}

nn::Tensor HashBowFeaturizer::features(std::string_view text) const {
  const auto tokens = tokenize(text);
  nn::Tensor out = nn::Tensor::zeros(1, dim_);
  if (tokens.empty()) {
    for (std::size_t j = 0; j < dim_; ++j) out[j] = projection_[j];
    return out;
  }
  for (const auto& tok : tokens) {
    const double* row = &projection_[bucket_of(tok) * dim_];
    for (std::size_t j = 0; j < dim_; ++j) out[j] += row[j];
  }
  const double norm = 1.0 / std::sqrt(static_cast<double>(tokens.size()));
  for (auto& v : out.storage()) v *= norm;
  return out;
}

// ---- ItemEncoder ----------------------------------------------------------

ItemEncoder::ItemEncoder(const ItemEncoderConfig& config, nn::ParameterStore& store, Rng& rng)
    : config_(config),
      featurizer_(config.hash_buckets, config.text_feature_dim, config.text_projection_seed) {
  config_.validate();
  const nn::Init out_init = config.zero_init_image_output ? nn::Init::Zero : nn::Init::XavierUniform;
  if (config.image == ImageBackbone::Mlp) {
    image_fc1_ = nn::Linear::create(store, "image.fc1", config.payload_dim, config.image_hidden, rng);
    image_fc2_ = nn::Linear::create(store, "image.fc2", config.image_hidden, config.d_img, rng, out_init);
  } else {
    conv1_w_ = store.add("image.conv1.weight", nn::init_tensor(8, 9, nn::Init::XavierUniform, rng));
    conv1_b_ = store.add("image.conv1.bias", nn::Tensor::zeros(1, 8));
    conv2_w_ = store.add("image.conv2.weight", nn::init_tensor(16, 8 * 9, nn::Init::XavierUniform, rng));
    conv2_b_ = store.add("image.conv2.bias", nn::Tensor::zeros(1, 16));
    image_cnn_out_ = nn::Linear::create(store, "image.fc_out", 16 * 8 * 8, config.d_img, rng, out_init);
  }
  text_head_ = nn::Linear::create(store, "text.head", config.text_feature_dim, config.d_text, rng);
}

void ItemEncoder::check_payload(std::span<const double> payload) const {
  if (payload.size() != config_.payload_dim) {
    throw InputError("image payload has " + std::to_string(payload.size()) +
                     " values, backbone expects " + std::to_string(config_.payload_dim));
  }
  for (double v : payload) {
    if (!std::isfinite(v)) throw InputError("image payload contains a non-finite value");
  }
}

nn::Var ItemEncoder::encode_image(std::span<const double> payload) const {
  check_payload(payload);
  const nn::Tensor row({1, payload.size()}, std::vector<double>(payload.begin(), payload.end()));
  if (config_.image == ImageBackbone::Mlp) {
    return image_fc2_.forward(nn::gelu(image_fc1_.forward(nn::Var::constant(row))));
  }
  const nn::Var x = nn::Var::constant(row);
  nn::Var h = nn::avg_pool2(nn::gelu(nn::conv2d(x, conv1_w_, conv1_b_, 32, 32, 3)), 32, 32);
  h = nn::avg_pool2(nn::gelu(nn::conv2d(h, conv2_w_, conv2_b_, 16, 16, 3)), 16, 16);
  return image_cnn_out_.forward(nn::reshape(h, {1, 16 * 8 * 8}));
}

nn::Var ItemEncoder::image_batch(std::span<const Item* const> items) const {
  if (config_.image == ImageBackbone::Cnn) {
    std::vector<nn::Var> rows;
    rows.reserve(items.size());
    for (const Item* item : items) rows.push_back(encode_image(item->payload));
    return nn::concat_rows(rows);
  }
  nn::Tensor batch = nn::Tensor::zeros(items.size(), config_.payload_dim);
  for (std::size_t i = 0; i < items.size(); ++i) {
    check_payload(items[i]->payload);
    std::copy(items[i]->payload.begin(), items[i]->payload.end(), &batch.at(i, 0));
  }
  return image_fc2_.forward(nn::gelu(image_fc1_.forward(nn::Var::constant(std::move(batch)))));
}

nn::Var ItemEncoder::text_head(const nn::Tensor& features) const {
  return text_head_.forward(nn::Var::constant(features));
}

nn::Var ItemEncoder::encode_text(std::string_view text) const {
  return text_head(featurizer_.features(text));
}

std::string ItemEncoder::item_text(const Item& item) const {
  return config_.text_source == TextSource::Description ? item.description : item.fine_category;
}

nn::Var ItemEncoder::encode_item(const Item& item) const {
  const Item* one[] = {&item};
  return encode_items(one);
}

nn::Var ItemEncoder::encode_items(std::span<const Item* const> items) const {
  if (items.empty()) throw InputError("encode_items: no items");
  nn::Tensor text = nn::Tensor::zeros(items.size(), featurizer_.dim());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const nn::Tensor f = featurizer_.features(item_text(*items[i]));
    std::copy(f.storage().begin(), f.storage().end(), &text.at(i, 0));
  }
  return nn::concat_cols({image_batch(items), text_head(text)});
}

}  // namespace outfit
