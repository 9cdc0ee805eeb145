#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "outfit/catalog.hpp"
#include "outfit/nn/layers.hpp"
#include "outfit/random.hpp"

namespace outfit {

enum class ImageBackbone { Mlp, Cnn };
enum class TextSource { Description, Category };

const char* to_string(ImageBackbone b);
const char* to_string(TextSource s);
ImageBackbone parse_image_backbone(const std::string& text);
TextSource parse_text_source(const std::string& text);

struct ItemEncoderConfig {
  ImageBackbone image = ImageBackbone::Mlp;
  std::size_t payload_dim = 32;  // must be 1024 (32×32) for the CNN
  std::size_t image_hidden = 128;
  std::size_t d_img = 64;
  std::size_t d_text = 64;
  std::size_t hash_buckets = 4096;
  std::size_t text_feature_dim = 128;
  std::uint64_t text_projection_seed = 0x7e47f00dULL;
  TextSource text_source = TextSource::Description;
  bool zero_init_image_output = false;

  void validate() const;
  bool operator==(const ItemEncoderConfig&) const = default;
};

// Lowercase, drop punctuation, collapse runs of whitespace, trim.
std::string normalize_text(std::string_view text);
std::vector<std::string> tokenize(std::string_view text);

// Frozen text featurizer: hashed bag of words through a fixed random
// projection. Bucket 0 is reserved for the empty string.
class HashBowFeaturizer {
 public:
  HashBowFeaturizer(std::size_t buckets, std::size_t dim, std::uint64_t seed);

  std::size_t bucket_of(std::string_view token) const;
  // Features of the normalised text, [1 × dim].
  nn::Tensor features(std::string_view text) const;
  std::size_t dim() const { return dim_; }

 private:
  std::size_t buckets_;
  std::size_t dim_;
  std::vector<double> projection_;  // buckets × dim
};

// u_i = E_img(payload) ++ E_text(text), image part first.
class ItemEncoder {
 public:
  ItemEncoder(const ItemEncoderConfig& config, nn::ParameterStore& store, Rng& rng);

  const ItemEncoderConfig& config() const { return config_; }
  std::size_t output_dim() const { return config_.d_img + config_.d_text; }

  // [1 × d_img]
  nn::Var encode_image(std::span<const double> payload) const;
  // [1 × d_text]
  nn::Var encode_text(std::string_view text) const;
  // [1 × (d_img + d_text)]
  nn::Var encode_item(const Item& item) const;
  // One row per item, [n × (d_img + d_text)].
  nn::Var encode_items(std::span<const Item* const> items) const;
  // Trainable text head applied to a batch of frozen features.
  nn::Var text_head(const nn::Tensor& features) const;

  // Text fed to E_text for an item under the configured text source.
  std::string item_text(const Item& item) const;
  const HashBowFeaturizer& featurizer() const { return featurizer_; }

 private:
  nn::Var image_batch(std::span<const Item* const> items) const;
  void check_payload(std::span<const double> payload) const;

  ItemEncoderConfig config_;
  HashBowFeaturizer featurizer_;
  nn::Linear image_fc1_;
  nn::Linear image_fc2_;
  nn::Var conv1_w_, conv1_b_, conv2_w_, conv2_b_;
  nn::Linear image_cnn_out_;
  nn::Linear text_head_;
};

}  // namespace outfit
