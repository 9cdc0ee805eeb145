#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "outfit/catalog.hpp"
#include "outfit/data.hpp"
#include "outfit/outfit_encoder.hpp"
#include "support/oracles.hpp"

namespace outfit::testing {

inline ModelConfig tiny_model(std::size_t payload_dim = 6, std::uint64_t seed = 3) {
  ModelConfig c;
  c.items.payload_dim = payload_dim;
  c.items.image_hidden = 8;
  c.items.d_img = 4;
  c.items.d_text = 4;
  c.items.hash_buckets = 64;
  c.items.text_feature_dim = 8;
  c.encoder.model_dim = 8;
  c.encoder.layers = 2;
  c.encoder.heads = 2;
  c.encoder.ff_hidden = 12;
  c.encoder.max_outfit_len = 8;
  c.seed = seed;
  return c;
}

inline ModelConfig tiny_cir_model(std::size_t payload_dim = 6, std::uint64_t seed = 3) {
  ModelConfig c = tiny_model(payload_dim, seed);
  c.cp_head = false;
  c.cir_head = true;
  return c;
}

// Two high categories with two fine categories each, `per_fine` random items
// in every fine category.
inline Catalog small_catalog(std::size_t per_fine = 6, std::size_t payload_dim = 6, std::uint64_t seed = 1) {
  oracle::Gen gen(seed);
  const std::vector<std::pair<std::string, std::string>> fines = {
      {"tee", "tops"}, {"blouse", "tops"}, {"sneaker", "shoes"}, {"boot", "shoes"}};
  const std::vector<std::string> words = {"red", "blue", "linen", "wool", "soft", "bold"};
  Catalog catalog;
  for (const auto& [fine, high] : fines) {
    for (std::size_t i = 0; i < per_fine; ++i) {
      Item item;
      item.item_id = fine + "-" + std::to_string(i);
      item.payload = gen.vec(payload_dim);
      item.description = words[gen.index(words.size())] + " " + fine;
      item.fine_category = fine;
      item.high_category = high;
      catalog.add(item);
    }
  }
  return catalog;
}

inline std::vector<const Item*> item_ptrs(const Catalog& catalog, const std::vector<std::string>& ids) {
  std::vector<const Item*> out;
  for (const auto& id : ids) out.push_back(&catalog.at(id));
  return out;
}

inline SyntheticSpec small_synthetic_spec() {
  SyntheticSpec s;
  s.items_per_fine = 24;
  s.train_outfits = 60;
  s.valid_outfits = 20;
  s.test_outfits = 20;
  return s;
}

// Fresh, empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() /
            ("outfit-test-" + name + "-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace outfit::testing
