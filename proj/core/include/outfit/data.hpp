#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "outfit/catalog.hpp"

namespace outfit {

// Fill-in-the-blank question: a partial outfit and four candidates, exactly
// one of which (`answer`) completes it.
struct FitbQuestion {
  std::string outfit_id;
  std::vector<std::string> partial;
  std::array<std::string, 4> candidates;
  std::size_t answer = 0;
  std::size_t blank_position = 0;

  bool operator==(const FitbQuestion&) const = default;
};

struct DatasetSplit {
  Catalog catalog;
  std::vector<Outfit> train;
  std::vector<Outfit> valid;
  std::vector<Outfit> test;
  std::vector<FitbQuestion> fitb_valid;
  std::vector<FitbQuestion> fitb_test;
  // Labelled compatibility sets (positives and negatives).
  std::vector<Outfit> compat_valid;
  std::vector<Outfit> compat_test;
  bool disjoint = false;
  // Planted style per item; only synthetic datasets carry it.
  std::map<std::string, int> latent_style;

  // Checks outfit invariants and split disjointness; throws InputError.
  void validate() const;
  bool operator==(const DatasetSplit& other) const;
};

// ---- Polyvore-format loading ----------------------------------------------
//
// Layout under `root`:
//   polyvore_item_metadata.json           {item_id: {description, title,
//                                           category_id, semantic_category, ...}}
//   categories.csv                        fine_id,fine_name,high_name
//   {disjoint|nondisjoint}/{split}.json   [{set_id, items: [{item_id, index}]}]
//   {variant}/fill_in_blank_{split}.json  [{question: [ref], answers: [4 refs],
//                                           blank_position}]
//   {variant}/compatibility_{split}.txt   "label ref ref ..." per line
//   images/{item_id}.jpg                  read only with ImageSource::Jpeg
//
// A ref is "{set_id}_{index}" (1-based position in that outfit's list) or a
// bare item id. The correct FITB answer is the one drawn from the question's
// own outfit.

enum class ImageSource {
  Metadata,  // "payload" array in the metadata, zeros when absent
  Jpeg,      // images/{item_id}.jpg -> 32×32 grayscale in [0, 1]
};

struct LoadOptions {
  std::size_t max_outfit_len = 8;
  std::uint64_t seed = 0;  // truncation shuffle
  ImageSource images = ImageSource::Metadata;
  std::size_t payload_dim = 32;  // zero payload length when no payload is stored
};

std::string variant_dir(bool disjoint);

DatasetSplit load_polyvore(const std::filesystem::path& root, bool disjoint,
                           const LoadOptions& options = {});

// Reads one `{split}.json` outfit list against an already loaded catalog.
std::vector<Outfit> load_outfit_list(const std::filesystem::path& root,
                                     const std::string& split_name, bool disjoint,
                                     const Catalog& catalog, const LoadOptions& options = {});

// Writes the split in the layout above. Output bytes depend only on content.
void save_polyvore(const DatasetSplit& split, const std::filesystem::path& root);

// ---- planted-rule synthetic data ------------------------------------------

struct SyntheticSpec {
  std::size_t num_styles = 4;
  std::size_t num_high_categories = 3;
  std::size_t fine_per_high = 4;
  std::size_t items_per_fine = 200;
  std::size_t min_outfit_len = 3;
  std::size_t max_outfit_len = 5;
  std::size_t payload_dim = 32;
  double noise_sigma = 0.1;
  std::size_t train_outfits = 1000;
  std::size_t valid_outfits = 200;
  std::size_t test_outfits = 400;
  bool disjoint = false;

  void validate() const;
};

// Each item carries a latent style; its payload is
// one-hot(style) ++ one-hot(fine category) ++ zeros, plus N(0, sigma^2) noise,
// and its description is "<fine name> <style word>". Compatible outfits take
// every item from one style across distinct fine categories. Valid/test
// splits come with FITB questions (distractors share the answer's fine
// category but not its style) and 1:1 labelled compatibility sets.
DatasetSplit generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Planted rule: every member shares one style. Requires latent styles.
bool planted_compatible(const DatasetSplit& split, const std::vector<std::string>& items);

}  // namespace outfit
