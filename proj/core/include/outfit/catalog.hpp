#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace outfit {

// One catalog entry. `payload` is whatever the configured image backbone
// consumes: a raw feature vector for the MLP backbone, or a 32×32 grayscale
// raster (row-major, 1024 values) for the CNN backbone.
struct Item {
  std::string item_id;
  std::vector<double> payload;
  std::string description;
  std::string fine_category;
  std::string high_category;

  bool operator==(const Item&) const = default;
};

// An unordered set of catalog items. Member order carries no meaning.
struct Outfit {
  std::string outfit_id;
  std::vector<std::string> items;
  std::optional<int> label;

  bool operator==(const Outfit&) const = default;
};

// Item table with category lookups. The fine -> high hierarchy must be a
// function and item ids must be unique; add() enforces both.
class Catalog {
 public:
  void add(Item item);

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const std::vector<Item>& items() const { return items_; }
  const Item& operator[](std::size_t i) const { return items_[i]; }

  bool contains(std::string_view id) const;
  const Item* find(std::string_view id) const;
  // Throws InputError naming the id when absent.
  const Item& at(std::string_view id) const;
  std::size_t index_of(std::string_view id) const;

  const std::vector<std::size_t>& items_in_fine(const std::string& fine) const;
  const std::vector<std::size_t>& items_in_high(const std::string& high) const;
  std::string high_of(const std::string& fine) const;
  std::vector<std::string> fine_categories() const;
  std::vector<std::string> high_categories() const;
  const std::map<std::string, std::string>& hierarchy() const { return hierarchy_; }

  bool operator==(const Catalog& other) const { return items_ == other.items_; }

 private:
  std::vector<Item> items_;
  std::unordered_map<std::string, std::size_t> index_;
  std::map<std::string, std::vector<std::size_t>> by_fine_;
  std::map<std::string, std::vector<std::size_t>> by_high_;
  std::map<std::string, std::string> hierarchy_;
};

}  // namespace outfit
