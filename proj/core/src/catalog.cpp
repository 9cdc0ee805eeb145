#include "outfit/catalog.hpp"

#include "outfit/errors.hpp"

namespace outfit {

namespace {
const std::vector<std::size_t> kEmpty;
}

void Catalog::add(Item item) {
  if (item.item_id.empty()) throw InputError("catalog: empty item id");
  if (index_.count(item.item_id)) throw InputError("catalog: duplicate item id " + item.item_id);
  auto [it, inserted] = hierarchy_.emplace(item.fine_category, item.high_category);
  if (!inserted && it->second != item.high_category) {
    throw InputError("catalog: fine category '" + item.fine_category + "' maps to both '" +
                     it->second + "' and '" + item.high_category + "'");
  }
  const std::size_t pos = items_.size();
  index_.emplace(item.item_id, pos);
  by_fine_[item.fine_category].push_back(pos);
  by_high_[item.high_category].push_back(pos);
  items_.push_back(std::move(item));
}

bool Catalog::contains(std::string_view id) const { return index_.count(std::string(id)) != 0; }

const Item* Catalog::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &items_[it->second];
}

const Item& Catalog::at(std::string_view id) const {
  if (const Item* item = find(id)) return *item;
  throw InputError("unknown item id '" + std::string(id) + "'");
}

std::size_t Catalog::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) throw InputError("unknown item id '" + std::string(id) + "'");
  return it->second;
}

const std::vector<std::size_t>& Catalog::items_in_fine(const std::string& fine) const {
  auto it = by_fine_.find(fine);
  return it == by_fine_.end() ? kEmpty : it->second;
}

const std::vector<std::size_t>& Catalog::items_in_high(const std::string& high) const {
  auto it = by_high_.find(high);
  return it == by_high_.end() ? kEmpty : it->second;
}

std::string Catalog::high_of(const std::string& fine) const {
  auto it = hierarchy_.find(fine);
  if (it == hierarchy_.end()) throw InputError("unknown fine category '" + fine + "'");
  return it->second;
}

std::vector<std::string> Catalog::fine_categories() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : by_fine_) out.push_back(name);
  return out;
}

std::vector<std::string> Catalog::high_categories() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : by_high_) out.push_back(name);
  return out;
}

}  // namespace outfit
