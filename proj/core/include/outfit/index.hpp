#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "outfit/catalog.hpp"
#include "outfit/distance.hpp"
#include "outfit/outfit_encoder.hpp"

namespace outfit {

enum class CategoryLevel { Fine, High };

struct CategoryFilter {
  CategoryLevel level = CategoryLevel::Fine;
  std::string name;
};

struct Neighbor {
  std::string item_id;
  double distance = 0.0;
  std::string fine_category;
  std::string high_category;
  bool operator==(const Neighbor&) const = default;
};

enum class QueryStatus { Ok, EmptyPool };
const char* to_string(QueryStatus s);

struct KnnResult {
  QueryStatus status = QueryStatus::Ok;
  std::vector<Neighbor> neighbors;
};

// Copyable atomic counter.
struct Counter {
  std::atomic<std::uint64_t> value{0};
  Counter() = default;
  Counter(const Counter& o) : value(o.value.load()) {}
  Counter& operator=(const Counter& o) {
    value.store(o.value.load());
    return *this;
  }
  void bump() { value.fetch_add(1, std::memory_order_relaxed); }
  std::uint64_t load() const { return value.load(); }
};

// One embedding per catalog item plus its category metadata. Immutable after
// construction; queries are safe from any number of threads.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;
  EmbeddingIndex(std::uint64_t model_fingerprint, std::size_t dim);

  // Appends one entry; ids must be unique.
  void add(const std::string& item_id, std::span<const double> embedding,
           const std::string& fine_category, const std::string& high_category);

  std::uint64_t model_fingerprint() const { return fingerprint_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::string& id(std::size_t row) const { return ids_[row]; }
  const std::string& fine_of(std::size_t row) const { return categories_[fine_[row]]; }
  const std::string& high_of(std::size_t row) const { return categories_[high_[row]]; }
  std::span<const double> vector(std::size_t row) const {
    return {embeddings_.data() + row * dim_, dim_};
  }
  std::optional<std::size_t> row_of(const std::string& item_id) const;
  const std::vector<std::string>& category_table() const { return categories_; }
  const std::vector<double>& embeddings() const { return embeddings_; }

  bool has_fine(const std::string& name) const;
  bool has_high(const std::string& name) const;
  // Rows passing the filter, ascending; every row without a filter.
  std::vector<std::size_t> pool(const std::optional<CategoryFilter>& filter) const;

  // Exact k nearest rows by Euclidean distance among the filtered pool minus
  // `exclude`, ascending by (distance, item id).
  KnnResult knn_query(std::span<const double> target, std::size_t k,
                      const std::optional<CategoryFilter>& filter = std::nullopt,
                      const std::unordered_set<std::string>& exclude = {}) const;

  std::uint64_t query_count() const { return queries_.load(); }

  // Byte counts of the on-disk form. The embedding block is exactly n·d·8.
  std::size_t header_bytes() const;
  std::size_t embedding_bytes() const { return embeddings_.size() * sizeof(double); }
  std::size_t file_bytes() const { return header_bytes() + embedding_bytes(); }

  bool operator==(const EmbeddingIndex& o) const;

 private:
  std::uint32_t category_slot(const std::string& name);

  std::uint64_t fingerprint_ = 0;
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<std::uint32_t> fine_;
  std::vector<std::uint32_t> high_;
  std::vector<std::string> categories_;
  std::vector<double> embeddings_;
  std::unordered_map<std::string, std::size_t> row_by_id_;
  std::unordered_map<std::string, std::uint32_t> slot_by_category_;
  std::unordered_map<std::uint32_t, std::vector<std::size_t>> rows_by_fine_;
  std::unordered_map<std::uint32_t, std::vector<std::size_t>> rows_by_high_;
  mutable Counter queries_;

  friend EmbeddingIndex load_index(const std::filesystem::path& path);
};

// Encodes every catalog item once with the model's item encoders.
EmbeddingIndex build_index(const Catalog& catalog, const OutfitModel& model);

// Layout, little endian:
//   "OTFINDX\0" u32 version u64 fingerprint u64 d u64 n u64 category count
//   per category: u32 len + bytes
//   per item: u32 len + id bytes, u32 fine slot, u32 high slot
//   n·d f64 embedding block
void save_index(const EmbeddingIndex& index, const std::filesystem::path& path);
EmbeddingIndex load_index(const std::filesystem::path& path);

// Throws ConfigError when the index was built by a different model.
void require_fingerprint(const EmbeddingIndex& index, std::uint64_t model_fingerprint);

// Interprets a category target: a fine category name, else a high-level one.
// nullopt for free-text targets.
std::optional<CategoryFilter> filter_for(const EmbeddingIndex& index, const TargetSpec& spec);

// Complementary item retrieval for a partial outfit of indexed items: one
// cir_forward call and one KNN query whatever the outfit length. The
// partial items themselves are never returned.
KnnResult complete_outfit(const OutfitModel& model, const EmbeddingIndex& index,
                          std::span<const std::string> partial, const TargetSpec& spec,
                          std::size_t k);

// Size of a subspace-style index that stores one embedding per item per
// category, n·C·d·8 bytes, against the single-embedding n·d·8.
struct IndexSizeComparison {
  std::size_t items = 0;
  std::size_t categories = 0;
  std::size_t dim = 0;
  std::size_t single_bytes = 0;
  std::size_t subspace_bytes = 0;
  double ratio = 0.0;
};
IndexSizeComparison compare_index_sizes(std::size_t items, std::size_t categories, std::size_t dim);

}  // namespace outfit
