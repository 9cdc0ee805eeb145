#include "outfit/index.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <queue>
#include <sstream>

#include "outfit/checkpoint.hpp"
#include "outfit/errors.hpp"

namespace outfit {
namespace {

constexpr char kMagic[8] = {'O', 'T', 'F', 'I', 'N', 'D', 'X', '\0'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kEncodeChunk = 256;

static_assert(std::endian::native == std::endian::little, "index I/O assumes little endian");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Cursor {
 public:
  Cursor(const std::string& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}
  template <typename T>
  T get() {
    T v;
    take(&v, sizeof(T));
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void take(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("index file '" + path_ + "' is truncated");
  }
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

struct Candidate {
  double distance;
  const std::string* id;
  std::size_t row;
};

bool closer(const Candidate& a, const Candidate& b) {
  if (a.distance != b.distance) return a.distance < b.distance;
  return *a.id < *b.id;
}

}  // namespace

const char* to_string(QueryStatus s) { return s == QueryStatus::Ok ? "ok" : "empty_pool"; }

EmbeddingIndex::EmbeddingIndex(std::uint64_t model_fingerprint, std::size_t dim)
    : fingerprint_(model_fingerprint), dim_(dim) {
  if (dim == 0) throw ConfigError("index dimension must be positive");
}

std::uint32_t EmbeddingIndex::category_slot(const std::string& name) {
  auto [it, inserted] =
      slot_by_category_.try_emplace(name, static_cast<std::uint32_t>(categories_.size()));
  if (inserted) categories_.push_back(name);
  return it->second;
}

void EmbeddingIndex::add(const std::string& item_id, std::span<const double> embedding,
                         const std::string& fine_category, const std::string& high_category) {
  if (embedding.size() != dim_) {
    throw DimensionError("embedding for '" + item_id + "' has " + std::to_string(embedding.size()) +
                         " values, index dimension is " + std::to_string(dim_));
  }
  if (row_by_id_.count(item_id)) throw InputError("duplicate index item id '" + item_id + "'");
  const std::size_t row = ids_.size();
  ids_.push_back(item_id);
  row_by_id_.emplace(item_id, row);
  const auto f = category_slot(fine_category);
  const auto h = category_slot(high_category);
  fine_.push_back(f);
  high_.push_back(h);
  rows_by_fine_[f].push_back(row);
  rows_by_high_[h].push_back(row);
  embeddings_.insert(embeddings_.end(), embedding.begin(), embedding.end());
}

std::optional<std::size_t> EmbeddingIndex::row_of(const std::string& item_id) const {
  auto it = row_by_id_.find(item_id);
  if (it == row_by_id_.end()) return std::nullopt;
  return it->second;
}

bool EmbeddingIndex::has_fine(const std::string& name) const {
  auto it = slot_by_category_.find(name);
  return it != slot_by_category_.end() && rows_by_fine_.count(it->second);
}

bool EmbeddingIndex::has_high(const std::string& name) const {
  auto it = slot_by_category_.find(name);
  return it != slot_by_category_.end() && rows_by_high_.count(it->second);
}

std::vector<std::size_t> EmbeddingIndex::pool(const std::optional<CategoryFilter>& filter) const {
  if (!filter) {
    std::vector<std::size_t> all(ids_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  auto slot = slot_by_category_.find(filter->name);
  if (slot == slot_by_category_.end()) return {};
  const auto& map = filter->level == CategoryLevel::Fine ? rows_by_fine_ : rows_by_high_;
  auto it = map.find(slot->second);
  return it == map.end() ? std::vector<std::size_t>{} : it->second;
}

KnnResult EmbeddingIndex::knn_query(std::span<const double> target, std::size_t k,
                                    const std::optional<CategoryFilter>& filter,
                                    const std::unordered_set<std::string>& exclude) const {
  if (k == 0) throw InputError("k must be at least 1");
  if (target.size() != dim_) {
    throw DimensionError("query has " + std::to_string(target.size()) +
                         " values, index dimension is " + std::to_string(dim_));
  }
  queries_.bump();
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(&closer)> heap(&closer);
  std::size_t eligible = 0;
  for (std::size_t row : pool(filter)) {
    if (!exclude.empty() && exclude.count(ids_[row])) continue;
    ++eligible;
    const Candidate c{distance(target, vector(row)), &ids_[row], row};
    if (heap.size() < k) {
      heap.push(c);
    } else if (closer(c, heap.top())) {
      heap.pop();
      heap.push(c);
    }
  }
  KnnResult result;
  if (eligible == 0) {
    result.status = QueryStatus::EmptyPool;
    return result;
  }
  result.neighbors.resize(heap.size());
  for (std::size_t i = heap.size(); i-- > 0;) {
    const Candidate& c = heap.top();
    result.neighbors[i] = {*c.id, c.distance, fine_of(c.row), high_of(c.row)};
    heap.pop();
  }
  return result;
}

std::size_t EmbeddingIndex::header_bytes() const {
  std::size_t n = sizeof kMagic + 4 + 8 * 4;
  for (const auto& c : categories_) n += 4 + c.size();
  for (const auto& id : ids_) n += 4 + id.size() + 8;
  return n;
}

bool EmbeddingIndex::operator==(const EmbeddingIndex& o) const {
  return fingerprint_ == o.fingerprint_ && dim_ == o.dim_ && ids_ == o.ids_ && fine_ == o.fine_ &&
         high_ == o.high_ && categories_ == o.categories_ && embeddings_ == o.embeddings_;
}

EmbeddingIndex build_index(const Catalog& catalog, const OutfitModel& model) {
  nn::NoGradGuard no_grad;
  EmbeddingIndex index(fingerprint(model), model.config().encoder.model_dim);
  const auto& items = catalog.items();
  for (std::size_t begin = 0; begin < items.size(); begin += kEncodeChunk) {
    const std::size_t end = std::min(items.size(), begin + kEncodeChunk);
    std::vector<const Item*> chunk;
    for (std::size_t i = begin; i < end; ++i) chunk.push_back(&items[i]);
    const nn::Var features = model.encode_items(chunk);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      index.add(chunk[i]->item_id, features.value().row_span(i), chunk[i]->fine_category,
                chunk[i]->high_category);
    }
  }
  return index;
}

void save_index(const EmbeddingIndex& index, const std::filesystem::path& path) {
  std::string out;
  out.reserve(index.file_bytes());
  out.append(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, index.model_fingerprint());
  put<std::uint64_t>(out, index.dim());
  put<std::uint64_t>(out, index.size());
  put<std::uint64_t>(out, index.category_table().size());
  for (const auto& c : index.category_table()) put_string(out, c);
  std::unordered_map<std::string, std::uint32_t> slot;
  for (std::size_t i = 0; i < index.category_table().size(); ++i) {
    slot.emplace(index.category_table()[i], static_cast<std::uint32_t>(i));
  }
  for (std::size_t row = 0; row < index.size(); ++row) {
    put_string(out, index.id(row));
    put<std::uint32_t>(out, slot.at(index.fine_of(row)));
    put<std::uint32_t>(out, slot.at(index.high_of(row)));
  }
  out.append(reinterpret_cast<const char*>(index.embeddings().data()), index.embedding_bytes());

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("cannot write index '" + path.string() + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw InputError("failed writing index '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

EmbeddingIndex load_index(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("index not found: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  Cursor c(bytes, path.string());
  char magic[8];
  c.take(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw FormatError("'" + path.string() + "' is not an index file");
  }
  if (const auto version = c.get<std::uint32_t>(); version != kVersion) {
    throw FormatError("index '" + path.string() + "' has unsupported version " +
                      std::to_string(version));
  }
  const auto fp = c.get<std::uint64_t>();
  const auto dim = c.get<std::uint64_t>();
  const auto n = c.get<std::uint64_t>();
  const auto num_categories = c.get<std::uint64_t>();
  if (dim == 0 || n > bytes.size() || num_categories > bytes.size()) {
    throw FormatError("index '" + path.string() + "' has an invalid header");
  }
  std::vector<std::string> categories(num_categories);
  for (auto& name : categories) name = c.get_string();
  struct Entry {
    std::string id;
    std::uint32_t fine, high;
  };
  std::vector<Entry> entries(n);
  for (auto& e : entries) {
    e.id = c.get_string();
    e.fine = c.get<std::uint32_t>();
    e.high = c.get<std::uint32_t>();
    if (e.fine >= num_categories || e.high >= num_categories) {
      throw FormatError("index '" + path.string() + "' has a bad category slot for '" + e.id + "'");
    }
  }
  EmbeddingIndex index(fp, dim);
  // Register categories in table order so slot numbers survive the round trip.
  for (const auto& name : categories) index.category_slot(name);
  std::vector<double> row(dim);
  for (const auto& e : entries) {
    c.take(row.data(), dim * sizeof(double));
    index.add(e.id, row, categories[e.fine], categories[e.high]);
  }
  if (!c.done()) throw FormatError("index '" + path.string() + "' has trailing bytes");
  return index;
}

void require_fingerprint(const EmbeddingIndex& index, std::uint64_t model_fingerprint) {
  if (index.model_fingerprint() != model_fingerprint) {
    throw ConfigError("index fingerprint " + hex64(index.model_fingerprint()) +
                      " does not match model fingerprint " + hex64(model_fingerprint) +
                      "; rebuild the index");
  }
}

std::optional<CategoryFilter> filter_for(const EmbeddingIndex& index, const TargetSpec& spec) {
  if (spec.kind != TargetKind::Category) return std::nullopt;
  if (!index.has_fine(spec.text) && index.has_high(spec.text)) {
    return CategoryFilter{CategoryLevel::High, spec.text};
  }
  return CategoryFilter{CategoryLevel::Fine, spec.text};
}

KnnResult complete_outfit(const OutfitModel& model, const EmbeddingIndex& index,
                          std::span<const std::string> partial, const TargetSpec& spec,
                          std::size_t k) {
  if (partial.empty()) throw InputError("partial outfit is empty");
  if (index.dim() != model.config().encoder.model_dim) {
    throw DimensionError("index dimension " + std::to_string(index.dim()) +
                         " differs from model_dim " +
                         std::to_string(model.config().encoder.model_dim));
  }
  nn::NoGradGuard no_grad;
  nn::Tensor features = nn::Tensor::zeros(partial.size(), index.dim());
  std::unordered_set<std::string> exclude;
  for (std::size_t i = 0; i < partial.size(); ++i) {
    const auto row = index.row_of(partial[i]);
    if (!row) throw InputError("unknown item id '" + partial[i] + "'");
    const auto v = index.vector(*row);
    std::copy(v.begin(), v.end(), &features.at(i, 0));
    exclude.insert(partial[i]);
  }
  const nn::Var t = model.cir_forward(nn::Var::constant(std::move(features)), spec);
  return index.knn_query(t.value().data(), k, filter_for(index, spec), exclude);
}

IndexSizeComparison compare_index_sizes(std::size_t items, std::size_t categories,
                                        std::size_t dim) {
  IndexSizeComparison c;
  c.items = items;
  c.categories = categories;
  c.dim = dim;
  c.single_bytes = items * dim * sizeof(double);
  c.subspace_bytes = items * categories * dim * sizeof(double);
  c.ratio = c.single_bytes == 0 ? 0.0
                                : static_cast<double>(c.subspace_bytes) / static_cast<double>(c.single_bytes);
  return c;
}

}  // namespace outfit
