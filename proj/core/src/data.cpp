#include "outfit/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "outfit/errors.hpp"
#include "outfit/image.hpp"
#include "outfit/random.hpp"
#include "outfit/sampling.hpp"

namespace outfit {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- DatasetSplit ---------------------------------------------------------

void DatasetSplit::validate() const {
  auto check_outfits = [&](const std::vector<Outfit>& outfits, const char* name) {
    for (const auto& o : outfits) {
      if (o.items.size() < 2) {
        throw InputError(std::string(name) + " outfit " + o.outfit_id + " has fewer than 2 items");
      }
      std::unordered_set<std::string> seen;
      for (const auto& id : o.items) {
        if (!catalog.contains(id)) {
          throw InputError(std::string(name) + " outfit " + o.outfit_id + " references unknown item '" +
                           id + "'");
        }
        if (!seen.insert(id).second) {
          throw InputError(std::string(name) + " outfit " + o.outfit_id + " repeats item '" + id + "'");
        }
      }
    }
  };
  check_outfits(train, "train");
  check_outfits(valid, "valid");
  check_outfits(test, "test");

  const std::vector<const std::vector<Outfit>*> splits = {&train, &valid, &test};
  if (disjoint) {
    std::unordered_map<std::string, std::size_t> owner;
    for (std::size_t s = 0; s < splits.size(); ++s)
      for (const auto& o : *splits[s])
        for (const auto& id : o.items) {
          auto [it, inserted] = owner.emplace(id, s);
          if (!inserted && it->second != s) {
            throw InputError("disjoint split violated: item '" + id + "' appears in two splits");
          }
        }
  } else {
    std::unordered_map<std::string, std::size_t> owner;
    for (std::size_t s = 0; s < splits.size(); ++s)
      for (const auto& o : *splits[s]) {
        auto [it, inserted] = owner.emplace(o.outfit_id, s);
        if (!inserted) {
          throw InputError("outfit id '" + o.outfit_id + "' appears more than once across splits");
        }
      }
  }
}

bool DatasetSplit::operator==(const DatasetSplit& other) const {
  auto as_sets = [](const std::vector<Outfit>& outfits) {
    std::map<std::string, std::pair<std::string, std::optional<int>>> m;
    for (const auto& o : outfits) m[o.outfit_id] = {outfit_key(o.items), o.label};
    return m;
  };
  auto catalog_map = [](const Catalog& c) {
    std::map<std::string, Item> m;
    for (const auto& item : c.items()) m[item.item_id] = item;
    return m;
  };
  return catalog_map(catalog) == catalog_map(other.catalog) && as_sets(train) == as_sets(other.train) &&
         as_sets(valid) == as_sets(other.valid) && as_sets(test) == as_sets(other.test) &&
         as_sets(compat_valid) == as_sets(other.compat_valid) &&
         as_sets(compat_test) == as_sets(other.compat_test) && fitb_valid == other.fitb_valid &&
         fitb_test == other.fitb_test && disjoint == other.disjoint &&
         latent_style == other.latent_style;
}

std::string variant_dir(bool disjoint) { return disjoint ? "disjoint" : "nondisjoint"; }

// ---- reading --------------------------------------------------------------

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string json_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (it->is_string()) return it->get<std::string>();
  return it->dump();
}

struct CategoryRow {
  std::string fine;
  std::string high;
};

std::map<std::string, CategoryRow> read_categories(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::map<std::string, CategoryRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto first = line.find(',');
    const auto last = line.rfind(',');
    if (first == std::string::npos || first == last) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected fine_id,fine_name,high_name");
    }
    rows[line.substr(0, first)] = {line.substr(first + 1, last - first - 1), line.substr(last + 1)};
  }
  return rows;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// (set_id, 1-based index) -> item id, for one split.
using RefMap = std::unordered_map<std::string, std::vector<std::string>>;

std::string resolve_ref(const std::string& ref, const RefMap& refs, const Catalog& catalog,
                        std::string* set_id = nullptr) {
  const auto us = ref.rfind('_');
  if (us != std::string::npos) {
    const std::string set = ref.substr(0, us);
    std::size_t index = 0;
    const char* b = ref.data() + us + 1;
    const char* e = ref.data() + ref.size();
    auto [ptr, ec] = std::from_chars(b, e, index);
    auto it = refs.find(set);
    if (ec == std::errc() && ptr == e && it != refs.end() && index >= 1 &&
        index <= it->second.size()) {
      if (set_id) *set_id = set;
      return it->second[index - 1];
    }
  }
  if (catalog.contains(ref)) {
    if (set_id) set_id->clear();
    return ref;
  }
  throw InputError("unresolved item reference '" + ref + "'");
}

std::vector<Outfit> parse_outfits(const json& doc, const fs::path& path, const Catalog& catalog,
                                  const LoadOptions& options, RefMap* refs) {
  if (!doc.is_array()) throw FormatError(path.string() + ": expected a JSON array of outfits");
  std::vector<Outfit> outfits;
  std::set<std::string> unresolved;
  std::size_t truncated = 0, deduplicated = 0;
  for (const auto& entry : doc) {
    if (!entry.is_object() || !entry.contains("items")) {
      throw FormatError(path.string() + ": outfit entry without an items list");
    }
    Outfit o;
    o.outfit_id = json_string(entry, "set_id");
    std::vector<std::pair<long, std::string>> ordered;
    for (const auto& it : entry.at("items")) {
      const std::string id = json_string(it, "item_id");
      const long index = it.contains("index") ? it.at("index").get<long>()
                                              : static_cast<long>(ordered.size() + 1);
      ordered.emplace_back(index, id);
    }
    std::sort(ordered.begin(), ordered.end());
    if (refs) {
      auto& slot = (*refs)[o.outfit_id];
      for (const auto& [idx, id] : ordered) {
        if (idx >= 1) {
          if (slot.size() < static_cast<std::size_t>(idx)) slot.resize(static_cast<std::size_t>(idx));
          slot[static_cast<std::size_t>(idx) - 1] = id;
        }
      }
    }
    std::unordered_set<std::string> seen;
    for (const auto& [idx, id] : ordered) {
      if (!catalog.contains(id)) {
        unresolved.insert(id);
        continue;
      }
      if (!seen.insert(id).second) {
        ++deduplicated;
        continue;
      }
      o.items.push_back(id);
    }
    if (o.items.size() > options.max_outfit_len) {
      Rng rng(derive_seed(options.seed, {fnv1a(o.outfit_id)}));
      std::shuffle(o.items.begin(), o.items.end(), rng);
      o.items.resize(options.max_outfit_len);
      ++truncated;
    }
    // Sets carry no order.
    std::sort(o.items.begin(), o.items.end());
    outfits.push_back(std::move(o));
  }
  if (!unresolved.empty()) {
    std::string msg = path.string() + ": " + std::to_string(unresolved.size()) +
                      " item id(s) missing from metadata:";
    std::size_t shown = 0;
    for (const auto& id : unresolved) {
      if (shown++ == 20) {
        msg += " ...";
        break;
      }
      msg += " " + id;
    }
    throw InputError(msg);
  }
  if (truncated) {
    spdlog::info("{}: truncated {} outfit(s) to {} items", path.string(), truncated,
                 options.max_outfit_len);
  }
  if (deduplicated) spdlog::warn("{}: dropped {} repeated item(s)", path.string(), deduplicated);
  return outfits;
}

std::vector<FitbQuestion> parse_fitb(const fs::path& path, const RefMap& refs,
                                     const Catalog& catalog) {
  const json doc = read_json(path);
  if (!doc.is_array()) throw FormatError(path.string() + ": expected a JSON array of questions");
  std::vector<FitbQuestion> out;
  for (const auto& q : doc) {
    FitbQuestion fq;
    std::string question_set;
    for (const auto& ref : q.at("question")) {
      std::string set;
      fq.partial.push_back(resolve_ref(ref.get<std::string>(), refs, catalog, &set));
      if (!set.empty()) question_set = set;
    }
    const auto& answers = q.at("answers");
    if (answers.size() != 4) {
      throw FormatError(path.string() + ": FITB question with " + std::to_string(answers.size()) +
                        " answers (expected 4)");
    }
    bool found = false;
    for (std::size_t i = 0; i < 4; ++i) {
      std::string set;
      fq.candidates[i] = resolve_ref(answers[i].get<std::string>(), refs, catalog, &set);
      if (!found && !set.empty() && set == question_set) {
        fq.answer = i;
        found = true;
      }
    }
    if (!found) {
      throw FormatError(path.string() + ": no answer drawn from outfit " + question_set);
    }
    fq.outfit_id = question_set;
    fq.blank_position = q.value("blank_position", std::size_t{0});
    std::sort(fq.partial.begin(), fq.partial.end());
    out.push_back(std::move(fq));
  }
  return out;
}

std::vector<Outfit> parse_compat(const fs::path& path, const std::string& split, const RefMap& refs,
                                 const Catalog& catalog) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<Outfit> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    int label = 0;
    if (!(ls >> label)) continue;
    if (label != 0 && label != 1) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": label must be 0 or 1");
    }
    Outfit o;
    o.outfit_id = split + "_compat_" + std::to_string(out.size());
    o.label = label;
    std::string ref;
    while (ls >> ref) o.items.push_back(resolve_ref(ref, refs, catalog));
    std::sort(o.items.begin(), o.items.end());
    out.push_back(std::move(o));
  }
  return out;
}

Catalog read_catalog(const fs::path& root, const LoadOptions& options,
                     std::map<std::string, int>* latent_style) {
  const auto categories = read_categories(root / "categories.csv");
  const fs::path meta_path = root / "polyvore_item_metadata.json";
  const json meta = read_json(meta_path);
  if (!meta.is_object()) throw FormatError(meta_path.string() + ": expected an object keyed by item id");

  Catalog catalog;
  for (const auto& [id, entry] : meta.items()) {
    Item item;
    item.item_id = id;
    item.description = json_string(entry, "description");
    if (item.description.empty()) item.description = json_string(entry, "title");
    const std::string cat_id = json_string(entry, "category_id");
    auto cat = categories.find(cat_id);
    if (cat == categories.end()) {
      throw FormatError(meta_path.string() + ": item " + id + " has unknown category_id '" +
                        cat_id + "'");
    }
    item.fine_category = cat->second.fine;
    item.high_category = cat->second.high;
    if (options.images == ImageSource::Jpeg) {
      item.payload = load_jpeg_raster(root / "images" / (id + ".jpg"));
    } else if (entry.contains("payload")) {
      item.payload = entry.at("payload").get<std::vector<double>>();
    } else {
      item.payload.assign(options.payload_dim, 0.0);
    }
    if (latent_style && entry.contains("latent_style")) {
      (*latent_style)[id] = entry.at("latent_style").get<int>();
    }
    catalog.add(std::move(item));
  }
  return catalog;
}

}  // namespace

std::vector<Outfit> load_outfit_list(const fs::path& root, const std::string& split_name,
                                     bool disjoint, const Catalog& catalog,
                                     const LoadOptions& options) {
  const fs::path path = root / variant_dir(disjoint) / (split_name + ".json");
  return parse_outfits(read_json(path), path, catalog, options, nullptr);
}

DatasetSplit load_polyvore(const fs::path& root, bool disjoint, const LoadOptions& options) {
  DatasetSplit split;
  split.disjoint = disjoint;
  split.catalog = read_catalog(root, options, &split.latent_style);

  const fs::path dir = root / variant_dir(disjoint);
  auto load = [&](const std::string& name, std::vector<Outfit>& outfits, RefMap& refs,
                  bool required) {
    const fs::path path = dir / (name + ".json");
    if (!fs::exists(path)) {
      if (required) throw FormatError("missing outfit list " + path.string());
      spdlog::warn("no {} split at {}", name, path.string());
      return;
    }
    outfits = parse_outfits(read_json(path), path, split.catalog, options, &refs);
  };
  RefMap train_refs, valid_refs, test_refs;
  load("train", split.train, train_refs, true);
  load("valid", split.valid, valid_refs, false);
  load("test", split.test, test_refs, false);

  auto optional_extras = [&](const std::string& name, const RefMap& refs,
                             std::vector<FitbQuestion>& fitb, std::vector<Outfit>& compat) {
    const fs::path fitb_path = dir / ("fill_in_blank_" + name + ".json");
    if (fs::exists(fitb_path)) fitb = parse_fitb(fitb_path, refs, split.catalog);
    const fs::path compat_path = dir / ("compatibility_" + name + ".txt");
    if (fs::exists(compat_path)) compat = parse_compat(compat_path, name, refs, split.catalog);
  };
  optional_extras("valid", valid_refs, split.fitb_valid, split.compat_valid);
  optional_extras("test", test_refs, split.fitb_test, split.compat_test);

  split.validate();
  return split;
}

// ---- writing --------------------------------------------------------------

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

json outfits_json(const std::vector<Outfit>& outfits) {
  json arr = json::array();
  for (const auto& o : outfits) {
    json items = json::array();
    for (std::size_t i = 0; i < o.items.size(); ++i) {
      items.push_back({{"item_id", o.items[i]}, {"index", i + 1}});
    }
    arr.push_back({{"set_id", o.outfit_id}, {"items", std::move(items)}});
  }
  return arr;
}

json fitb_json(const std::vector<FitbQuestion>& questions, const std::vector<Outfit>& outfits) {
  std::unordered_map<std::string, const Outfit*> by_id;
  for (const auto& o : outfits) by_id[o.outfit_id] = &o;
  auto ref_in = [&](const std::string& set, const std::string& item) -> std::string {
    auto it = by_id.find(set);
    if (it != by_id.end()) {
      const auto& items = it->second->items;
      auto pos = std::find(items.begin(), items.end(), item);
      if (pos != items.end()) return set + "_" + std::to_string(pos - items.begin() + 1);
    }
    throw InputError("FITB item " + item + " is not a member of outfit " + set);
  };
  json arr = json::array();
  for (const auto& q : questions) {
    json question = json::array();
    for (const auto& id : q.partial) question.push_back(ref_in(q.outfit_id, id));
    json answers = json::array();
    for (std::size_t i = 0; i < 4; ++i) {
      answers.push_back(i == q.answer ? ref_in(q.outfit_id, q.candidates[i]) : q.candidates[i]);
    }
    arr.push_back({{"question", std::move(question)},
                   {"answers", std::move(answers)},
                   {"blank_position", q.blank_position}});
  }
  return arr;
}

std::string compat_text(const std::vector<Outfit>& outfits) {
  std::string text;
  for (const auto& o : outfits) {
    text += std::to_string(o.label.value_or(1));
    for (const auto& id : o.items) text += " " + id;
    text += "\n";
  }
  return text;
}

}  // namespace

void save_polyvore(const DatasetSplit& split, const fs::path& root) {
  fs::create_directories(root / variant_dir(split.disjoint));

  std::map<std::string, std::string> fine_ids;
  std::string csv;
  std::size_t next_id = 1;
  for (const auto& [fine, high] : split.catalog.hierarchy()) {
    fine_ids[fine] = std::to_string(next_id);
    csv += std::to_string(next_id) + "," + fine + "," + high + "\n";
    ++next_id;
  }
  write_text(root / "categories.csv", csv);

  json meta = json::object();
  for (const auto& item : split.catalog.items()) {
    json entry = {{"description", item.description},
                  {"category_id", fine_ids.at(item.fine_category)},
                  {"semantic_category", item.high_category},
                  {"payload", item.payload}};
    auto style = split.latent_style.find(item.item_id);
    if (style != split.latent_style.end()) entry["latent_style"] = style->second;
    meta[item.item_id] = std::move(entry);
  }
  write_text(root / "polyvore_item_metadata.json", meta.dump());

  const fs::path dir = root / variant_dir(split.disjoint);
  write_text(dir / "train.json", outfits_json(split.train).dump());
  write_text(dir / "valid.json", outfits_json(split.valid).dump());
  write_text(dir / "test.json", outfits_json(split.test).dump());
  if (!split.fitb_valid.empty()) {
    write_text(dir / "fill_in_blank_valid.json", fitb_json(split.fitb_valid, split.valid).dump());
  }
  if (!split.fitb_test.empty()) {
    write_text(dir / "fill_in_blank_test.json", fitb_json(split.fitb_test, split.test).dump());
  }
  if (!split.compat_valid.empty()) write_text(dir / "compatibility_valid.txt", compat_text(split.compat_valid));
  if (!split.compat_test.empty()) write_text(dir / "compatibility_test.txt", compat_text(split.compat_test));
}

// ---- synthetic ------------------------------------------------------------

void SyntheticSpec::validate() const {
  if (num_styles < 1 || num_high_categories < 1 || fine_per_high < 1 || items_per_fine < 1) {
    throw ConfigError("synthetic config: all counts must be at least 1");
  }
  if (noise_sigma < 0.0) throw ConfigError("synthetic config: noise_sigma must be non-negative");
  if (min_outfit_len < 2 || max_outfit_len < min_outfit_len) {
    throw ConfigError("synthetic config: outfit length range must satisfy 2 <= min <= max");
  }
  const std::size_t fines = num_high_categories * fine_per_high;
  if (max_outfit_len > fines) {
    throw ConfigError("synthetic config: max outfit length exceeds the number of fine categories");
  }
  if (payload_dim < num_styles + fines) {
    throw ConfigError("synthetic config: payload_dim must hold one-hot style and fine category (" +
                      std::to_string(num_styles + fines) + ")");
  }
  if (items_per_fine < num_styles) {
    throw ConfigError("synthetic config: items_per_fine must cover every style");
  }
}

namespace {

const std::vector<std::string> kHighNames = {"tops",    "bottoms", "shoes",   "bags",
                                             "outerwear", "jewellery", "hats", "scarves",
                                             "belts",   "eyewear", "watches", "socks"};
const std::vector<std::string> kStyleWords = {"casual", "formal",  "sporty", "vintage",
                                              "boho",   "minimal", "punk",   "preppy"};

std::string high_name(std::size_t i) {
  return i < kHighNames.size() ? kHighNames[i] : "group" + std::to_string(i);
}

std::string style_word(std::size_t s) {
  return s < kStyleWords.size() ? kStyleWords[s] : "style" + std::to_string(s);
}

std::string padded(const char* prefix, std::size_t n, int width) {
  std::string digits = std::to_string(n);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, width - digits.size(), '0');
  return prefix + digits;
}

}  // namespace

bool planted_compatible(const DatasetSplit& split, const std::vector<std::string>& items) {
  if (items.empty()) return false;
  auto style_of = [&](const std::string& id) {
    auto it = split.latent_style.find(id);
    if (it == split.latent_style.end()) throw InputError("no planted style for item '" + id + "'");
    return it->second;
  };
  const int first = style_of(items.front());
  return std::all_of(items.begin(), items.end(),
                     [&](const std::string& id) { return style_of(id) == first; });
}

DatasetSplit generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, {0x5e7}));
  std::normal_distribution<double> noise(0.0, 1.0);

  DatasetSplit split;
  split.disjoint = spec.disjoint;

  const std::size_t num_fine = spec.num_high_categories * spec.fine_per_high;
  std::vector<std::string> fine_names;
  for (std::size_t h = 0; h < spec.num_high_categories; ++h)
    for (std::size_t f = 0; f < spec.fine_per_high; ++f)
      fine_names.push_back(high_name(h) + std::to_string(f));

  // pools[split][style][fine] -> item ids; split index 0 when not disjoint.
  const std::size_t pool_splits = spec.disjoint ? 3 : 1;
  std::vector<std::vector<std::vector<std::vector<std::string>>>> pools(
      pool_splits, std::vector<std::vector<std::vector<std::string>>>(
                       spec.num_styles, std::vector<std::vector<std::string>>(num_fine)));

  std::size_t counter = 0;
  for (std::size_t fi = 0; fi < num_fine; ++fi) {
    for (std::size_t i = 0; i < spec.items_per_fine; ++i) {
      const std::size_t style = i % spec.num_styles;
      Item item;
      item.item_id = padded("i", counter++, 6);
      item.fine_category = fine_names[fi];
      item.high_category = high_name(fi / spec.fine_per_high);
      item.description = fine_names[fi] + " " + style_word(style);
      item.payload.assign(spec.payload_dim, 0.0);
      item.payload[style] = 1.0;
      item.payload[spec.num_styles + fi] = 1.0;
      if (spec.noise_sigma > 0.0) {
        for (auto& v : item.payload) v += spec.noise_sigma * noise(rng);
      }
      split.latent_style[item.item_id] = static_cast<int>(style);
      const std::size_t bucket = spec.disjoint ? std::min<std::size_t>((i / spec.num_styles) % 5, 4) : 0;
      const std::size_t ps = spec.disjoint ? (bucket < 3 ? 0 : bucket - 2) : 0;
      pools[ps][style][fi].push_back(item.item_id);
      split.catalog.add(std::move(item));
    }
  }
  for (std::size_t ps = 0; ps < pool_splits; ++ps)
    for (std::size_t s = 0; s < spec.num_styles; ++s)
      for (std::size_t fi = 0; fi < num_fine; ++fi)
        if (pools[ps][s][fi].empty()) {
          throw ConfigError("synthetic config: too few items per fine category for the split layout");
        }

  std::unordered_set<std::string> keys;
  std::size_t next_set = 100000;
  auto make_outfits = [&](std::size_t count, std::size_t ps) {
    std::vector<Outfit> outfits;
    std::vector<std::size_t> fines(num_fine);
    while (outfits.size() < count) {
      const std::size_t style = uniform_index(rng, spec.num_styles);
      const std::size_t len =
          spec.min_outfit_len + uniform_index(rng, spec.max_outfit_len - spec.min_outfit_len + 1);
      std::iota(fines.begin(), fines.end(), std::size_t{0});
      for (std::size_t i = 0; i < len; ++i) std::swap(fines[i], fines[i + uniform_index(rng, num_fine - i)]);
      Outfit o;
      for (std::size_t i = 0; i < len; ++i) {
        const auto& pool = pools[ps][style][fines[i]];
        o.items.push_back(pool[uniform_index(rng, pool.size())]);
      }
      std::sort(o.items.begin(), o.items.end());
      if (!keys.insert(outfit_key(o.items)).second) continue;
      o.outfit_id = std::to_string(next_set++);
      outfits.push_back(std::move(o));
    }
    return outfits;
  };
  split.train = make_outfits(spec.train_outfits, 0);
  split.valid = make_outfits(spec.valid_outfits, spec.disjoint ? 1 : 0);
  split.test = make_outfits(spec.test_outfits, spec.disjoint ? 2 : 0);

  auto make_fitb = [&](const std::vector<Outfit>& outfits) {
    std::vector<FitbQuestion> questions;
    for (const auto& o : outfits) {
      FitbQuestion q;
      q.outfit_id = o.outfit_id;
      q.blank_position = uniform_index(rng, o.items.size());
      const Item& answer = split.catalog.at(o.items[q.blank_position]);
      for (std::size_t i = 0; i < o.items.size(); ++i)
        if (i != q.blank_position) q.partial.push_back(o.items[i]);
      const int answer_style = split.latent_style.at(answer.item_id);
      std::vector<std::size_t> pool;
      for (std::size_t idx : split.catalog.items_in_fine(answer.fine_category)) {
        if (split.latent_style.at(split.catalog[idx].item_id) != answer_style) pool.push_back(idx);
      }
      std::vector<std::string> cands = {answer.item_id};
      for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t j = i + uniform_index(rng, pool.size() - i);
        std::swap(pool[i], pool[j]);
        cands.push_back(split.catalog[pool[i]].item_id);
      }
      std::shuffle(cands.begin(), cands.end(), rng);
      for (std::size_t i = 0; i < 4; ++i) {
        q.candidates[i] = cands[i];
        if (cands[i] == answer.item_id) q.answer = i;
      }
      questions.push_back(std::move(q));
    }
    return questions;
  };
  split.fitb_valid = make_fitb(split.valid);
  split.fitb_test = make_fitb(split.test);

  std::vector<Outfit> all_positive = split.train;
  all_positive.insert(all_positive.end(), split.valid.begin(), split.valid.end());
  all_positive.insert(all_positive.end(), split.test.begin(), split.test.end());
  const auto positive_keys = outfit_keys(all_positive);
  const RejectFn reject = [&](const std::vector<std::string>& items) {
    return planted_compatible(split, items);
  };
  auto make_compat = [&](const std::vector<Outfit>& outfits, const std::string& name) {
    std::vector<Outfit> out;
    for (const auto& o : outfits) {
      Outfit pos = o;
      pos.label = 1;
      Outfit neg = make_negative_outfit(split.catalog, o, positive_keys, rng, reject);
      std::sort(neg.items.begin(), neg.items.end());
      out.push_back(std::move(pos));
      out.push_back(std::move(neg));
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i].outfit_id = name + "_compat_" + std::to_string(i);
    return out;
  };
  split.compat_valid = make_compat(split.valid, "valid");
  split.compat_test = make_compat(split.test, "test");

  split.validate();
  return split;
}

}  // namespace outfit
