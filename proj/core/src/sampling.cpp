#include "outfit/sampling.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "outfit/errors.hpp"

namespace outfit {

const char* to_string(CurriculumStage stage) {
  return stage == CurriculumStage::HighLevel ? "high_level" : "fine_grained";
}

const char* to_string(NegativeStrategy strategy) {
  switch (strategy) {
    case NegativeStrategy::Curriculum:
      return "curriculum";
    case NegativeStrategy::HighLevelOnly:
      return "high_level";
    case NegativeStrategy::FineGrainedOnly:
      return "fine_grained";
  }
  return "?";
}

NegativeStrategy parse_negative_strategy(const std::string& text) {
  if (text == "curriculum") return NegativeStrategy::Curriculum;
  if (text == "high_level" || text == "high") return NegativeStrategy::HighLevelOnly;
  if (text == "fine_grained" || text == "fine") return NegativeStrategy::FineGrainedOnly;
  throw ConfigError("unknown negative strategy '" + text + "'");
}

CurriculumStage stage_for_epoch(NegativeStrategy strategy, std::size_t epoch,
                                std::size_t total_epochs, double switch_fraction) {
  switch (strategy) {
    case NegativeStrategy::HighLevelOnly:
      return CurriculumStage::HighLevel;
    case NegativeStrategy::FineGrainedOnly:
      return CurriculumStage::FineGrained;
    case NegativeStrategy::Curriculum:
      break;
  }
  if (switch_fraction < 0.0 || switch_fraction > 1.0) {
    throw ConfigError("curriculum switch fraction must lie in [0, 1]");
  }
  const auto boundary =
      static_cast<std::size_t>(std::floor(switch_fraction * static_cast<double>(total_epochs)));
  return epoch < boundary ? CurriculumStage::HighLevel : CurriculumStage::FineGrained;
}

std::optional<CirInstance> make_cir_instance(const Outfit& outfit, Rng& rng) {
  if (outfit.items.size() < 2) {
    spdlog::warn("outfit {} has {} item(s); skipped for retrieval training", outfit.outfit_id,
                 outfit.items.size());
    return std::nullopt;
  }
  const std::size_t pick = uniform_index(rng, outfit.items.size());
  CirInstance inst;
  inst.positive = outfit.items[pick];
  inst.partial.reserve(outfit.items.size() - 1);
  for (std::size_t i = 0; i < outfit.items.size(); ++i) {
    if (i != pick) inst.partial.push_back(outfit.items[i]);
  }
  return inst;
}

namespace {

std::vector<std::size_t> eligible(const std::vector<std::size_t>& pool, const Catalog& catalog,
                                  const std::unordered_set<std::string>& excluded) {
  std::vector<std::size_t> out;
  out.reserve(pool.size());
  for (std::size_t idx : pool) {
    if (!excluded.count(catalog[idx].item_id)) out.push_back(idx);
  }
  return out;
}

// First `count` entries of a partial Fisher-Yates shuffle.
void draw_distinct(std::vector<std::size_t>& pool, std::size_t count, Rng& rng,
                   std::vector<std::size_t>& out) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + uniform_index(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
}

}  // namespace

std::vector<std::string> sample_negatives(const Item& positive,
                                          std::span<const std::string> partial,
                                          const Catalog& catalog, CurriculumStage stage,
                                          std::size_t count, Rng& rng, SamplerStats* stats) {
  std::unordered_set<std::string> excluded(partial.begin(), partial.end());
  excluded.insert(positive.item_id);

  std::vector<std::size_t> chosen;
  chosen.reserve(count);
  if (stage == CurriculumStage::FineGrained) {
    auto pool = eligible(catalog.items_in_fine(positive.fine_category), catalog, excluded);
    draw_distinct(pool, std::min(count, pool.size()), rng, chosen);
    if (chosen.size() < count) {
      spdlog::debug("fine category '{}' has {} eligible negatives; filling {} from '{}'",
                    positive.fine_category, chosen.size(), count - chosen.size(),
                    positive.high_category);
      if (stats) stats->fallback_draws += count - chosen.size();
      for (std::size_t idx : chosen) excluded.insert(catalog[idx].item_id);
    }
  }
  if (chosen.size() < count) {
    auto pool = eligible(catalog.items_in_high(positive.high_category), catalog, excluded);
    const std::size_t needed = count - chosen.size();
    if (pool.size() < needed) {
      throw InputError("only " + std::to_string(pool.size() + chosen.size()) +
                       " eligible negatives for item " + positive.item_id + ", need " +
                       std::to_string(count));
    }
    draw_distinct(pool, needed, rng, chosen);
  }

  std::vector<std::string> out;
  out.reserve(chosen.size());
  for (std::size_t idx : chosen) out.push_back(catalog[idx].item_id);
  return out;
}

std::string outfit_key(std::span<const std::string> items) {
  std::vector<std::string> sorted(items.begin(), items.end());
  std::sort(sorted.begin(), sorted.end());
  std::string key;
  for (const auto& id : sorted) {
    key += id;
    key.push_back('\x1f');
  }
  return key;
}

std::unordered_set<std::string> outfit_keys(std::span<const Outfit> outfits) {
  std::unordered_set<std::string> keys;
  for (const auto& o : outfits) keys.insert(outfit_key(o.items));
  return keys;
}

Outfit make_negative_outfit(const Catalog& catalog, const Outfit& source,
                            const std::unordered_set<std::string>& positive_keys, Rng& rng,
                            const RejectFn& reject) {
  if (catalog.empty()) throw InputError("make_negative_outfit: empty catalog");
  const std::string source_key = outfit_key(source.items);
  constexpr int kMaxAttempts = 256;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<std::string> items;
    std::unordered_set<std::string> used;
    items.reserve(source.items.size());
    bool ok = true;
    for (const auto& id : source.items) {
      const auto& pool = catalog.items_in_fine(catalog.at(id).fine_category);
      // Redraw on in-outfit collisions; a handful of tries is plenty for any
      // category with more than a few members.
      std::string pick;
      for (int tries = 0; tries < 16; ++tries) {
        pick = catalog[pool[uniform_index(rng, pool.size())]].item_id;
        if (!used.count(pick)) break;
      }
      if (used.count(pick)) {
        ok = false;
        break;
      }
      used.insert(pick);
      items.push_back(pick);
    }
    if (!ok) continue;
    const std::string key = outfit_key(items);
    if (key == source_key || positive_keys.count(key)) continue;
    if (reject && reject(items)) continue;
    Outfit out;
    out.outfit_id = source.outfit_id + "_neg";
    out.items = std::move(items);
    out.label = 0;
    return out;
  }
  throw InputError("could not build a negative outfit from " + source.outfit_id + " after " +
                   std::to_string(kMaxAttempts) + " attempts");
}

Outfit make_negative_outfit(const Catalog& catalog, std::span<const Outfit> positive_outfits,
                            const std::unordered_set<std::string>& positive_keys, Rng& rng,
                            const RejectFn& reject) {
  if (positive_outfits.empty()) throw InputError("make_negative_outfit: no source outfits");
  const Outfit& source = positive_outfits[uniform_index(rng, positive_outfits.size())];
  return make_negative_outfit(catalog, source, positive_keys, rng, reject);
}

}  // namespace outfit
