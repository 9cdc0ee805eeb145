#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "outfit/catalog.hpp"
#include "outfit/random.hpp"

namespace outfit {

enum class CurriculumStage { HighLevel, FineGrained };

// Which negative pools a CIR run draws from over its epochs.
enum class NegativeStrategy {
  Curriculum,       // HighLevel, then FineGrained from the switch epoch on
  HighLevelOnly,
  FineGrainedOnly,
};

const char* to_string(CurriculumStage stage);
const char* to_string(NegativeStrategy strategy);
NegativeStrategy parse_negative_strategy(const std::string& text);

// Stage for a zero-based epoch. Under Curriculum the switch happens at
// floor(switch_fraction * total_epochs) and never reverts.
CurriculumStage stage_for_epoch(NegativeStrategy strategy, std::size_t epoch,
                                std::size_t total_epochs, double switch_fraction);

struct CirInstance {
  std::vector<std::string> partial;
  std::string positive;
};

// Picks a uniformly random positive; the rest form the partial outfit.
// Outfits with fewer than two items are skipped (nullopt, logged).
std::optional<CirInstance> make_cir_instance(const Outfit& outfit, Rng& rng);

struct SamplerStats {
  std::size_t fallback_draws = 0;
};

// `count` distinct negatives sharing the positive's high (HighLevel) or fine
// (FineGrained) category, never the positive or a partial-outfit item. A
// fine-grained shortfall is filled from the high-level pool.
std::vector<std::string> sample_negatives(const Item& positive,
                                          std::span<const std::string> partial,
                                          const Catalog& catalog, CurriculumStage stage,
                                          std::size_t count, Rng& rng,
                                          SamplerStats* stats = nullptr);

// Order-free identity of an outfit's item set.
std::string outfit_key(std::span<const std::string> items);

// Returns true for candidate item sets that must not be used as negatives
// (for example sets that satisfy a known compatibility rule).
using RejectFn = std::function<bool(const std::vector<std::string>&)>;

// Category-preserving corruption: every item of `source` is replaced by a
// random item of the same fine category. The result differs from the source
// and from every key in `positive_keys`; label 0.
Outfit make_negative_outfit(const Catalog& catalog, const Outfit& source,
                            const std::unordered_set<std::string>& positive_keys, Rng& rng,
                            const RejectFn& reject = {});

// Same, with the source drawn uniformly from `positive_outfits`.
Outfit make_negative_outfit(const Catalog& catalog, std::span<const Outfit> positive_outfits,
                            const std::unordered_set<std::string>& positive_keys, Rng& rng,
                            const RejectFn& reject = {});

std::unordered_set<std::string> outfit_keys(std::span<const Outfit> outfits);

}  // namespace outfit
