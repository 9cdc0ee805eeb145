#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "outfit/data.hpp"
#include "outfit/index.hpp"
#include "outfit/outfit_encoder.hpp"

namespace outfit {

// Area under the ROC curve by the Mann–Whitney rank statistic, ties
// credited 0.5. Throws InputError unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

// Compatibility score for every outfit, in order.
std::vector<double> cp_scores(const OutfitModel& model, const Catalog& catalog,
                              std::span<const Outfit> outfits);

// Labels of labelled outfits; throws InputError for an unlabelled one.
std::vector<int> outfit_labels(std::span<const Outfit> outfits);

enum class FitbMode { CpScore, CirDistance };
const char* to_string(FitbMode m);
FitbMode parse_fitb_mode(const std::string& text);

struct FitbRecord {
  std::string outfit_id;
  std::array<double, 4> values{};  // scores (CP) or distances (CIR)
  std::size_t chosen = 0;
  std::size_t answer = 0;
  bool tie = false;
};

struct FitbResult {
  double accuracy = 0.0;
  std::size_t ties = 0;
  std::vector<FitbRecord> records;
};

// Generic FITB loop: `values` gives one number per candidate, and the best
// one (highest, or lowest when !higher_is_better) is chosen. Ties go to the
// lowest candidate index and are counted.
FitbResult fitb_evaluate(std::span<const FitbQuestion> questions,
                         const std::function<std::array<double, 4>(const FitbQuestion&)>& values,
                         bool higher_is_better);

// CP mode scores each completed outfit; CIR mode measures the distance from
// the target embedding (target = the answer's fine category) to each
// candidate's features.
FitbResult fitb_accuracy(const OutfitModel& model, const Catalog& catalog,
                         std::span<const FitbQuestion> questions, FitbMode mode);

// Blanks one random item per outfit and draws three distractors from the
// blanked item's fine category (excluding outfit members).
std::vector<FitbQuestion> make_fitb_questions(const Catalog& catalog,
                                              std::span<const Outfit> outfits, std::uint64_t seed);

struct RecallQuery {
  std::string query_id;
  std::vector<std::string> partial;
  std::string target_category;  // fine category of the ground truth
  std::string ground_truth;
};

// One query per outfit with at least two items: a seeded random member is
// held out as the ground truth.
std::vector<RecallQuery> make_recall_queries(const Catalog& catalog,
                                             std::span<const Outfit> outfits, std::uint64_t seed);

// Rank of a ground-truth distance among candidate distances (the ground truth
// not included), 1-based, placing the ground truth after every tie.
std::size_t pessimistic_rank(std::span<const double> others, double ground_truth);

struct RecallRecord {
  std::string query_id;
  std::optional<std::size_t> rank;  // nullopt when skipped
  std::size_t pool_size = 0;
};

struct RecallResult {
  std::map<std::size_t, double> recall;  // k -> fraction of all queries
  std::size_t skipped = 0;
  std::vector<RecallRecord> records;
};

// Ranks the ground truth among the index items of the target's fine
// category (partial-outfit items excluded) by distance to the target
// embedding. Skipped queries (ground truth or a partial item missing from
// the index) count as misses.
RecallResult recall_at_k(const OutfitModel& model, const EmbeddingIndex& index,
                         std::span<const RecallQuery> queries, std::span<const std::size_t> ks);

// recall@k from precomputed ranks, with skipped queries as misses.
std::map<std::size_t, double> recall_from_ranks(std::span<const std::optional<std::size_t>> ranks,
                                                std::span<const std::size_t> ks);

struct EvalReport {
  std::string task;  // "cp", "fitb" or "cir"
  nlohmann::json metrics;
  nlohmann::json records;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::size_t query_count = 0;

  nlohmann::json to_json() const;
};

EvalReport cp_report(const OutfitModel& model, const DatasetSplit& data,
                     std::span<const Outfit> labelled, std::uint64_t seed);
// Both modes when the model carries both heads.
EvalReport fitb_report(const OutfitModel& model, const DatasetSplit& data,
                       std::span<const FitbQuestion> questions, std::uint64_t seed);
EvalReport cir_report(const OutfitModel& model, const EmbeddingIndex& index,
                      std::span<const RecallQuery> queries, std::span<const std::size_t> ks,
                      std::uint64_t seed);

}  // namespace outfit
