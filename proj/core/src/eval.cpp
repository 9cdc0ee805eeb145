#include "outfit/eval.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "outfit/errors.hpp"
#include "outfit/random.hpp"

namespace outfit {
namespace {

std::vector<const Item*> resolve(const Catalog& catalog, std::span<const std::string> ids) {
  std::vector<const Item*> items;
  items.reserve(ids.size());
  for (const auto& id : ids) items.push_back(&catalog.at(id));
  return items;
}

nn::Tensor index_features(const EmbeddingIndex& index, std::span<const std::string> ids) {
  nn::Tensor features = nn::Tensor::zeros(ids.size(), index.dim());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto row = index.row_of(ids[i]);
    if (!row) throw InputError("unknown item id '" + ids[i] + "'");
    const auto v = index.vector(*row);
    std::copy(v.begin(), v.end(), &features.at(i, 0));
  }
  return features;
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw InputError("auc: " + std::to_string(scores.size()) + " scores but " +
                     std::to_string(labels.size()) + " labels");
  }
  std::size_t positives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw InputError("auc: labels must be 0 or 1");
    positives += static_cast<std::size_t>(l);
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw InputError("auc is undefined unless both classes are present");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of 1-based average ranks of the positives.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) rank_sum += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(positives);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

std::vector<double> cp_scores(const OutfitModel& model, const Catalog& catalog,
                              std::span<const Outfit> outfits) {
  nn::NoGradGuard no_grad;
  std::vector<double> scores;
  scores.reserve(outfits.size());
  for (const auto& o : outfits) {
    const auto items = resolve(catalog, o.items);
    scores.push_back(model.cp_forward(model.encode_items(items)).item());
  }
  return scores;
}

std::vector<int> outfit_labels(std::span<const Outfit> outfits) {
  std::vector<int> labels;
  labels.reserve(outfits.size());
  for (const auto& o : outfits) {
    if (!o.label) throw InputError("outfit '" + o.outfit_id + "' has no compatibility label");
    labels.push_back(*o.label);
  }
  return labels;
}

const char* to_string(FitbMode m) { return m == FitbMode::CpScore ? "cp" : "cir"; }

FitbMode parse_fitb_mode(const std::string& text) {
  if (text == "cp") return FitbMode::CpScore;
  if (text == "cir") return FitbMode::CirDistance;
  throw ConfigError("fitb mode must be cp or cir, got '" + text + "'");
}

FitbResult fitb_evaluate(std::span<const FitbQuestion> questions,
                         const std::function<std::array<double, 4>(const FitbQuestion&)>& values,
                         bool higher_is_better) {
  FitbResult result;
  std::size_t correct = 0;
  for (const auto& q : questions) {
    FitbRecord r;
    r.outfit_id = q.outfit_id;
    r.answer = q.answer;
    r.values = values(q);
    std::size_t best = 0;
    for (std::size_t c = 1; c < 4; ++c) {
      const bool better = higher_is_better ? r.values[c] > r.values[best] : r.values[c] < r.values[best];
      if (better) best = c;
    }
    for (std::size_t c = 0; c < 4; ++c) {
      if (c != best && r.values[c] == r.values[best]) r.tie = true;
    }
    r.chosen = best;
    if (r.tie) ++result.ties;
    if (best == q.answer) ++correct;
    result.records.push_back(std::move(r));
  }
  if (result.ties > 0) {
    spdlog::info("fitb: {} question(s) had tied candidates; lowest index chosen", result.ties);
  }
  result.accuracy = questions.empty() ? 0.0
                                      : static_cast<double>(correct) / static_cast<double>(questions.size());
  return result;
}

FitbResult fitb_accuracy(const OutfitModel& model, const Catalog& catalog,
                         std::span<const FitbQuestion> questions, FitbMode mode) {
  nn::NoGradGuard no_grad;
  if (mode == FitbMode::CpScore) {
    return fitb_evaluate(
        questions,
        [&](const FitbQuestion& q) {
          std::array<double, 4> scores{};
          auto items = resolve(catalog, q.partial);
          items.push_back(nullptr);
          for (std::size_t c = 0; c < 4; ++c) {
            items.back() = &catalog.at(q.candidates[c]);
            scores[c] = model.cp_forward(model.encode_items(items)).item();
          }
          return scores;
        },
        true);
  }
  return fitb_evaluate(
      questions,
      [&](const FitbQuestion& q) {
        const auto partial = resolve(catalog, q.partial);
        const Item& answer = catalog.at(q.candidates[q.answer]);
        const nn::Var t =
            model.cir_forward(model.encode_items(partial), TargetSpec::category(answer.fine_category));
        const auto candidates = resolve(catalog, q.candidates);
        const nn::Var f = model.encode_items(candidates);
        std::array<double, 4> d{};
        for (std::size_t c = 0; c < 4; ++c) d[c] = distance(t.value().data(), f.value().row_span(c));
        return d;
      },
      false);
}

std::vector<FitbQuestion> make_fitb_questions(const Catalog& catalog,
                                              std::span<const Outfit> outfits, std::uint64_t seed) {
  std::vector<FitbQuestion> questions;
  for (std::size_t i = 0; i < outfits.size(); ++i) {
    const Outfit& o = outfits[i];
    if (o.items.size() < 2) continue;
    Rng rng(derive_seed(seed, {i}));
    const std::size_t blank = uniform_index(rng, o.items.size());
    const Item& answer = catalog.at(o.items[blank]);
    const std::unordered_set<std::string> members(o.items.begin(), o.items.end());
    std::vector<std::string> pool;
    for (std::size_t idx : catalog.items_in_fine(answer.fine_category)) {
      if (!members.count(catalog[idx].item_id)) pool.push_back(catalog[idx].item_id);
    }
    if (pool.size() < 3) continue;
    for (std::size_t j = 0; j < 3; ++j) {
      std::swap(pool[j], pool[j + uniform_index(rng, pool.size() - j)]);
    }
    FitbQuestion q;
    q.outfit_id = o.outfit_id;
    q.blank_position = blank;
    for (std::size_t j = 0; j < o.items.size(); ++j) {
      if (j != blank) q.partial.push_back(o.items[j]);
    }
    q.answer = uniform_index(rng, 4);
    for (std::size_t c = 0, d = 0; c < 4; ++c) {
      q.candidates[c] = c == q.answer ? answer.item_id : pool[d++];
    }
    questions.push_back(std::move(q));
  }
  return questions;
}

std::vector<RecallQuery> make_recall_queries(const Catalog& catalog,
                                             std::span<const Outfit> outfits, std::uint64_t seed) {
  std::vector<RecallQuery> queries;
  for (std::size_t i = 0; i < outfits.size(); ++i) {
    const Outfit& o = outfits[i];
    if (o.items.size() < 2) continue;
    Rng rng(derive_seed(seed, {i}));
    const std::size_t held = uniform_index(rng, o.items.size());
    RecallQuery q;
    q.query_id = o.outfit_id;
    q.ground_truth = o.items[held];
    q.target_category = catalog.at(q.ground_truth).fine_category;
    for (std::size_t j = 0; j < o.items.size(); ++j) {
      if (j != held) q.partial.push_back(o.items[j]);
    }
    queries.push_back(std::move(q));
  }
  return queries;
}

std::size_t pessimistic_rank(std::span<const double> others, double ground_truth) {
  std::size_t ahead = 0;
  for (double d : others) ahead += d <= ground_truth ? 1 : 0;
  return ahead + 1;
}

std::map<std::size_t, double> recall_from_ranks(std::span<const std::optional<std::size_t>> ranks,
                                                std::span<const std::size_t> ks) {
  std::map<std::size_t, double> recall;
  for (std::size_t k : ks) {
    std::size_t hits = 0;
    for (const auto& r : ranks) hits += (r && *r <= k) ? 1 : 0;
    recall[k] = ranks.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(ranks.size());
  }
  return recall;
}

RecallResult recall_at_k(const OutfitModel& model, const EmbeddingIndex& index,
                         std::span<const RecallQuery> queries, std::span<const std::size_t> ks) {
  nn::NoGradGuard no_grad;
  RecallResult result;
  std::vector<std::optional<std::size_t>> ranks;
  for (const auto& q : queries) {
    RecallRecord rec;
    rec.query_id = q.query_id;
    const bool known = index.row_of(q.ground_truth).has_value() &&
                       std::all_of(q.partial.begin(), q.partial.end(),
                                   [&](const std::string& id) { return index.row_of(id).has_value(); });
    if (!known || q.partial.empty()) {
      ++result.skipped;
      ranks.push_back(std::nullopt);
      result.records.push_back(std::move(rec));
      continue;
    }
    const nn::Var t = model.cir_forward(nn::Var::constant(index_features(index, q.partial)),
                                        TargetSpec::category(q.target_category));
    const std::unordered_set<std::string> exclude(q.partial.begin(), q.partial.end());
    double gt_distance = 0.0;
    bool gt_in_pool = false;
    std::vector<double> others;
    for (std::size_t row : index.pool(CategoryFilter{CategoryLevel::Fine, q.target_category})) {
      if (exclude.count(index.id(row))) continue;
      const double d = distance(t.value().data(), index.vector(row));
      if (index.id(row) == q.ground_truth) {
        gt_distance = d;
        gt_in_pool = true;
      } else {
        others.push_back(d);
      }
    }
    rec.pool_size = others.size() + (gt_in_pool ? 1 : 0);
    if (gt_in_pool) {
      rec.rank = pessimistic_rank(others, gt_distance);
    } else {
      ++result.skipped;
    }
    ranks.push_back(rec.rank);
    result.records.push_back(std::move(rec));
  }
  if (result.skipped > 0) spdlog::warn("recall: skipped {} of {} queries", result.skipped, queries.size());
  result.recall = recall_from_ranks(ranks, ks);
  return result;
}

nlohmann::json EvalReport::to_json() const {
  return nlohmann::json{{"v", 1},          {"task", task},       {"metrics", metrics},
                        {"records", records}, {"config", config}, {"seed", seed},
                        {"query_count", query_count}};
}

EvalReport cp_report(const OutfitModel& model, const DatasetSplit& data,
                     std::span<const Outfit> labelled, std::uint64_t seed) {
  EvalReport r;
  r.task = "cp";
  r.seed = seed;
  r.config = model.config();
  const auto scores = cp_scores(model, data.catalog, labelled);
  const auto labels = outfit_labels(labelled);
  r.metrics = {{"auc", auc(scores, labels)}};
  r.records = nlohmann::json::array();
  for (std::size_t i = 0; i < labelled.size(); ++i) {
    r.records.push_back({{"id", labelled[i].outfit_id}, {"label", labels[i]}, {"score", scores[i]}});
  }
  r.query_count = labelled.size();
  return r;
}

EvalReport fitb_report(const OutfitModel& model, const DatasetSplit& data,
                       std::span<const FitbQuestion> questions, std::uint64_t seed) {
  EvalReport r;
  r.task = "fitb";
  r.seed = seed;
  r.config = model.config();
  r.metrics = nlohmann::json::object();
  r.records = nlohmann::json::object();
  r.query_count = questions.size();
  for (FitbMode mode : {FitbMode::CpScore, FitbMode::CirDistance}) {
    if (mode == FitbMode::CpScore && !model.config().cp_head) continue;
    if (mode == FitbMode::CirDistance && !model.config().cir_head) continue;
    const auto res = fitb_accuracy(model, data.catalog, questions, mode);
    const std::string name = to_string(mode);
    r.metrics["accuracy_" + name] = res.accuracy;
    r.metrics["ties_" + name] = res.ties;
    auto& recs = r.records[name] = nlohmann::json::array();
    for (const auto& rec : res.records) {
      recs.push_back({{"id", rec.outfit_id},
                      {"values", rec.values},
                      {"chosen", rec.chosen},
                      {"answer", rec.answer},
                      {"tie", rec.tie}});
    }
  }
  return r;
}

EvalReport cir_report(const OutfitModel& model, const EmbeddingIndex& index,
                      std::span<const RecallQuery> queries, std::span<const std::size_t> ks,
                      std::uint64_t seed) {
  EvalReport r;
  r.task = "cir";
  r.seed = seed;
  r.config = model.config();
  const auto res = recall_at_k(model, index, queries, ks);
  r.metrics = nlohmann::json::object();
  for (const auto& [k, v] : res.recall) r.metrics["recall@" + std::to_string(k)] = v;
  r.metrics["skipped"] = res.skipped;
  r.records = nlohmann::json::array();
  for (const auto& rec : res.records) {
    r.records.push_back({{"id", rec.query_id},
                         {"rank", rec.rank ? nlohmann::json(*rec.rank) : nlohmann::json(nullptr)},
                         {"pool", rec.pool_size}});
  }
  r.query_count = queries.size();
  return r;
}

}  // namespace outfit
