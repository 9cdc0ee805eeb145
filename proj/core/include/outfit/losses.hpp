#pragma once

#include <span>
#include <vector>

#include "outfit/distance.hpp"
#include "outfit/nn/tensor.hpp"

namespace outfit {

inline constexpr double kScoreClamp = 1e-7;

struct FocalParams {
  double gamma = 2.0;
  double alpha = 0.5;
  bool operator==(const FocalParams&) const = default;
};

// -alpha_t (1 - p_t)^gamma log(p_t), with p_t the probability assigned to the
// true label and scores clamped to [1e-7, 1 - 1e-7].
double focal_loss(double score, int label, const FocalParams& params = {});

// Batch mean of the focal loss. `scores` holds one probability per label.
nn::Var focal_loss(const nn::Var& scores, std::span<const int> labels,
                   const FocalParams& params = {});

// One ranking term: a target embedding, its positive, and the sampled
// negatives, all the same dimension.
struct RankingBatchItem {
  nn::Var target;
  nn::Var positive;
  std::vector<nn::Var> negatives;
  double margin = 2.0;
};

struct RankingOptions {
  bool use_all = true;
  bool use_hard = true;
  DistanceKind distance = DistanceKind::Euclidean;
};

struct RankingLoss {
  nn::Var all;   // mean hinge over every negative
  nn::Var hard;  // hinge against the closest negative
  nn::Var total;
};

// Set-wise outfit ranking loss:
//   all  = 1/|N| sum_j [d(t,p) - d(t,n_j) + m]_+
//   hard = [d(t,p) - min_j d(t,n_j) + m]_+
// Costs exactly 1 + |N| distance evaluations.
RankingLoss setwise_ranking_loss(const RankingBatchItem& item, const RankingOptions& options = {});

}  // namespace outfit
