#include "outfit/losses.hpp"

#include <algorithm>
#include <cmath>

#include "outfit/errors.hpp"

namespace outfit {

namespace {

void check_label(int label) {
  if (label != 0 && label != 1) {
    throw InputError("focal loss: label must be 0 or 1, got " + std::to_string(label));
  }
}

struct FocalTerm {
  double loss;
  double dloss_dscore;
};

FocalTerm focal_term(double score, int label, const FocalParams& params) {
  check_label(label);
  const bool clamped = score < kScoreClamp || score > 1.0 - kScoreClamp;
  const double s = std::clamp(score, kScoreClamp, 1.0 - kScoreClamp);
  const double pt = label == 1 ? s : 1.0 - s;
  const double at = label == 1 ? params.alpha : 1.0 - params.alpha;
  const double q = 1.0 - pt;
  const double logp = std::log(pt);
  const double modulator = params.gamma == 0.0 ? 1.0 : std::pow(q, params.gamma);
  const double loss = -at * modulator * logp;

  double dpt = 0.0;
  if (!clamped) {
    const double dmod = params.gamma == 0.0 ? 0.0 : params.gamma * std::pow(q, params.gamma - 1.0);
    // d/dpt [-(1-pt)^g log pt] = g (1-pt)^(g-1) log pt - (1-pt)^g / pt
    dpt = at * (dmod * logp - modulator / pt);
  }
  return {loss, label == 1 ? dpt : -dpt};
}

}  // namespace

double focal_loss(double score, int label, const FocalParams& params) {
  return focal_term(score, label, params).loss;
}

nn::Var focal_loss(const nn::Var& scores, std::span<const int> labels, const FocalParams& params) {
  const std::size_t n = scores.value().size();
  if (n != labels.size() || n == 0) {
    throw InputError("focal loss: " + std::to_string(n) + " scores for " +
                     std::to_string(labels.size()) + " labels");
  }
  double total = 0.0;
  std::vector<double> grads(n);
  for (std::size_t i = 0; i < n; ++i) {
    const FocalTerm term = focal_term(scores.value()[i], labels[i], params);
    total += term.loss;
    grads[i] = term.dloss_dscore / static_cast<double>(n);
  }
  return nn::make_op("focal_loss", nn::Tensor::scalar(total / static_cast<double>(n)), {scores},
                     [grads = std::move(grads)](nn::Node& node) {
                       if (!node.inputs[0]->requires_grad) return;
                       auto& g = node.inputs[0]->grad_buffer();
                       for (std::size_t i = 0; i < grads.size(); ++i) g[i] += node.grad[0] * grads[i];
                     });
}

RankingLoss setwise_ranking_loss(const RankingBatchItem& item, const RankingOptions& options) {
  if (item.negatives.empty()) throw InputError("ranking loss: at least one negative is required");
  if (!(item.margin > 0.0)) throw InputError("ranking loss: margin must be positive");
  if (!options.use_all && !options.use_hard) {
    throw ConfigError("ranking loss: at least one of the all/hard terms must be enabled");
  }

  const nn::Var d_pos = distance(item.target, item.positive, options.distance);
  std::vector<nn::Var> d_neg;
  d_neg.reserve(item.negatives.size());
  for (const auto& neg : item.negatives) d_neg.push_back(distance(item.target, neg, options.distance));

  RankingLoss out;
  const nn::Var shifted = nn::add_scalar(d_pos, item.margin);
  if (options.use_all) {
    std::vector<nn::Var> hinges;
    hinges.reserve(d_neg.size());
    for (const auto& dn : d_neg) hinges.push_back(nn::relu(nn::sub(shifted, dn)));
    out.all = nn::mean(nn::concat_rows(hinges));
  }
  if (options.use_hard) {
    out.hard = nn::relu(nn::sub(shifted, nn::min_of(d_neg)));
  }
  if (out.all.defined() && out.hard.defined()) {
    out.total = nn::add(out.all, out.hard);
  } else {
    out.total = out.all.defined() ? out.all : out.hard;
  }
  return out;
}

}  // namespace outfit
