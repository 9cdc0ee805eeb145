#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include <json.hpp>

#include "outfit/checkpoint.hpp"
#include "outfit/data.hpp"
#include "outfit/losses.hpp"
#include "outfit/sampling.hpp"

namespace outfit {

struct TrainConfig {
  std::size_t batch_size = 50;
  double lr_initial = 1e-3;
  std::size_t lr_halving_interval = 10;  // epochs
  std::size_t epochs_cp = 30;
  std::size_t epochs_cir = 30;
  double margin = 2.0;
  std::size_t negatives = 10;
  double curriculum_switch_fraction = 0.5;
  std::uint64_t seed = 0;
  double grad_clip = 5.0;  // global norm; 0 disables
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  FocalParams focal;
  bool use_all = true;
  bool use_hard = true;
  DistanceKind distance = DistanceKind::Euclidean;
  NegativeStrategy negative_strategy = NegativeStrategy::Curriculum;
  bool freeze_item_encoders = false;
  // Embed positives and negatives without gradients.
  bool frozen_candidates = false;

  // Learning rate 1e-5.
  static TrainConfig full_scale();
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// lr_initial halved once per completed halving interval.
double learning_rate(const TrainConfig& config, std::size_t epoch);

struct EpochMetrics {
  std::string phase;
  std::size_t epoch = 0;  // zero-based
  double lr = 0.0;
  double train_loss = 0.0;
  std::size_t steps = 0;
  std::string metric_name;  // "valid_auc" or "valid_fitb"
  double valid_metric = 0.0;
  bool best = false;
  std::string stage;  // curriculum stage, CIR only
  std::size_t fallback_draws = 0;
  double seconds = 0.0;
};

nlohmann::json to_json(const EpochMetrics& m);

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  // Stop once this many epochs are complete (0 runs them all). The returned
  // checkpoint carries the state needed to resume.
  std::size_t stop_after = 0;
  // Candidate CP negatives for which this returns true are redrawn.
  RejectFn reject_negative;
};

// Adam with bias correction over the trainable parameters.
class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(nn::ParameterStore& params, double lr);
  const AdamState& state() const { return state_; }
  void restore(AdamState state) { state_ = std::move(state); }

 private:
  double beta1_, beta2_, eps_;
  AdamState state_;
};

// Rescales the trainable gradients so their global L2 norm is at most
// max_norm. Returns the norm before clipping.
double clip_gradients(nn::ParameterStore& params, double max_norm);

// Compatibility pre-training with the focal loss on 1:1 batches of outfits
// and category-preserving corruptions. Keeps the best validation-AUC epoch.
Checkpoint pretrain_cp(const ModelConfig& model_config, const TrainConfig& config,
                       const DatasetSplit& data, const TrainHooks& hooks = {},
                       const Checkpoint* resume = nullptr);

// Retrieval fine-tuning with the set-wise ranking loss. With `init`, the item
// encoders and trunk are copied from it (verified by hash) and its CP head is
// dropped; the CIR head is always fresh. Keeps the best validation-FITB
// (CIR mode) epoch.
Checkpoint finetune_cir(const ModelConfig& model_config, const TrainConfig& config,
                        const DatasetSplit& data, const Checkpoint* init,
                        const TrainHooks& hooks = {}, const Checkpoint* resume = nullptr);

// The retrieval-phase model configuration derived from a CP configuration.
ModelConfig cir_config(ModelConfig config);

// Labelled compatibility sets and FITB questions for the "valid" or "test"
// split: the ones shipped with the dataset, or, when there are none, ones
// derived deterministically from that split's outfits.
std::vector<Outfit> compat_set(const DatasetSplit& data, const std::string& split,
                               std::uint64_t seed, const RejectFn& reject = {});
std::vector<FitbQuestion> fitb_set(const DatasetSplit& data, const std::string& split,
                                   std::uint64_t seed);
const std::vector<Outfit>& split_outfits(const DatasetSplit& data, const std::string& split);

// Reject function for planted-rule datasets: refuses candidate negatives that
// satisfy the planted rule. Empty when the dataset has no latent styles.
RejectFn planted_rule_reject(const DatasetSplit& data);

}  // namespace outfit
