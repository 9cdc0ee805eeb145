#include "outfit/training.hpp"

#include <chrono>
#include <cmath>

#include <spdlog/spdlog.h>

#include "outfit/errors.hpp"
#include "outfit/eval.hpp"

namespace outfit {
namespace {

constexpr std::uint64_t kPhaseCp = 1;
constexpr std::uint64_t kPhaseCir = 2;
constexpr std::uint64_t kValidationStream = 99;

ParameterMap current_params(const OutfitModel& model) { return snapshot(model).params; }

void apply_trainability(OutfitModel& model, const TrainConfig& config) {
  const bool on = !config.freeze_item_encoders;
  model.params().set_trainable_prefix("image.", on);
  model.params().set_trainable_prefix("text.", on);
}

void check_finite_loss(double loss, const char* phase, std::size_t epoch, std::size_t step, double lr) {
  if (std::isfinite(loss)) return;
  const std::string msg = fmt::format(
      "{} training diverged: loss {} at epoch {} step {} (lr {}); lower the learning rate or "
      "enable gradient clipping",
      phase, loss, epoch, step, lr);
  spdlog::error("{}", msg);
  throw NumericError(msg);
}

struct RunState {
  std::size_t epochs_done = 0;
  double best_metric = -1.0;
  std::size_t best_epoch = 0;
  ParameterMap best_params;
};

void restore_run(const Checkpoint& resume, const char* phase, const ModelConfig& model_config,
                 const TrainConfig& config, OutfitModel& model, Adam& adam, RunState& run) {
  if (!resume.train) throw ConfigError("resume checkpoint carries no training state");
  const TrainState& s = *resume.train;
  if (s.phase != phase) {
    throw ConfigError("resume checkpoint is from the '" + s.phase + "' phase, not '" + phase + "'");
  }
  if (!(resume.config == model_config)) throw ConfigError("resume checkpoint model config differs");
  if (s.train_config != nlohmann::json(config)) {
    throw ConfigError("resume checkpoint was trained with a different training config");
  }
  load_params(model, s.last_params);
  adam.restore(s.adam);
  run.epochs_done = s.epochs_done;
  run.best_metric = s.best_metric;
  run.best_epoch = s.best_epoch;
  run.best_params = resume.params;
}

Checkpoint finish(const OutfitModel& model, const char* phase, const TrainConfig& config,
                  const Adam& adam, const RunState& run) {
  Checkpoint c;
  c.config = model.config();
  c.params = run.best_params.empty() ? current_params(model) : run.best_params;
  TrainState s;
  s.phase = phase;
  s.epochs_done = run.epochs_done;
  s.last_params = current_params(model);
  s.adam = adam.state();
  s.best_metric = run.best_metric;
  s.best_epoch = run.best_epoch;
  s.train_config = config;
  c.train = std::move(s);
  return c;
}

template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

}  // namespace

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.lr_initial = 1e-5;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(lr_initial > 0.0)) throw ConfigError("lr_initial must be positive");
  if (lr_halving_interval == 0) throw ConfigError("lr_halving_interval must be positive");
  if (!(margin > 0.0)) throw ConfigError("margin must be positive");
  if (negatives == 0) throw ConfigError("negatives must be positive");
  if (!(curriculum_switch_fraction >= 0.0 && curriculum_switch_fraction <= 1.0)) {
    throw ConfigError("curriculum_switch_fraction must lie in [0, 1]");
  }
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative");
  if (!use_all && !use_hard) throw ConfigError("at least one ranking term must be enabled");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{
      {"batch_size", c.batch_size},
      {"lr_initial", c.lr_initial},
      {"lr_halving_interval", c.lr_halving_interval},
      {"epochs_cp", c.epochs_cp},
      {"epochs_cir", c.epochs_cir},
      {"margin", c.margin},
      {"negatives", c.negatives},
      {"curriculum_switch_fraction", c.curriculum_switch_fraction},
      {"seed", c.seed},
      {"grad_clip", c.grad_clip},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"adam_eps", c.adam_eps},
      {"focal_gamma", c.focal.gamma},
      {"focal_alpha", c.focal.alpha},
      {"use_all", c.use_all},
      {"use_hard", c.use_hard},
      {"distance", c.distance == DistanceKind::Euclidean ? "euclidean" : "squared_euclidean"},
      {"negative_strategy", to_string(c.negative_strategy)},
      {"freeze_item_encoders", c.freeze_item_encoders},
      {"frozen_candidates", c.frozen_candidates},
  };
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.lr_initial = j.at("lr_initial").get<double>();
    c.lr_halving_interval = j.at("lr_halving_interval").get<std::size_t>();
    c.epochs_cp = j.at("epochs_cp").get<std::size_t>();
    c.epochs_cir = j.at("epochs_cir").get<std::size_t>();
    c.margin = j.at("margin").get<double>();
    c.negatives = j.at("negatives").get<std::size_t>();
    c.curriculum_switch_fraction = j.at("curriculum_switch_fraction").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.adam_beta1 = j.at("adam_beta1").get<double>();
    c.adam_beta2 = j.at("adam_beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.focal.gamma = j.at("focal_gamma").get<double>();
    c.focal.alpha = j.at("focal_alpha").get<double>();
    c.use_all = j.at("use_all").get<bool>();
    c.use_hard = j.at("use_hard").get<bool>();
    c.distance = j.at("distance").get<std::string>() == "euclidean" ? DistanceKind::Euclidean
                                                                      : DistanceKind::SquaredEuclidean;
    c.negative_strategy = parse_negative_strategy(j.at("negative_strategy").get<std::string>());
    c.freeze_item_encoders = j.at("freeze_item_encoders").get<bool>();
    c.frozen_candidates = j.at("frozen_candidates").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
}

double learning_rate(const TrainConfig& config, std::size_t epoch) {
  return std::ldexp(config.lr_initial, -static_cast<int>(epoch / config.lr_halving_interval));
}

nlohmann::json to_json(const EpochMetrics& m) {
  nlohmann::json j{{"phase", m.phase},
                   {"epoch", m.epoch},
                   {"lr", m.lr},
                   {"train_loss", m.train_loss},
                   {"steps", m.steps},
                   {m.metric_name, m.valid_metric},
                   {"best", m.best},
                   {"seconds", m.seconds}};
  if (!m.stage.empty()) {
    j["stage"] = m.stage;
    j["fallback_draws"] = m.fallback_draws;
  }
  return j;
}

void Adam::step(nn::ParameterStore& params, double lr) {
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(beta1_, t);
  const double c2 = 1.0 - std::pow(beta2_, t);
  for (const auto& [name, var] : params.all()) {
    if (!params.trainable(name) || !var.has_grad()) continue;
    auto [mit, m_new] = state_.m.try_emplace(name, nn::Tensor(var.shape()));
    auto [vit, v_new] = state_.v.try_emplace(name, nn::Tensor(var.shape()));
    auto& m = mit->second.storage();
    auto& v = vit->second.storage();
    const auto& g = var.grad().storage();
    nn::Var p = var;
    auto& w = p.mutable_value().storage();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

double clip_gradients(nn::ParameterStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& var : params.trainable_params()) {
    if (!var.has_grad()) continue;
    for (double g : var.grad().storage()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& var : params.trainable_params()) {
      if (!var.has_grad()) continue;
      for (double& g : var.node()->grad.storage()) g *= f;
    }
  }
  return norm;
}

ModelConfig cir_config(ModelConfig config) {
  config.cp_head = false;
  config.cir_head = true;
  return config;
}

RejectFn planted_rule_reject(const DatasetSplit& data) {
  if (data.latent_style.empty()) return {};
  return [&data](const std::vector<std::string>& items) { return planted_compatible(data, items); };
}

namespace {
std::uint64_t split_tag(const std::string& split) { return split == "train" ? 0 : split == "valid" ? 1 : 2; }
}  // namespace

const std::vector<Outfit>& split_outfits(const DatasetSplit& data, const std::string& split) {
  if (split == "train") return data.train;
  if (split == "valid") return data.valid;
  if (split == "test") return data.test;
  throw InputError("split must be train, valid or test, got '" + split + "'");
}

std::vector<Outfit> compat_set(const DatasetSplit& data, const std::string& split,
                               std::uint64_t seed, const RejectFn& reject) {
  const auto& outfits = split_outfits(data, split);
  if (split == "valid" && !data.compat_valid.empty()) return data.compat_valid;
  if (split == "test" && !data.compat_test.empty()) return data.compat_test;
  std::vector<Outfit> out;
  Rng rng(derive_seed(seed, {kValidationStream, kPhaseCp, split_tag(split)}));
  std::vector<Outfit> all = data.train;
  all.insert(all.end(), data.valid.begin(), data.valid.end());
  all.insert(all.end(), data.test.begin(), data.test.end());
  const auto keys = outfit_keys(all);
  for (const auto& o : outfits) {
    if (o.items.size() < 2) continue;
    Outfit pos = o;
    pos.label = 1;
    out.push_back(pos);
    out.push_back(make_negative_outfit(data.catalog, o, keys, rng, reject));
  }
  return out;
}

std::vector<FitbQuestion> fitb_set(const DatasetSplit& data, const std::string& split,
                                   std::uint64_t seed) {
  const auto& outfits = split_outfits(data, split);
  if (split == "valid" && !data.fitb_valid.empty()) return data.fitb_valid;
  if (split == "test" && !data.fitb_test.empty()) return data.fitb_test;
  return make_fitb_questions(data.catalog, outfits,
                             derive_seed(seed, {kValidationStream, kPhaseCir, split_tag(split)}));
}

Checkpoint pretrain_cp(const ModelConfig& model_config, const TrainConfig& config,
                       const DatasetSplit& data, const TrainHooks& hooks, const Checkpoint* resume) {
  config.validate();
  if (!model_config.cp_head) throw ConfigError("CP pre-training needs a model with a CP head");
  if (data.train.empty()) throw InputError("no training outfits");
  OutfitModel model(model_config);
  apply_trainability(model, config);
  Adam adam(config.adam_beta1, config.adam_beta2, config.adam_eps);
  RunState run;
  if (resume) restore_run(*resume, "cp", model_config, config, model, adam, run);

  const RejectFn reject = hooks.reject_negative;
  const auto validation = compat_set(data, "valid", config.seed, reject);
  const auto valid_labels = outfit_labels(validation);
  std::vector<Outfit> all = data.train;
  all.insert(all.end(), data.valid.begin(), data.valid.end());
  all.insert(all.end(), data.test.begin(), data.test.end());
  const auto positive_keys = outfit_keys(all);
  const std::size_t half = config.batch_size / 2;

  while (run.epochs_done < config.epochs_cp) {
    if (hooks.stop_after != 0 && run.epochs_done >= hooks.stop_after) break;
    const auto started = std::chrono::steady_clock::now();
    const std::size_t epoch = run.epochs_done;
    const double lr = learning_rate(config, epoch);
    Rng rng(derive_seed(config.seed, {kPhaseCp, epoch}));
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      if (data.train[i].items.size() >= 2) order.push_back(i);
    }
    shuffle_in_place(order, rng);

    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += half) {
      const std::size_t end = std::min(order.size(), begin + half);
      std::vector<const Outfit*> batch;
      std::vector<Outfit> negatives;
      negatives.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        const Outfit& pos = data.train[order[i]];
        batch.push_back(&pos);
        negatives.push_back(make_negative_outfit(data.catalog, pos, positive_keys, rng, reject));
      }
      for (const auto& n : negatives) batch.push_back(&n);
      std::vector<int> labels(batch.size(), 0);
      std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(end - begin), 1);

      std::vector<const Item*> items;
      for (const Outfit* o : batch) {
        for (const auto& id : o->items) items.push_back(&data.catalog.at(id));
      }
      model.params().zero_grad();
      const nn::Var features = model.encode_items(items);
      std::vector<nn::Var> scores;
      std::size_t offset = 0;
      for (const Outfit* o : batch) {
        scores.push_back(model.cp_forward(nn::slice_rows(features, offset, o->items.size())));
        offset += o->items.size();
      }
      const nn::Var loss = focal_loss(nn::concat_rows(scores), labels, config.focal);
      check_finite_loss(loss.item(), "cp", epoch, steps, lr);
      nn::backward(loss);
      clip_gradients(model.params(), config.grad_clip);
      adam.step(model.params(), lr);
      loss_sum += loss.item();
      ++steps;
    }

    const double valid_auc = auc(cp_scores(model, data.catalog, validation), valid_labels);
    EpochMetrics m;
    m.phase = "cp";
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    m.steps = steps;
    m.metric_name = "valid_auc";
    m.valid_metric = valid_auc;
    m.best = valid_auc > run.best_metric;
    if (m.best) {
      run.best_metric = valid_auc;
      run.best_epoch = epoch;
      run.best_params = current_params(model);
    }
    run.epochs_done = epoch + 1;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    spdlog::info("cp epoch {} loss {:.5f} valid_auc {:.4f} lr {:g}", epoch, m.train_loss, valid_auc, lr);
    if (hooks.on_epoch) hooks.on_epoch(m);
  }
  return finish(model, "cp", config, adam, run);
}

Checkpoint finetune_cir(const ModelConfig& model_config, const TrainConfig& config,
                        const DatasetSplit& data, const Checkpoint* init, const TrainHooks& hooks,
                        const Checkpoint* resume) {
  config.validate();
  if (!model_config.cir_head) throw ConfigError("CIR fine-tuning needs a model with a CIR head");
  if (model_config.cp_head) throw ConfigError("CIR fine-tuning drops the CP head; set cp_head off");
  if (data.train.empty()) throw InputError("no training outfits");
  OutfitModel model(model_config);

  if (init && !resume) {
    if (!(init->config.items == model_config.items) || !(init->config.encoder == model_config.encoder)) {
      throw ConfigError("init checkpoint is not config-compatible with the CIR model");
    }
    ParameterMap merged = current_params(model);
    for (auto& [name, value] : merged) {
      if (name.rfind("cir_head.", 0) == 0) continue;
      auto it = init->params.find(name);
      if (it == init->params.end()) throw FormatError("init checkpoint is missing '" + name + "'");
      value = it->second;
    }
    load_params(model, merged);
    for (const char* prefix : {"image.", "text.", "trunk."}) {
      if (parameter_hash(model.params(), prefix) != parameter_hash(init->params, prefix)) {
        throw NumericError(std::string("weights under '") + prefix +
                           "' differ from the init checkpoint after transfer");
      }
    }
    spdlog::info("cir: transferred encoder and trunk weights, trunk hash {}",
                 hex64(parameter_hash(init->params, "trunk.")));
  }
  apply_trainability(model, config);
  Adam adam(config.adam_beta1, config.adam_beta2, config.adam_eps);
  RunState run;
  if (resume) restore_run(*resume, "cir", model_config, config, model, adam, run);

  const auto validation = fitb_set(data, "valid", config.seed);
  const RankingOptions options{config.use_all, config.use_hard, config.distance};

  while (run.epochs_done < config.epochs_cir) {
    if (hooks.stop_after != 0 && run.epochs_done >= hooks.stop_after) break;
    const auto started = std::chrono::steady_clock::now();
    const std::size_t epoch = run.epochs_done;
    const double lr = learning_rate(config, epoch);
    const CurriculumStage stage = stage_for_epoch(config.negative_strategy, epoch, config.epochs_cir,
                                                  config.curriculum_switch_fraction);
    Rng rng(derive_seed(config.seed, {kPhaseCir, epoch}));
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      if (data.train[i].items.size() >= 2) order.push_back(i);
    }
    shuffle_in_place(order, rng);

    SamplerStats stats;
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      struct Instance {
        CirInstance cir;
        std::vector<std::string> negatives;
      };
      std::vector<Instance> batch;
      for (std::size_t i = begin; i < end; ++i) {
        auto inst = make_cir_instance(data.train[order[i]], rng);
        if (!inst) continue;
        const Item& positive = data.catalog.at(inst->positive);
        auto negs = sample_negatives(positive, inst->partial, data.catalog, stage, config.negatives,
                                     rng, &stats);
        batch.push_back({std::move(*inst), std::move(negs)});
      }
      if (batch.empty()) continue;

      std::vector<const Item*> partial_items;
      std::vector<const Item*> candidate_items;
      for (const auto& b : batch) {
        for (const auto& id : b.cir.partial) partial_items.push_back(&data.catalog.at(id));
        candidate_items.push_back(&data.catalog.at(b.cir.positive));
        for (const auto& id : b.negatives) candidate_items.push_back(&data.catalog.at(id));
      }
      model.params().zero_grad();
      const nn::Var partial_features = model.encode_items(partial_items);
      nn::Var candidate_features;
      if (config.frozen_candidates) {
        nn::NoGradGuard no_grad;
        candidate_features = model.encode_items(candidate_items);
      } else {
        candidate_features = model.encode_items(candidate_items);
      }

      std::vector<nn::Var> losses;
      std::size_t p_off = 0;
      std::size_t c_off = 0;
      for (const auto& b : batch) {
        const Item& positive = data.catalog.at(b.cir.positive);
        const nn::Var t = model.cir_forward(nn::slice_rows(partial_features, p_off, b.cir.partial.size()),
                                            TargetSpec::category(positive.fine_category));
        p_off += b.cir.partial.size();
        RankingBatchItem item;
        item.target = t;
        item.margin = config.margin;
        item.positive = nn::slice_rows(candidate_features, c_off++, 1);
        for (std::size_t j = 0; j < b.negatives.size(); ++j) {
          item.negatives.push_back(nn::slice_rows(candidate_features, c_off++, 1));
        }
        losses.push_back(setwise_ranking_loss(item, options).total);
      }
      const nn::Var loss = nn::mean(nn::concat_rows(losses));
      check_finite_loss(loss.item(), "cir", epoch, steps, lr);
      nn::backward(loss);
      clip_gradients(model.params(), config.grad_clip);
      adam.step(model.params(), lr);
      loss_sum += loss.item();
      ++steps;
    }
    if (stats.fallback_draws > 0) {
      spdlog::info("cir epoch {}: {} negatives drawn from the high-level fallback pool", epoch,
                   stats.fallback_draws);
    }

    const double valid_fitb =
        fitb_accuracy(model, data.catalog, validation, FitbMode::CirDistance).accuracy;
    EpochMetrics m;
    m.phase = "cir";
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    m.steps = steps;
    m.metric_name = "valid_fitb";
    m.valid_metric = valid_fitb;
    m.stage = to_string(stage);
    m.fallback_draws = stats.fallback_draws;
    m.best = valid_fitb > run.best_metric;
    if (m.best) {
      run.best_metric = valid_fitb;
      run.best_epoch = epoch;
      run.best_params = current_params(model);
    }
    run.epochs_done = epoch + 1;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    spdlog::info("cir epoch {} [{}] loss {:.5f} valid_fitb {:.4f} lr {:g}", epoch, m.stage,
                 m.train_loss, valid_fitb, lr);
    if (hooks.on_epoch) hooks.on_epoch(m);
  }
  return finish(model, "cir", config, adam, run);
}

}  // namespace outfit
