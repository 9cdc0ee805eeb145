#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "outfit/outfit_encoder.hpp"

namespace outfit {

using ParameterMap = std::map<std::string, nn::Tensor>;

struct AdamState {
  ParameterMap m;
  ParameterMap v;
  std::uint64_t step = 0;
  bool operator==(const AdamState&) const = default;
};

// Everything needed to continue an interrupted run.
struct TrainState {
  std::string phase;  // "cp" or "cir"
  std::size_t epochs_done = 0;
  ParameterMap last_params;
  AdamState adam;
  double best_metric = 0.0;
  std::size_t best_epoch = 0;
  nlohmann::json train_config;
  bool operator==(const TrainState&) const = default;
};

// Model configuration and weights; `params` are the weights to serve (the
// best validation epoch for trained checkpoints).
struct Checkpoint {
  ModelConfig config;
  ParameterMap params;
  std::optional<TrainState> train;
  bool operator==(const Checkpoint&) const = default;
};

Checkpoint snapshot(const OutfitModel& model);

// Copies `params` into the model. Every model parameter must be present with
// the same shape; extra entries are an error unless `allow_extra`.
void load_params(OutfitModel& model, const ParameterMap& params, bool allow_extra = false);

// Builds a model from the checkpoint's configuration and weights.
std::unique_ptr<OutfitModel> instantiate(const Checkpoint& checkpoint);

// Binary layout, little endian:
//   "OTFCKPT\0"  u32 version  u64 len + config JSON
//   u64 count, then per parameter: u64 len + name, u32 rank, u64 extents, f64 data
//   u8 has_train_state [+ train state]
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a over the configuration and every parameter (name, shape, bytes).
std::uint64_t fingerprint(const ModelConfig& config, const ParameterMap& params);
std::uint64_t fingerprint(const OutfitModel& model);
inline std::uint64_t fingerprint(const Checkpoint& c) { return fingerprint(c.config, c.params); }

// FNV-1a over the parameters whose names start with `prefix`.
std::uint64_t parameter_hash(const ParameterMap& params, const std::string& prefix = "");
std::uint64_t parameter_hash(const nn::ParameterStore& store, const std::string& prefix = "");

std::string hex64(std::uint64_t v);

}  // namespace outfit
