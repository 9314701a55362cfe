#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "pvclient/data.hpp"
#include "pvclient/model.hpp"
#include "pvclient/tensor.hpp"

namespace pvclient::train {

using ad::Tensor;

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  std::size_t epochs = 10;
  std::uint64_t seed = 42;
  std::optional<double> clip_norm;  // global gradient-norm clip, off by default

  void validate() const;
};

// Mean of squared differences; shapes must match.
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  // Zeroed moment buffers shaped like the given parameters.
  static AdamState for_params(std::span<const Tensor> params);
};

// One bias-corrected Adam update. Parameters that received no gradient are
// treated as having a zero gradient. grad_scale multiplies every gradient
// (global-norm clipping).
void adam_step(std::span<Tensor> params, AdamState& state, double lr, double grad_scale = 1.0);

// Stacks windows into H [B x L x C] and G [B x T].
Tensor stack_inputs(std::span<const data::WindowSample* const> windows, std::size_t channels);
Tensor stack_targets(std::span<const data::WindowSample* const> windows);

// Mean forward MSE over windows (no gradient), batched by batch_size.
double evaluate_loss(const model::PvClient& model, std::span<const data::WindowSample> windows,
                     std::size_t batch_size = 256);

struct TrainLog {
  double initial_loss = 0.0;         // mean train MSE before the first step
  std::vector<double> epoch_loss;    // mean batch loss per epoch
  std::vector<double> final_loss;    // post-epoch full-pass train MSE (only with track_full_loss)
  std::size_t steps = 0;
};

struct TrainHooks {
  bool track_full_loss = false;
  std::function<void(std::size_t epoch, double loss)> on_epoch;
};

// Mini-batch Adam over shuffled windows; loss on the standardized scale.
TrainLog train(model::PvClient& model, std::span<const data::WindowSample> windows,
               const TrainConfig& cfg, const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------
// Checkpoint: "PVCL", u32 version, u64 header length, JSON header, then raw
// little-endian doubles in tensor-table order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  model::ModelConfig config;
  model::VariantFlags flags;
  std::optional<data::Standardizer> standardizer;
  double capacity = 0.0;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const model::PvClient& model,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  CheckpointMeta meta;
  model::PvClient model;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
// Loads tensor values into an existing model; the table must match its parameters.
CheckpointMeta load_checkpoint_into(const std::filesystem::path& path, model::PvClient& model);

}  // namespace pvclient::train
