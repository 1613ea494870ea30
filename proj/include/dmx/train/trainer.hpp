// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dmx/audio/dataset.hpp"
#include "dmx/autodiff/adam.hpp"
#include "dmx/model/demucs.hpp"
#include "dmx/rng.hpp"

namespace dmx::train {

enum class LossKind { L1, Mse };

struct TrainConfig {
  int epochs = 400;
  std::size_t batch = 128;
  double lr = 5e-4;
  int lr_decay_epochs = 160;  // lr is divided by lr_decay_factor every this many epochs
  double lr_decay_factor = 5.0;
  LossKind loss = LossKind::L1;
  bool augment = true;
  bool remix_enabled = false;
  double remix_probability = 0.25;
  double remix_lr_ratio = 0.1;
  double remix_lambda = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;  // ContractError
};

/// Step schedule: lr / factor^floor(epoch / decay_epochs).
double learning_rate(const TrainConfig& config, int epoch);

/// est, ref [B, N, C, T]: per-source mean error (absolute or squared),
/// summed over the N sources.
ad::Tensor separation_loss(const ad::Tensor& est, const ad::Tensor& ref, LossKind kind = LossKind::L1);

/// In place, per source: permutation across the batch, circular time shift
/// shared by the channels, channel swap with probability 1/2, sign flip per
/// channel with probability 1/2. Mixtures are always recomputed from the
/// sources, so they stay exact sums.
void augment(std::vector<audio::SourceSet>& batch, Rng& rng);

/// Stacks sources into [B, N, C, T] and mixtures into [B, C, T_valid] with
/// symmetric zero padding to the model's valid length. Returns the left pad.
struct BatchTensors {
  ad::Tensor mix;
  ad::Tensor sources;
  std::size_t left_pad = 0;
};
BatchTensors make_batch(const std::vector<audio::SourceSet>& items, const model::ModelConfig& config);

/// forward on the padded mixture, cropped back to the unpadded length.
ad::Tensor estimate(const model::Model& model, const BatchTensors& batch);

/// Unlabeled excerpts in which a source is silent, per source, at the
/// training rate and channel count.
using UnlabeledSets = std::array<std::vector<audio::Waveform>, audio::kNumSources>;

/// est [1, N, C, T]: mean |est_i - s_i| + lambda * mean |sum_{j != i} est_j - m_i|.
ad::Tensor remix_loss(const ad::Tensor& est, const ad::Tensor& isolated, const ad::Tensor& excerpt,
                      std::size_t source, double lambda);

struct RemixStats {
  bool taken = false;
  std::size_t source = 0;
  double loss = 0.0;
};

/// One extra step on s' = m_i + s_i with the remix optimizer. Draws i
/// uniformly among drums, bass and vocals with a non-empty set, a random
/// segment-length crop of an excerpt of that set, and a non-silent crop of
/// stem i from a random labeled track. Returns taken = false when every
/// eligible set is empty.
RemixStats remix_step(model::Model& model, const UnlabeledSets& sets, const audio::TrackDataset& labeled,
                      const TrainConfig& config, ad::Adam& remix_optim, Rng& rng);

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;        // mean over batches
  double remix_loss = 0.0;  // mean over remix steps taken
  std::size_t batches = 0;
  std::size_t remix_steps = 0;
  std::size_t remix_skipped = 0;  // draws that found no eligible set
  double lr = 0.0;
};

/// One pass over every segment of the dataset in a seed- and epoch-derived
/// order. Sets optim's lr from the schedule. With remix_sets and remix_optim
/// given and remixing enabled, each batch is followed by a remix step with
/// probability remix_probability.
EpochStats train_epoch(model::Model& model, const audio::TrackDataset& dataset, const TrainConfig& config,
                       ad::Adam& optim, int epoch, const UnlabeledSets* remix_sets = nullptr,
                       ad::Adam* remix_optim = nullptr);

/// "epoch=3 loss=... remix_loss=... remix_steps=... lr=..." on one line.
std::string format_epoch(const EpochStats& stats);

struct RunOptions {
  std::filesystem::path out_dir;  // log and checkpoints; empty keeps everything in memory
  int checkpoint_every = 0;       // 0: only the final checkpoint
  std::vector<std::pair<std::string, std::string>> config;  // echoed at the top of the log
  std::function<void(const EpochStats&)> on_epoch;
};

/// Full training run: epochs of train_epoch with the schedule, an epoch log
/// (train.log) and checkpoints (epoch_NNNN.dmx, final.dmx) under out_dir.
std::vector<EpochStats> run_training(model::Model& model, const audio::TrackDataset& dataset, const TrainConfig& config,
                              const UnlabeledSets* remix_sets = nullptr, const RunOptions& options = {});

}  // namespace dmx::train
