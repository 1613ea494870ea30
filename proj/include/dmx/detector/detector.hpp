// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dmx/audio/waveform.hpp"
#include "dmx/autodiff/checkpoint.hpp"
#include "dmx/autodiff/param.hpp"
#include "dmx/detector/scattering.hpp"
#include "dmx/rng.hpp"

namespace dmx::detector {

/// One value per source per window.
using SourceSeries = std::array<std::vector<double>, audio::kNumSources>;
using SourceLabels = std::array<std::vector<std::uint8_t>, audio::kNumSources>;

inline constexpr double kLabelThresholdDb = -13.0;

struct DetectorConfig {
  int input_channels = 7;
  int frequencies = 48;
  int block1_hidden = 128;  // two K=5 convolutions
  int block1_out = 256;     // K=1 convolution
  int block2_hidden = 256;
  int block2_out = 512;
  int collapse_channels = 1024;
  int lstm_hidden = 1024;
  int lstm_layers = 2;
  double dropout = 0.18;            // between LSTM layers, training only
  double compression_floor = 1e-4;  // input x -> log(1 + x / floor)

  /// Narrow widths that train on one core in minutes.
  static DetectorConfig desk();

  void validate() const;  // ContractError on non-positive sizes
  /// Frequency rows left after the two pools (the collapsing kernel height).
  std::size_t collapsed_frequencies() const;
};

/// Each pool is K=5, S=2 with no padding; the K=5 convolutions are padded
/// to keep length.
inline constexpr std::size_t kMinWindows = 13;
std::size_t pooled_length(std::size_t n);
/// Output frames for a given number of windows; ShapeError below kMinWindows.
std::size_t output_frames(std::size_t windows);
/// Window at the center of output frame j's pooling footprint.
inline std::size_t frame_center_window(std::size_t j) { return 4 * j + 6; }
/// Output frame whose center window is closest to w.
std::size_t nearest_frame(std::size_t window, std::size_t frames);

struct Conv {
  ad::Param weight, bias;
};

struct Norm {
  ad::Param gamma, beta, running_mean, running_var;  // running stats are not trainable
};

struct Recurrent {
  ad::Param w_ih, w_hh, bias;
};

struct DetectorModel {
  DetectorConfig config;
  Norm input_norm;
  std::array<Conv, 3> block1;
  Norm norm1;
  std::array<Conv, 3> block2;
  Norm norm2;
  Conv collapse;                                    // kernel (F'', 1)
  std::vector<std::pair<Recurrent, Recurrent>> lstm;  // {forward, backward}
  Conv head;                                        // 1x1, 2H -> H
  Norm head_norm;
  Conv out;                                         // 1x1, H -> 4

  ad::ParamList params();
  std::size_t num_parameters();
};

DetectorModel new_detector(const DetectorConfig& config, std::uint64_t seed);

/// feats [B, C, F, T] of raw (uncompressed) scattering values -> logits [B, 4, T''].
/// Training mode uses batch statistics, updates the running statistics and
/// applies dropout with rng.
ad::Tensor detector_logits(DetectorModel& model, const ad::Tensor& feats, bool training, Rng* rng = nullptr);

/// feats [C, F, T] -> silence probabilities [4, T''] in eval mode.
ad::Tensor detector_forward(DetectorModel& model, const ad::Tensor& feats);

/// Probabilities spread back onto the window grid: window w takes the
/// output frame nearest to it.
SourceSeries window_probabilities(DetectorModel& model, const ad::Tensor& feats);

/// Relative volume (dB) of every source over every window of the grid at
/// the track's own rate. A window whose mixture is digital zero counts as
/// silent for every source (-inf).
SourceSeries window_volumes(const audio::SourceSet& track);
SourceLabels label_windows(const audio::SourceSet& track, double threshold_db = kLabelThresholdDb);

/// Per-source summed binary cross-entropy: sources * mean BCE.
ad::Tensor detection_loss(const ad::Tensor& logits, const ad::Tensor& targets);

/// Probability that a random positive outscores a random negative, ties
/// counting one half. NaN when either class is empty.
double auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

struct DetectorExample {
  std::string name;
  ad::Tensor features;  // [C, F, T_w]
  SourceLabels labels;
  SourceSeries volumes;
};

/// Features from the mixture (downmixed, 16 kHz) and labels from the stems.
/// An empty cache_dir disables the feature cache.
DetectorExample make_example(const audio::SourceSet& track, const std::string& name,
                             const std::filesystem::path& cache_dir = {}, double threshold_db = kLabelThresholdDb);

struct DetectorTrainOptions {
  int epochs = 40;
  std::size_t batch = 64;
  double lr = 5e-4;
  std::size_t crop_windows = 45;  // 9 output frames
  std::uint64_t seed = 0;
};

struct DetectorEpoch {
  int epoch = 0;
  double loss = 0.0;
  std::size_t batches = 0;
};

/// Adam on the summed BCE over random crops; every epoch visits each
/// example at a fresh random offset with crops tiling its windows.
/// ContractError when no example is long enough for one crop.
DetectorModel train_detector(const std::vector<DetectorExample>& examples, const DetectorConfig& config,
                             const DetectorTrainOptions& options, std::vector<DetectorEpoch>* log = nullptr);

ad::CheckpointHeader detector_header(const DetectorConfig& config);
void save_detector(const std::filesystem::path& path, DetectorModel& model);
DetectorModel load_detector(const std::filesystem::path& path);

}  // namespace dmx::detector
