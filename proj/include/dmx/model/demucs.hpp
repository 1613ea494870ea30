// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "dmx/audio/waveform.hpp"
#include "dmx/autodiff/checkpoint.hpp"
#include "dmx/autodiff/ops.hpp"
#include "dmx/autodiff/param.hpp"

namespace dmx::model {

struct ModelConfig {
  int depth = 6;
  int input_channels = 2;
  int initial_channels = 48;
  int growth = 2;
  int kernel = 8;
  int stride = 4;
  int lstm_layers = 2;
  bool use_glu = true;
  bool use_bilstm = true;
  /// Reference scale for weight rescaling; 0 disables it.
  double rescale_reference = 0.1;
  /// Also rescale LSTM input-hidden weights.
  bool rescale_lstm = false;
  int sources = 4;
  /// Rate the model is trained at; separate() expects input at this rate.
  int sample_rate = 44100;

  void validate() const;  // ContractError
  /// Channels after encoder layer i (1-based); i = 0 gives the input channels.
  int channels(int i) const;
};

struct EncoderLayer {
  ad::Param conv_w, conv_b;        // K, S, C_{i-1} -> C_i, ReLU
  ad::Param rewrite_w, rewrite_b;  // 1x1, C_i -> 2 C_i with GLU (C_i with ReLU without GLU)
};

struct DecoderLayer {
  ad::Param conv_w, conv_b;        // K=3, S=1, C_i -> C_i, ReLU
  ad::Param rewrite_w, rewrite_b;  // 1x1 on concat(stream, skip): 2 C_i -> 2 C_i with GLU
  ad::Param deconv_w, deconv_b;    // transposed K, S, C_i -> C_{i-1} (N C_0 for layer 1)
};

struct LstmDirection {
  ad::Param w_ih, w_hh, bias;
};

class Model {
 public:
  ModelConfig config;
  std::vector<EncoderLayer> encoder;                          // layer 1 first
  std::vector<std::pair<LstmDirection, LstmDirection>> lstm;  // empty without BiLSTM
  ad::Param post_w, post_b;                                   // 1x1, 2 C_L -> C_L, ReLU
  std::vector<DecoderLayer> decoder;                          // layer L first

  /// Every parameter in a fixed order (the checkpoint order).
  ad::ParamList params();
  std::size_t num_parameters();
};

/// He-initialized model, rescaled when config.rescale_reference > 0.
/// Deterministic in (config, seed).
Model new_model(const ModelConfig& config, std::uint64_t seed);

/// Number of scalar parameters new_model(config) allocates, without allocating.
std::size_t parameter_count(const ModelConfig& config);

/// Smallest length >= length that every encoder level divides exactly and
/// that the decoder reproduces.
std::size_t valid_length(std::size_t length, const ModelConfig& config);

/// Encoder output length after `levels` layers; requires a valid chain.
std::size_t encoded_length(std::size_t length, const ModelConfig& config, int levels);

/// Intermediate activations, filled when passed to forward().
struct ForwardTrace {
  std::vector<ad::Tensor> encoder;  // post-GLU output of each encoder layer (the skips)
  ad::Tensor bottleneck;
};

/// mix[B, C_0, T] with T valid -> [B, N, C_0, T].
ad::Tensor forward(const Model& model, const ad::Tensor& mix, ForwardTrace* trace = nullptr);

/// Whole-track inference: symmetric zero padding to a valid length, forward,
/// trim. The wave must have config.input_channels channels.
audio::SourceSet separate(const Model& model, const audio::Waveform& wave);

ad::CheckpointHeader checkpoint_header(const ModelConfig& config);
ModelConfig config_from_header(const ad::CheckpointHeader& header);

void save_model(const std::filesystem::path& path, Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace dmx::model
