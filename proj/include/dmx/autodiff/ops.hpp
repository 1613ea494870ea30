// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "dmx/autodiff/tensor.hpp"
#include "dmx/rng.hpp"

// Differentiable operations. Exactly what the separator and the silence
// detector need; there is no general broadcasting.

namespace dmx::ad {

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float s);

Tensor relu(const Tensor& x);  // gradient at exactly 0 is 0
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Layout.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor pad(const Tensor& x, std::size_t axis, std::size_t left, std::size_t right);

/// Splits the axis into halves (a, b) and returns a * sigmoid(b).
Tensor glu(const Tensor& x, std::size_t axis);

/// x[B,Cin,T], w[Cout,Cin,K], b[Cout] -> [B,Cout,(T+2p-K)/stride+1].
/// Zero padding p on both sides; p = 0 is a valid convolution.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t padding = 0);

/// x[B,Cin,T], w[Cin,Cout,K], b[Cout] -> [B,Cout,(T-1)*stride+K].
/// Adjoint of conv1d with respect to its input.
Tensor conv_transpose1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride);

/// x[B,Cin,H,W], w[Cout,Cin,KH,KW], b[Cout], stride 1, zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t pad_h, std::size_t pad_w);

/// Square window, no padding: [B,C,H,W] -> [B,C,(H-k)/s+1,(W-k)/s+1].
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);

struct BatchNormState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  float momentum = 0.1f;
  float eps = 1e-5f;
};

/// Per-channel normalization over every axis except 1. Training mode uses
/// batch statistics and updates the running estimates; eval mode uses the
/// running estimates only.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training);

/// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& x, float p, Rng& rng, bool training);

/// One unidirectional LSTM layer over x[T,B,I] with gate order
/// (input, forget, cell, output): w_ih[4H,I], w_hh[4H,H], bias[4H].
/// Zero initial state. Returns h for every step, [T,B,H]. With reverse the
/// sequence is consumed from the last step to the first.
Tensor lstm(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias, bool reverse);

struct LstmWeights {
  Tensor w_ih, w_hh, bias;
};

/// Stacked bidirectional LSTM over x[T,B,I]. Layer l consumes the previous
/// layer's [T,B,2H] output; each step concatenates (forward, backward).
/// layers[l] = {forward weights, backward weights}.
Tensor bilstm(const Tensor& x, const std::vector<std::pair<LstmWeights, LstmWeights>>& layers);

// Losses, all reduced with a mean over elements.
Tensor l1_loss(const Tensor& est, const Tensor& ref);
Tensor mse_loss(const Tensor& est, const Tensor& ref);
/// Numerically stable binary cross-entropy on logits.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

}  // namespace dmx::ad
