// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <string>
#include <vector>

#include "dmx/autodiff/tensor.hpp"
#include "dmx/rng.hpp"

namespace dmx::ad {

/// A stored tensor plus the multiplier applied when it is used.
/// Invariant: the forward pass sees scale * tensor.
struct Param {
  std::string name;
  Tensor tensor;
  float scale = 1.0f;
  bool trainable = true;
  /// Participates in weight rescaling (convolution and, optionally, LSTM weights).
  bool rescalable = false;

  /// scale * tensor, recorded on the graph so gradients reach the stored tensor.
  Tensor effective() const;
};

using ParamList = std::vector<Param*>;

/// Independent uniform draws with variance 1/fan_in.
Tensor he_init(const Shape& shape, std::size_t fan_in, Rng& rng);

/// Population standard deviation of a tensor's values.
double tensor_std(const Tensor& t);

/// With alpha = std(tensor) / reference: tensor <- tensor / sqrt(alpha),
/// scale <- sqrt(alpha), so scale * tensor is unchanged. A zero-std tensor
/// is left alone with a warning. Returns whether the rescale was applied.
bool rescale_param(Param& p, double reference);

std::size_t count_elements(const ParamList& params);

}  // namespace dmx::ad
