// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dmx/autodiff/adam.hpp"

#include <cmath>

#include "dmx/error.hpp"

namespace dmx::ad {

Adam::Adam(ParamList params, AdamOptions options) : options_(options) {
  for (Param* p : params)
    if (p->trainable) params_.push_back(p);
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Param* p : params_) {
    m_.emplace_back(p->tensor.numel(), 0.0f);
    v_.emplace_back(p->tensor.numel(), 0.0f);
  }
}

void Adam::step() {
  for (Param* p : params_)
    if (!p->tensor.has_grad()) throw ContractError("adam step: parameter " + p->name + " has no gradient");
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const float step = static_cast<float>(options_.lr / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(options_.eps);
  const float fb1 = static_cast<float>(b1), fb2 = static_cast<float>(b2);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i]->tensor.data();
    auto g = params_[i]->tensor.grad();
    float* m = m_[i].data();
    float* v = v_[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = fb1 * m[j] + (1.0f - fb1) * g[j];
      v[j] = fb2 * v[j] + (1.0f - fb2) * g[j] * g[j];
      w[j] -= step * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
    }
  }
}

void Adam::zero_grad() {
  for (Param* p : params_) p->tensor.zero_grad();
}

}  // namespace dmx::ad
