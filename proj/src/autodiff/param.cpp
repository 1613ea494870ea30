// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dmx/autodiff/param.hpp"

#include <cmath>

#include "dmx/autodiff/ops.hpp"
#include "dmx/error.hpp"
#include "dmx/log.hpp"

namespace dmx::ad {

Tensor Param::effective() const { return scale == 1.0f ? tensor : ad::scale(tensor, scale); }

Tensor he_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw ContractError("he_init: fan_in must be positive");
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  Tensor t(shape);
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

double tensor_std(const Tensor& t) {
  const std::size_t n = t.numel();
  if (n == 0) return 0.0;
  double s = 0.0;
  for (float v : t.values()) s += v;
  const double m = s / static_cast<double>(n);
  double s2 = 0.0;
  for (float v : t.values()) s2 += (v - m) * (v - m);
  return std::sqrt(s2 / static_cast<double>(n));
}

bool rescale_param(Param& p, double reference) {
  if (!(reference > 0.0)) throw ContractError("rescale_param: reference scale must be positive");
  const double sd = tensor_std(p.tensor);
  if (sd == 0.0) {
    log_warn("rescale skipped for " + p.name + ": zero standard deviation");
    return false;
  }
  const double root_alpha = std::sqrt(sd / reference);
  for (float& v : p.tensor.values()) v = static_cast<float>(v / root_alpha);
  p.scale = static_cast<float>(root_alpha);
  return true;
}

std::size_t count_elements(const ParamList& params) {
  std::size_t n = 0;
  for (const Param* p : params) n += p->tensor.numel();
  return n;
}

}  // namespace dmx::ad
