// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dmx/autodiff/param.hpp"

namespace dmx::ad {

/// Layout, all integers little-endian:
///   "DMX1" | u32 version | u32 param count
///   u32 kind length, kind bytes | u32 field count, per field: u32 length, name bytes, f64 value
///   per param: u32 name length, name bytes | u8 dtype (0 = f32) | u32 rank | u64 extents[rank]
///              | f64 scale | f32 data[numel]
struct CheckpointHeader {
  std::string kind;
  std::vector<std::pair<std::string, double>> fields;

  double field(const std::string& name) const;  // FormatError when absent
  bool has_field(const std::string& name) const;
};

struct StoredParam {
  std::string name;
  Tensor tensor;
  double scale = 1.0;
};

struct Checkpoint {
  CheckpointHeader header;
  std::vector<StoredParam> params;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                     const ParamList& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies stored values into params matched by name and shape.
/// Raises FormatError on any missing, extra or mis-shaped entry.
void restore_params(const Checkpoint& ckpt, const ParamList& params);

}  // namespace dmx::ad
