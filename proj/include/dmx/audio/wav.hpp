// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <filesystem>

#include "dmx/audio/waveform.hpp"

namespace dmx::audio {

enum class WavEncoding { Pcm16, Float32 };

/// Reads a RIFF/WAVE file holding PCM16 or IEEE float32 samples in one or
/// two channels. PCM16 is scaled by 1/32768.
Waveform read_wav(const std::filesystem::path& path);

/// Writes a little-endian RIFF/WAVE file. PCM16 clamps to [-1, 1] before
/// quantizing with round-to-nearest.
void write_wav(const std::filesystem::path& path, const Waveform& wave,
               WavEncoding encoding = WavEncoding::Float32);

}  // namespace dmx::audio
