// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include "dmx/audio/waveform.hpp"

namespace dmx::audio {

/// Windowed-sinc polyphase resampler: 64 taps per phase, Kaiser window with
/// beta 8, cutoff at the lower of the two Nyquist rates. Output length is
/// round(T * target / source). Equal rates return a copy.
Waveform resample(const Waveform& wave, int target_rate);

/// Convenience: downmix to mono, then resample.
Waveform to_mono_rate(const Waveform& wave, int target_rate);

}  // namespace dmx::audio
