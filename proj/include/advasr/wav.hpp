#pragma once

#include <string>

#include "advasr/signal.hpp"

namespace advasr {

// 16-bit PCM mono little-endian RIFF. Samples map to [-1, 1) by division
// by 32768 on read; writes clamp to [-1, 1] before quantizing.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& x);

}  // namespace advasr
