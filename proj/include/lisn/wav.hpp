#pragma once

// RIFF/WAVE reading and writing: 16-bit PCM and 32-bit IEEE float.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lisn/audio.hpp"

namespace lisn {

enum class SampleFormat { Pcm16, Float32 };

std::vector<std::uint8_t> encode_wav(const AudioBuffer& buffer, SampleFormat format);
AudioBuffer decode_wav(const std::vector<std::uint8_t>& bytes);

void write_wav(const std::filesystem::path& path, const AudioBuffer& buffer, SampleFormat format);
AudioBuffer read_wav(const std::filesystem::path& path);

// Round-half-away quantization to 16 bits, saturating at full scale.
std::int16_t to_pcm16(double x);

}  // namespace lisn
