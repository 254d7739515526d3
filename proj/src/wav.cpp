#include "lisn/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace lisn {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

std::uint16_t get_u16(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

std::int16_t to_pcm16(double x) {
  const double scaled = std::round(std::clamp(x, -1.0, 1.0) * 32767.0);
  return static_cast<std::int16_t>(scaled);
}

std::vector<std::uint8_t> encode_wav(const AudioBuffer& buffer, SampleFormat format) {
  const auto n_ch = static_cast<std::uint16_t>(buffer.channel_count());
  if (n_ch == 0) throw AudioError("cannot encode a buffer without channels");
  const std::uint16_t bytes_per_sample = format == SampleFormat::Pcm16 ? 2 : 4;
  const auto frames = static_cast<std::uint32_t>(buffer.frames());
  const std::uint32_t data_bytes = frames * n_ch * bytes_per_sample;

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, format == SampleFormat::Pcm16 ? kFormatPcm : kFormatFloat);
  put_u16(out, n_ch);
  put_u32(out, static_cast<std::uint32_t>(buffer.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(buffer.sample_rate) * n_ch * bytes_per_sample);
  put_u16(out, static_cast<std::uint16_t>(n_ch * bytes_per_sample));
  put_u16(out, static_cast<std::uint16_t>(8 * bytes_per_sample));
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (std::uint32_t i = 0; i < frames; ++i) {
    for (std::uint16_t c = 0; c < n_ch; ++c) {
      const double x = buffer.channels[c][i];
      if (format == SampleFormat::Pcm16) {
        put_u16(out, static_cast<std::uint16_t>(to_pcm16(x)));
      } else {
        const float f = static_cast<float>(x);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
      }
    }
  }
  return out;
}

AudioBuffer decode_wav(const std::vector<std::uint8_t>& b) {
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw AudioError("not a RIFF/WAVE stream");
  std::uint16_t format = 0, n_ch = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::uint32_t size = get_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size()) throw AudioError("truncated WAV chunk");
    if (std::memcmp(b.data() + pos, "fmt ", 4) == 0) {
      if (size < 16) throw AudioError("short fmt chunk");
      format = get_u16(b, body);
      n_ch = get_u16(b, body + 2);
      rate = get_u32(b, body + 4);
      bits = get_u16(b, body + 14);
      if (format == kFormatExtensible && size >= 26) format = get_u16(b, body + 24);
      have_fmt = true;
    } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
      if (!have_fmt) throw AudioError("data chunk before fmt chunk");
      if (n_ch == 0) throw AudioError("WAV declares zero channels");
      const bool pcm16 = format == kFormatPcm && bits == 16;
      const bool f32 = format == kFormatFloat && bits == 32;
      if (!pcm16 && !f32) throw AudioError("unsupported WAV sample format (need 16-bit PCM or 32-bit float)");
      const std::size_t bytes = bits / 8;
      const std::size_t frames = size / (bytes * n_ch);
      AudioBuffer out = AudioBuffer::silence(frames, n_ch, static_cast<int>(rate));
      std::size_t at = body;
      for (std::size_t i = 0; i < frames; ++i) {
        for (std::uint16_t c = 0; c < n_ch; ++c, at += bytes) {
          if (pcm16) {
            out.channels[c][i] = static_cast<std::int16_t>(get_u16(b, at)) / 32767.0;
          } else {
            const std::uint32_t raw = get_u32(b, at);
            float f;
            std::memcpy(&f, &raw, 4);
            out.channels[c][i] = f;
          }
        }
      }
      return out;
    }
    pos = body + size + (size & 1u);
  }
  throw AudioError("WAV stream has no data chunk");
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& buffer, SampleFormat format) {
  const auto bytes = encode_wav(buffer, format);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw AudioError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw AudioError("short write to " + path.string());
}

AudioBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const AudioError& e) {
    throw AudioError(path.string() + ": " + e.what());
  }
}

}  // namespace lisn
