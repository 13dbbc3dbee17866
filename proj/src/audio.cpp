#include "disco/audio.hpp"

#include "disco/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace disco {

namespace {

constexpr std::uint16_t kPcm = 1, kFloat = 3, kExtensible = 0xFFFE;

}  // namespace

Audio decode_wav(std::string_view bytes, const std::string& what) {
  ByteReader r(bytes, what);
  if (r.bytes(4) != "RIFF") throw DataError(what + ": not a RIFF file");
  r.u32();
  if (r.bytes(4) != "WAVE") throw DataError(what + ": not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    const std::string id(r.bytes(4));
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      ByteReader f(r.bytes(size), what + " fmt chunk");
      format = f.u16();
      channels = f.u16();
      rate = f.u32();
      f.u32();
      f.u16();
      bits = f.u16();
      if (format == kExtensible) {
        if (f.remaining() < 10) throw DataError(what + ": short extensible fmt chunk");
        f.u16();
        f.u16();
        f.u32();
        format = f.u16();  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw DataError(what + ": data chunk before fmt chunk");
      if (channels == 0) throw DataError(what + ": zero channels");
      const bool is_float = format == kFloat && bits == 32;
      const bool is_pcm = format == kPcm && (bits == 8 || bits == 16 || bits == 24 || bits == 32);
      if (!is_float && !is_pcm)
        throw DataError(what + ": unsupported encoding (format " + std::to_string(format) + ", " +
                        std::to_string(bits) + " bits)");
      const std::size_t width = bits / 8u;
      if (size % (width * channels) != 0 || size > r.remaining()) throw DataError(what + ": truncated data chunk");
      auto raw = r.bytes(size);
      const std::size_t frames = size / (width * channels);
      Audio a;
      a.sample_rate = static_cast<int>(rate);
      a.source_channels = channels;
      a.source_bits = bits;
      a.samples.resize(frames);
      const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c, p += width) {
          double x;
          if (is_float) {
            float v;
            std::memcpy(&v, p, 4);
            x = v;
          } else if (bits == 8) {
            x = (double(p[0]) - 128.0) / 128.0;
          } else if (bits == 16) {
            std::int16_t v;
            std::memcpy(&v, p, 2);
            x = v / 32768.0;
          } else if (bits == 24) {
            std::int32_t v = (std::int32_t(p[0]) << 8) | (std::int32_t(p[1]) << 16) | (std::int32_t(p[2]) << 24);
            x = (v >> 8) / 8388608.0;
          } else {
            std::int32_t v;
            std::memcpy(&v, p, 4);
            x = v / 2147483648.0;
          }
          acc = c == 0 ? x : acc + x;  // keeps -0.0 of mono float files
        }
        a.samples[i] = static_cast<float>(acc / channels);
      }
      return a;
    } else {
      r.skip(std::min<std::size_t>(size + (size & 1u), r.remaining()));
    }
  }
  throw DataError(what + ": no data chunk");
}

Audio load_wav(const std::filesystem::path& path) { return decode_wav(read_file(path), path.string()); }

std::string encode_wav(const Audio& audio, WavEncoding encoding) {
  const bool is_float = encoding == WavEncoding::Float32;
  const std::uint16_t bits = is_float ? 32 : 16;
  const std::uint32_t data_size = static_cast<std::uint32_t>(audio.samples.size() * (bits / 8u));
  ByteWriter w;
  w.bytes("RIFF");
  w.u32(36 + data_size);
  w.bytes("WAVE");
  w.bytes("fmt ");
  w.u32(16);
  w.u16(is_float ? kFloat : kPcm);
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(audio.sample_rate));
  w.u32(static_cast<std::uint32_t>(audio.sample_rate) * (bits / 8u));
  w.u16(bits / 8u);
  w.u16(bits);
  w.bytes("data");
  w.u32(data_size);
  for (float s : audio.samples) {
    if (is_float) {
      w.f32(s);
    } else {
      const double v = std::clamp(std::round(double(s) * 32768.0), -32768.0, 32767.0);
      w.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
    }
  }
  return w.str();
}

void save_wav(const std::filesystem::path& path, const Audio& audio, WavEncoding encoding, bool force) {
  atomic_write(path, encode_wav(audio, encoding), force);
}

}  // namespace disco
