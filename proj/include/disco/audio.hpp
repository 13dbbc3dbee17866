#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace disco {

struct Audio {
  std::vector<float> samples;  // mono, nominally in [-1, 1]
  int sample_rate = 24000;
  int source_channels = 1;
  int source_bits = 16;
  double seconds() const { return sample_rate > 0 ? double(samples.size()) / sample_rate : 0.0; }
};

enum class WavEncoding { Pcm16, Float32 };

/// Linear PCM (8/16/24/32-bit) or IEEE float WAV; extra channels are averaged.
Audio decode_wav(std::string_view bytes, const std::string& what = "wav");
Audio load_wav(const std::filesystem::path& path);

std::string encode_wav(const Audio& audio, WavEncoding encoding = WavEncoding::Pcm16);
void save_wav(const std::filesystem::path& path, const Audio& audio, WavEncoding encoding = WavEncoding::Pcm16,
              bool force = true);

}  // namespace disco
