#pragma once

#include "disco/codec.hpp"
#include "disco/config.hpp"
#include "disco/features.hpp"
#include "disco/training.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace disco {

/// Everything needed to run or resume a model: the config it was built from,
/// its parameters, the content normalization statistics and, after
/// post-training, the discriminator.
struct Checkpoint {
  Config config;
  Codec<float> codec;
  NormStats stats;
  std::optional<Discriminator<float>> disc;
};

/// "KNCK" file: version, config text, then named blobs (u8 dtype tag:
/// 0 = f32, 1 = f64; u32 rows; u32 cols; row-major data) in declaration order.
std::string encode_checkpoint(const Config& cfg, const Codec<float>& codec, const NormStats& stats,
                              const Discriminator<float>* disc = nullptr);
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const Config& cfg, const Codec<float>& codec,
                     const NormStats& stats, const Discriminator<float>* disc = nullptr, bool force = true);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace disco
