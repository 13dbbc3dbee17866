#pragma once

#include "disco/codec.hpp"
#include "disco/features.hpp"
#include "disco/training.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace disco {

struct Config {
  std::string preset = "desk";
  CodecConfig model;
  TrainConfig train;
  SslConfig ssl;
};

/// "paper" or "desk"; anything else is a ConfigError.
Config preset_config(const std::string& name, double token_rate = 12.5);

/// Key/value text with [sections]. A top-level `preset = desk|paper` picks the
/// defaults; every other key overrides one field. Unknown keys, malformed
/// lines and invalid values raise ConfigError naming the line or field.
Config parse_config(std::string_view text, const std::string& origin = "<config>");
Config load_config(const std::filesystem::path& path);

/// Sets one field by its dotted path, e.g. "train.alpha", then revalidates.
void apply_override(Config& cfg, const std::string& key, const std::string& value);

/// Text that parse_config reads back to an identical Config.
std::string render_config(const Config& cfg);

/// Every dotted key the parser accepts, in rendering order.
std::vector<std::string> config_keys();

}  // namespace disco
