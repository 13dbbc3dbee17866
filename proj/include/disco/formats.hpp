#pragma once

// Binary artifacts exchanged between commands. All little-endian, version 1.

#include "disco/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace disco {

inline constexpr std::uint16_t kFormatVersion = 1;

struct TokenFile {
  double token_rate_hz = 12.5;  // stored as milli-Hz
  std::uint32_t codebook_size = 12800;
  std::vector<int> levels{8, 8, 8, 5, 5};
  std::vector<std::uint16_t> tokens;
};

struct EmbeddingFile {
  std::vector<float> values;
};

struct FeatureFile {
  double rate_hz = 50.0;  // stored as milli-Hz
  MatF values;            // [frames, dims]
};

std::string encode_token_file(const TokenFile& f);
TokenFile decode_token_file(std::string_view bytes, const std::string& what = "token file");
std::string encode_embedding_file(const EmbeddingFile& f);
EmbeddingFile decode_embedding_file(std::string_view bytes, const std::string& what = "embedding file");
std::string encode_feature_file(const FeatureFile& f);
FeatureFile decode_feature_file(std::string_view bytes, const std::string& what = "feature file");

void write_token_file(const std::filesystem::path& path, const TokenFile& f, bool force);
TokenFile read_token_file(const std::filesystem::path& path);
void write_embedding_file(const std::filesystem::path& path, const EmbeddingFile& f, bool force);
EmbeddingFile read_embedding_file(const std::filesystem::path& path);
void write_feature_file(const std::filesystem::path& path, const FeatureFile& f, bool force);
FeatureFile read_feature_file(const std::filesystem::path& path);

}  // namespace disco
