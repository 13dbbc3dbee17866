#pragma once

#include "disco/codec.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace disco {

struct ChunkPlan {
  int sample_rate = 24000;
  std::size_t total = 0;
  std::size_t chunk = 0;    // samples
  std::size_t overlap = 0;  // samples
  std::vector<std::pair<std::size_t, std::size_t>> ranges;  // [start, end)

  std::size_t hop() const { return chunk - overlap; }
};

/// Ranges [i * hop, i * hop + chunk) clipped to the input. The last chunk is
/// kept even when short; no chunk starts inside the previous one's tail past
/// the end of the input.
ChunkPlan plan_chunks(std::size_t total_samples, int sample_rate, double chunk_seconds = 5.76,
                      double overlap_seconds = 1.44);

enum class GlobalMode { Mean, Ema };

/// Running global embedding. Ema starts from the first embedding.
struct GlobalAggregate {
  GlobalMode mode = GlobalMode::Mean;
  double ema_alpha = 0.8;
  Eigen::RowVectorXd current;
  int count = 0;

  void push(const Eigen::RowVectorXd& e);
};

Eigen::RowVectorXd aggregate_global(std::span<const Eigen::RowVectorXd> embeddings, GlobalMode mode,
                                    double ema_alpha = 0.8);

/// Places segment i at sum_{j<i}(len_j - overlap). Inside each overlap the
/// earlier segment plays until a fade window centred on the overlap midpoint,
/// crosses over with sin^2/cos^2 weights, and the later segment plays after.
std::vector<float> crossfade_stitch(const std::vector<std::vector<float>>& segments, std::size_t overlap_samples,
                                    double fade_ms, int sample_rate);

/// Model inputs for audio[start, start + chunk.size()).
using FeatureSource = std::function<CodecInputs(std::span<const float> chunk, std::size_t start)>;

/// Synthetic extractor over the chunk samples, normalized with `stats`.
FeatureSource synthetic_feature_source(const CodecConfig& cfg, const SslConfig& ssl, const NormStats& stats);

struct StreamOptions {
  double chunk_seconds = 5.76;
  double overlap_seconds = 1.44;
  double fade_ms = 10.0;
  GlobalMode mode = GlobalMode::Mean;
  double ema_alpha = 0.8;
  int gl_iters = 32;
  double gl_momentum = 0.99;
  int threads = 0;  // <= 0: hardware concurrency
};

struct ChunkResult {
  std::size_t start = 0, end = 0;       // samples
  std::int64_t first_token = 0;         // stream index of this chunk's first token
  std::vector<std::int64_t> tokens;
  Eigen::RowVectorXd global;            // this chunk's own embedding
  Eigen::RowVectorXd decode_global;     // aggregate it was decoded with
  MatD mel;
};

struct StreamResult {
  ChunkPlan plan;
  std::vector<std::int64_t> tokens;  // overlaps split at their midpoint
  Eigen::RowVectorXd global;         // final aggregate
  std::vector<ChunkResult> chunks;
  std::vector<float> audio;
};

/// Chunked encode, aggregate, decode and stitch. Content positions carry the
/// chunk's absolute feature-frame offset.
StreamResult stream_resynthesize(std::span<const float> audio, const Codec<float>& codec, const FeatureSource& features,
                                 const StreamOptions& opt = {});

/// Stream index range [lo, hi) of the tokens of `chunk` whose receptive field
/// lies inside the chunk. `feature_context` is how many feature frames the
/// extractor itself looks past a frame (the synthetic one: half its STFT).
std::pair<std::int64_t, std::int64_t> interior_tokens(const ChunkResult& chunk, const CodecConfig& cfg,
                                                     const ChunkPlan& plan, int feature_context = 2);

}  // namespace disco
