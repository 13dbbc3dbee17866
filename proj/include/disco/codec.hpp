#pragma once

#include "disco/features.hpp"
#include "disco/nn.hpp"
#include "disco/quantizer.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace disco {

enum class Pooling { Attentive, Average };
enum class Conditioning { MelModule, FullDecoder, Addition };
enum class QuantizerKind { Fsq, VqEma };

struct GlobalConfig {
  int n_blocks = 4;
  int width = 384;
  int embed_dim = 128;
  int kernel = 7;
  int expansion = 3;
  int pool_hidden = 128;
};

struct PostnetConfig {
  int layers = 5;
  int kernel = 7;
  int channels = 256;
};

struct CodecConfig {
  double token_rate = 12.5;
  int ssl_dim = 768;
  TransformerConfig content{6, 12, 768, 2048, 125};
  TransformerConfig token_module{6, 12, 768, 2048, 31};
  TransformerConfig mel_module{6, 8, 512, 1536, 65};
  TransformerConfig feature_decoder{6, 12, 768, 2048, 125};
  GlobalConfig global;
  PostnetConfig postnet;
  FsqConfig fsq;
  VqEmaConfig vq;
  int vq_dim = 8;
  MelConfig mel;
  std::vector<int> content_layers{6, 9};
  std::vector<int> global_layers{1, 2};

  // Ablation switches.
  bool global_on = true;
  bool ssl_loss_on = true;
  Pooling pooling = Pooling::Attentive;
  Conditioning conditioning = Conditioning::MelModule;
  QuantizerKind quantizer = QuantizerKind::Fsq;

  int stride() const;           // SSL frames per token
  int upsample_factor() const;  // 100 Hz frames per token
  std::int64_t codebook_size() const;
  void validate() const;

  static CodecConfig paper(double token_rate = 12.5);
  static CodecConfig desk(double token_rate = 12.5);
};

/// Parameters and module handles for the whole tokenizer. Parameter names are
/// prefixed by branch: content., global., decoder., feature_decoder.
template <typename S>
struct Codec {
  CodecConfig cfg;
  ParamStore<S> store;

  // content branch
  std::optional<Linear<S>> content_in;
  Transformer<S> content;
  Conv1d<S> downsample;
  Linear<S> to_code;  // d_model -> fsq dims (or vq_dim)

  // global branch
  Linear<S> global_in;
  std::vector<ConvNeXtBlock<S>> global_blocks;
  LayerNormParams<S> global_norm;
  Linear<S> pool_hidden, pool_score;
  Linear<S> global_out;
  LayerNormParams<S> global_out_norm;

  // decoder
  Linear<S> token_in;
  Transformer<S> token_module;
  ConvTranspose1d<S> upsample;
  Transformer<S> mel_module;
  std::optional<Linear<S>> cond_add;  // addition conditioning
  Linear<S> mel_out;
  std::vector<Conv1d<S>> postnet;
  Var<S> constant_global;  // used when the global branch is disabled

  // training-only feature decoder
  ConvTranspose1d<S> feat_upsample;
  Transformer<S> feat_decoder;
  Linear<S> feat_out;

  // VQ-EMA ablation state (not a gradient parameter)
  VqEma vq;
};

template <typename S>
Codec<S> make_codec(const CodecConfig& cfg, std::uint64_t seed);

/// Features that feed one utterance (or segment) through the model.
struct CodecInputs {
  MatF content;  // averaged content layers, normalized, [T, ssl_dim] at 50 Hz
  MatF global;   // averaged global layers, not normalized
  Eigen::Index mel_frames = -1;  // -1: derive from the token count
};

/// Builds model inputs from raw layer features.
CodecInputs prepare_inputs(const std::map<int, MatF>& layers, const CodecConfig& cfg, const NormStats& stats,
                           Eigen::Index mel_frames = -1);

Eigen::Index token_count(Eigen::Index feature_frames, const CodecConfig& cfg);
Eigen::Index default_mel_frames(Eigen::Index tokens, const CodecConfig& cfg);

template <typename S>
struct ContentEncoding {
  Var<S> latent;  // pre-quantization, [N, code dims]
  Var<S> values;  // quantized, straight-through
  std::vector<std::int64_t> tokens;
  std::optional<Var<S>> commitment_loss;
};

/// Pre-quantization content latent, [N, code dims].
template <typename S>
Var<S> content_latent(const Codec<S>& codec, const Mat<S>& content_features, std::int64_t first_position = 0);

/// `first_position` offsets the rotary positions (chunked encoding).
template <typename S>
ContentEncoding<S> encode_content(const Codec<S>& codec, const Mat<S>& content_features,
                                  std::int64_t first_position = 0);

/// Weighted mean and std over time per channel; `average` replaces the learned
/// scorer with uniform weights.
template <typename S>
Var<S> attentive_stats_pool(const Var<S>& x, const Linear<S>& hidden, const Linear<S>& score, bool average);

template <typename S>
Var<S> encode_global(const Codec<S>& codec, const Mat<S>& global_features);

/// Dequantized token values -> code-space vectors for the decoders.
template <typename S>
Mat<S> token_values(const Codec<S>& codec, const std::vector<std::int64_t>& tokens);

template <typename S>
Var<S> decode_values(const Codec<S>& codec, const Var<S>& values, const Var<S>& global, Eigen::Index mel_frames = -1);

/// tokens + embedding -> log-mel [frames, n_mels].
template <typename S>
Mat<S> decode(const Codec<S>& codec, const std::vector<std::int64_t>& tokens, const Eigen::RowVectorXd& global,
              Eigen::Index mel_frames = -1);

template <typename S>
Var<S> reconstruct_features_values(const Codec<S>& codec, const Var<S>& values);
template <typename S>
Mat<S> reconstruct_features(const Codec<S>& codec, const std::vector<std::int64_t>& tokens);

template <typename S>
struct ForwardResult {
  std::vector<std::int64_t> tokens;
  Var<S> latent;
  Var<S> global;
  Var<S> mel;
  std::optional<Var<S>> features;
  std::optional<Var<S>> commitment_loss;
  std::vector<int> vq_indices;
};

struct ForwardFlags {
  bool global_on = true;
  bool ssl_loss_on = true;
};

template <typename S>
ForwardResult<S> full_forward(const Codec<S>& codec, const CodecInputs& in, const ForwardFlags& flags);
template <typename S>
ForwardResult<S> full_forward(const Codec<S>& codec, const CodecInputs& in) {
  return full_forward(codec, in, ForwardFlags{codec.cfg.global_on, codec.cfg.ssl_loss_on});
}

struct Encoded {
  std::vector<std::int64_t> tokens;
  Eigen::RowVectorXd global;
};

/// Inference-time encode of one utterance's features. `first_position`
/// is the feature-frame offset of a chunk within a longer input.
template <typename S>
Encoded encode(const Codec<S>& codec, const CodecInputs& in, std::int64_t first_position = 0);

/// Content tokens from `source`, global embedding from `reference`.
template <typename S>
Mat<S> voice_convert(const Codec<S>& codec, const CodecInputs& source, const CodecInputs& reference,
                     std::vector<std::int64_t>* tokens_out = nullptr);

}  // namespace disco
