#include "disco/codec.hpp"

#include <cmath>
#include <stdexcept>

namespace disco {

int CodecConfig::stride() const { return static_cast<int>(std::lround(kFeatureRate / token_rate)); }
int CodecConfig::upsample_factor() const { return static_cast<int>(std::lround(100.0 / token_rate)); }

std::int64_t CodecConfig::codebook_size() const {
  return quantizer == QuantizerKind::Fsq ? fsq.codebook_size() : vq.codebook_size;
}

void CodecConfig::validate() const {
  if (token_rate != 12.5 && token_rate != 25.0)
    throw std::invalid_argument("token_rate must be 12.5 or 25 Hz, got " + std::to_string(token_rate));
  if (ssl_dim < 1) throw std::invalid_argument("ssl_dim must be >= 1");
  content.validate("content");
  token_module.validate("token_module");
  mel_module.validate("mel_module");
  feature_decoder.validate("feature_decoder");
  if (global.n_blocks < 1 || global.width < 1 || global.embed_dim < 1 || global.expansion < 1 || global.pool_hidden < 1)
    throw std::invalid_argument("global: sizes must be >= 1");
  if (global.kernel < 1 || global.kernel % 2 == 0) throw std::invalid_argument("global.kernel must be odd");
  if (postnet.layers < 1 || postnet.channels < 1 || postnet.kernel < 1 || postnet.kernel % 2 == 0)
    throw std::invalid_argument("postnet: need >= 1 layer and an odd kernel");
  fsq.validate();
  vq.validate();
  if (vq_dim < 1) throw std::invalid_argument("vq_dim must be >= 1");
  if (quantizer == QuantizerKind::Fsq && codebook_size() > 65536)
    throw std::invalid_argument("codebook larger than 65536 does not fit the token file format");
  mel.validate();
  if (content_layers.empty() || global_layers.empty()) throw std::invalid_argument("layer lists must not be empty");
}

CodecConfig CodecConfig::paper(double token_rate) {
  CodecConfig c;
  c.token_rate = token_rate;
  c.token_module.window = token_rate == 12.5 ? 31 : 65;
  return c;
}

CodecConfig CodecConfig::desk(double token_rate) {
  CodecConfig c = paper(token_rate);
  c.content = {2, 4, 64, 176, 125};
  c.token_module = {2, 4, 64, 176, c.token_module.window};
  c.mel_module = {2, 4, 48, 128, 65};
  c.feature_decoder = {2, 4, 64, 176, 125};
  c.global = {2, 32, 16, 7, 3, 16};
  c.postnet = {5, 7, 24};
  return c;
}

template <typename S>
Codec<S> make_codec(const CodecConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Codec<S> c;
  c.cfg = cfg;
  Rng rng(seed);
  auto& st = c.store;
  const int d = cfg.content.d_model;
  const int code_dim = cfg.quantizer == QuantizerKind::Fsq ? cfg.fsq.dims() : cfg.vq_dim;
  const int s = cfg.stride(), u = cfg.upsample_factor();
  const int e = cfg.global.embed_dim;

  if (cfg.ssl_dim != d) c.content_in = make_linear(st, "content.in", cfg.ssl_dim, d, rng);
  c.content = make_transformer(st, "content.transformer", cfg.content, rng);
  c.downsample = make_conv1d(st, "content.downsample", d, d, 2 * s, s, rng);
  c.to_code = make_linear(st, "content.to_code", d, code_dim, rng);

  const int w = cfg.global.width;
  c.global_in = make_linear(st, "global.in", cfg.ssl_dim, w, rng);
  for (int b = 0; b < cfg.global.n_blocks; ++b)
    c.global_blocks.push_back(
        make_convnext_block(st, "global.blocks." + std::to_string(b), w, cfg.global.kernel, cfg.global.expansion, rng));
  c.global_norm = make_layer_norm(st, "global.norm", w, rng);
  c.pool_hidden = make_linear(st, "global.pool.hidden", w, cfg.global.pool_hidden, rng);
  c.pool_score = make_linear(st, "global.pool.score", cfg.global.pool_hidden, w, rng);
  c.global_out = make_linear(st, "global.out", 2 * w, e, rng);
  c.global_out_norm = make_layer_norm(st, "global.out_norm", e, rng);

  const int dt = cfg.token_module.d_model, dm = cfg.mel_module.d_model;
  const bool full = cfg.conditioning == Conditioning::FullDecoder;
  const bool additive = cfg.conditioning == Conditioning::Addition;
  c.token_in = make_linear(st, "decoder.token_in", code_dim, dt, rng);
  c.token_module = make_transformer(st, "decoder.token_module", cfg.token_module, rng, full ? e : 0);
  c.upsample = make_conv_transpose1d(st, "decoder.upsample", dt, dm, 2 * u, u, rng);
  if (additive) c.cond_add = make_linear(st, "decoder.cond_add", e, dm, rng);
  c.mel_module = make_transformer(st, "decoder.mel_module", cfg.mel_module, rng, additive ? 0 : e);
  c.mel_out = make_linear(st, "decoder.mel_out", dm, cfg.mel.n_mels, rng);
  const int pc = cfg.postnet.channels;
  for (int l = 0; l < cfg.postnet.layers; ++l) {
    const int cin = l == 0 ? cfg.mel.n_mels : pc;
    const bool last = l == cfg.postnet.layers - 1;
    const int cout = last ? cfg.mel.n_mels : pc;
    c.postnet.push_back(make_conv1d(st, "decoder.postnet." + std::to_string(l), cin, cout, cfg.postnet.kernel, 1, rng,
                                    last ? Init::Zeros : Init::TruncNormal));
  }
  c.constant_global = st.add("decoder.constant_global", 1, e, Init::TruncNormal, rng);

  const int df = cfg.feature_decoder.d_model;
  c.feat_upsample = make_conv_transpose1d(st, "feature_decoder.upsample", code_dim, df, 2 * s, s, rng);
  c.feat_decoder = make_transformer(st, "feature_decoder.transformer", cfg.feature_decoder, rng);
  c.feat_out = make_linear(st, "feature_decoder.out", df, cfg.ssl_dim, rng);

  c.vq = VqEma(cfg.vq, seed ^ 0x5bd1e995ULL);
  return c;
}

Eigen::Index token_count(Eigen::Index feature_frames, const CodecConfig& cfg) {
  const int s = cfg.stride();
  return (feature_frames + s - 1) / s;
}

Eigen::Index default_mel_frames(Eigen::Index tokens, const CodecConfig& cfg) {
  return static_cast<Eigen::Index>(std::llround(double(tokens) / cfg.token_rate * cfg.mel.frame_rate()));
}

CodecInputs prepare_inputs(const std::map<int, MatF>& layers, const CodecConfig& cfg, const NormStats& stats,
                           Eigen::Index mel_frames) {
  auto gather = [&](const std::vector<int>& ids) {
    std::vector<MatF> out;
    for (int id : ids) {
      auto it = layers.find(id);
      if (it == layers.end()) throw std::invalid_argument("missing features for layer " + std::to_string(id));
      out.push_back(it->second);
    }
    return average_layers(out);
  };
  CodecInputs in;
  in.content = normalize(gather(cfg.content_layers), stats);
  in.global = gather(cfg.global_layers);
  in.mel_frames = mel_frames;
  return in;
}

template <typename S>
Var<S> content_latent(const Codec<S>& c, const Mat<S>& feats, std::int64_t first_position) {
  if (feats.rows() < 1) throw std::invalid_argument("encode_content: empty feature sequence");
  if (feats.cols() != c.cfg.ssl_dim) throw ShapeError("encode_content: feature dim does not match config");
  Var<S> x = Var<S>::constant(feats);
  if (c.content_in) x = (*c.content_in)(x);
  Var<S> h = c.content(x, first_position);
  return c.to_code(c.downsample(h));
}

template <typename S>
ContentEncoding<S> encode_content(const Codec<S>& c, const Mat<S>& feats, std::int64_t first_position) {
  ContentEncoding<S> out;
  out.latent = content_latent(c, feats, first_position);
  if (c.cfg.quantizer == QuantizerKind::Fsq) {
    auto q = fsq_quantize(out.latent, std::span<const int>(c.cfg.fsq.levels));
    out.values = q.values;
    out.tokens = codes_to_indices(q.codes, c.cfg.fsq.levels);
  } else {
    auto q = c.vq.quantize(out.latent);
    out.values = q.values;
    out.commitment_loss = q.commitment_loss;
    out.tokens.assign(q.indices.begin(), q.indices.end());
  }
  return out;
}

template <typename S>
Var<S> attentive_stats_pool(const Var<S>& x, const Linear<S>& hidden, const Linear<S>& score, bool average) {
  if (x.rows() < 1) throw std::invalid_argument("attentive_stats_pool: empty sequence");
  Var<S> w = average ? Var<S>::constant(Mat<S>::Constant(x.rows(), x.cols(), S(1) / S(x.rows())))
                     : softmax_time(score(tanh(hidden(x))));
  return weighted_stats(x, w, S(1e-12));
}

namespace {

// Repeats the first and last frames so a depthwise convolution sees no zeros.
template <typename S>
Var<S> edge_pad(const Var<S>& x, Eigen::Index p) {
  if (p == 0) return x;
  return concat_rows<S>({broadcast_rows(slice_rows(x, 0, 1), p), x, broadcast_rows(slice_rows(x, x.rows() - 1, 1), p)});
}

template <typename S>
Var<S> convnext_edge(const ConvNeXtBlock<S>& b, const Var<S>& x) {
  const Eigen::Index p = (b.dw_weight.rows() - 1) / 2;
  Var<S> h = slice_rows(depthwise_conv1d(edge_pad(x, p), b.dw_weight, b.dw_bias), p, x.rows());
  h = b.proj(gelu(b.expand(b.norm(h))));
  return add(x, h);
}

}  // namespace

template <typename S>
Var<S> encode_global(const Codec<S>& c, const Mat<S>& feats) {
  if (feats.rows() < 1) throw std::invalid_argument("encode_global: empty feature sequence");
  if (feats.cols() != c.cfg.ssl_dim) throw ShapeError("encode_global: feature dim does not match config");
  Var<S> h = c.global_in(Var<S>::constant(feats));
  for (const auto& b : c.global_blocks) h = convnext_edge(b, h);
  h = c.global_norm(h);
  Var<S> pooled = attentive_stats_pool(h, c.pool_hidden, c.pool_score, c.cfg.pooling == Pooling::Average);
  return c.global_out_norm(c.global_out(pooled));
}

template <typename S>
Mat<S> token_values(const Codec<S>& c, const std::vector<std::int64_t>& tokens) {
  if (c.cfg.quantizer == QuantizerKind::Fsq)
    return fsq_dequantize<S>(indices_to_codes(tokens, c.cfg.fsq.levels), c.cfg.fsq.levels);
  if (!c.vq.initialized()) throw std::logic_error("token_values: VQ codebook not initialized");
  Mat<S> v(static_cast<Eigen::Index>(tokens.size()), c.vq.codebook().cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= c.vq.codebook().rows())
      throw std::out_of_range("token " + std::to_string(tokens[i]) + " outside the VQ codebook");
    v.row(static_cast<Eigen::Index>(i)) = c.vq.codebook().row(tokens[i]).template cast<S>();
  }
  return v;
}

template <typename S>
Var<S> decode_values(const Codec<S>& c, const Var<S>& values, const Var<S>& global, Eigen::Index mel_frames) {
  if (values.rows() < 1) throw std::invalid_argument("decode: no tokens");
  if (global.rows() != 1 || global.cols() != c.cfg.global.embed_dim)
    throw ShapeError("decode: global embedding must be [1, " + std::to_string(c.cfg.global.embed_dim) + "]");
  if (mel_frames < 0) mel_frames = default_mel_frames(values.rows(), c.cfg);
  const Conditioning mode = c.cfg.conditioning;
  const Var<S>* cond = &global;

  Var<S> t = c.token_in(values);
  t = c.token_module(t, 0, mode == Conditioning::FullDecoder ? cond : nullptr);
  Var<S> h = resample_linear(c.upsample(t), mel_frames);
  if (mode == Conditioning::Addition) h = add_row(h, (*c.cond_add)(global));
  h = c.mel_module(h, 0, mode == Conditioning::Addition ? nullptr : cond);
  Var<S> mel = c.mel_out(h);
  Var<S> p = mel;
  for (std::size_t l = 0; l < c.postnet.size(); ++l) {
    p = c.postnet[l](p);
    if (l + 1 < c.postnet.size()) p = tanh(p);
  }
  return add(mel, p);
}

template <typename S>
Mat<S> decode(const Codec<S>& c, const std::vector<std::int64_t>& tokens, const Eigen::RowVectorXd& global,
              Eigen::Index mel_frames) {
  Var<S> v = Var<S>::constant(token_values(c, tokens));
  Var<S> g = Var<S>::constant(global.template cast<S>());
  return decode_values(c, v, g, mel_frames).value();
}

template <typename S>
Var<S> reconstruct_features_values(const Codec<S>& c, const Var<S>& values) {
  Var<S> f = c.feat_upsample(values);
  f = c.feat_decoder(f);
  return c.feat_out(f);
}

template <typename S>
Mat<S> reconstruct_features(const Codec<S>& c, const std::vector<std::int64_t>& tokens) {
  return reconstruct_features_values(c, Var<S>::constant(token_values(c, tokens))).value();
}

template <typename S>
ForwardResult<S> full_forward(const Codec<S>& c, const CodecInputs& in, const ForwardFlags& flags) {
  ContentEncoding<S> enc = encode_content(c, Mat<S>(in.content.template cast<S>()));
  ForwardResult<S> r;
  r.tokens = enc.tokens;
  r.latent = enc.latent;
  r.commitment_loss = enc.commitment_loss;
  if (c.cfg.quantizer == QuantizerKind::VqEma) r.vq_indices.assign(enc.tokens.begin(), enc.tokens.end());
  r.global = flags.global_on ? encode_global(c, Mat<S>(in.global.template cast<S>())) : c.constant_global;
  r.mel = decode_values(c, enc.values, r.global, in.mel_frames);
  if (flags.ssl_loss_on) r.features = reconstruct_features_values(c, enc.values);
  return r;
}

template <typename S>
Encoded encode(const Codec<S>& c, const CodecInputs& in, std::int64_t first_position) {
  Encoded e;
  e.tokens = encode_content(c, Mat<S>(in.content.template cast<S>()), first_position).tokens;
  Var<S> g = c.cfg.global_on ? encode_global(c, Mat<S>(in.global.template cast<S>())) : c.constant_global;
  e.global = g.value().row(0).template cast<double>();
  return e;
}

template <typename S>
Mat<S> voice_convert(const Codec<S>& c, const CodecInputs& source, const CodecInputs& reference,
                     std::vector<std::int64_t>* tokens_out) {
  const Encoded src = encode(c, source);
  const Encoded ref = encode(c, reference);
  if (tokens_out) *tokens_out = src.tokens;
  return decode(c, src.tokens, ref.global, source.mel_frames);
}

#define DISCO_INSTANTIATE_CODEC(S)                                                                          \
  template Codec<S> make_codec(const CodecConfig&, std::uint64_t);                                          \
  template Var<S> content_latent(const Codec<S>&, const Mat<S>&, std::int64_t);                              \
  template ContentEncoding<S> encode_content(const Codec<S>&, const Mat<S>&, std::int64_t);                 \
  template Var<S> attentive_stats_pool(const Var<S>&, const Linear<S>&, const Linear<S>&, bool);            \
  template Var<S> encode_global(const Codec<S>&, const Mat<S>&);                                            \
  template Mat<S> token_values(const Codec<S>&, const std::vector<std::int64_t>&);                          \
  template Var<S> decode_values(const Codec<S>&, const Var<S>&, const Var<S>&, Eigen::Index);               \
  template Mat<S> decode(const Codec<S>&, const std::vector<std::int64_t>&, const Eigen::RowVectorXd&,      \
                         Eigen::Index);                                                                     \
  template Var<S> reconstruct_features_values(const Codec<S>&, const Var<S>&);                              \
  template Mat<S> reconstruct_features(const Codec<S>&, const std::vector<std::int64_t>&);                  \
  template ForwardResult<S> full_forward(const Codec<S>&, const CodecInputs&, const ForwardFlags&);         \
  template Encoded encode(const Codec<S>&, const CodecInputs&, std::int64_t);                               \
  template Mat<S> voice_convert(const Codec<S>&, const CodecInputs&, const CodecInputs&,                    \
                                std::vector<std::int64_t>*);

DISCO_INSTANTIATE_CODEC(float)
DISCO_INSTANTIATE_CODEC(double)

#undef DISCO_INSTANTIATE_CODEC

}  // namespace disco
