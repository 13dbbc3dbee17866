#include "disco/streaming.hpp"

#include "disco/features.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>

namespace disco {

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers; the first exception wins.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  std::size_t w = threads > 0 ? std::size_t(threads) : std::max(1u, std::thread::hardware_concurrency());
  w = std::min(w, n);
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(w);
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < w; ++k)
    pool.emplace_back([&, k] {
      try {
        for (std::size_t i = k; i < n; i += w) fn(i);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::size_t feature_hop(int sample_rate) { return static_cast<std::size_t>(std::lround(sample_rate / kFeatureRate)); }

}  // namespace

ChunkPlan plan_chunks(std::size_t total_samples, int sample_rate, double chunk_seconds, double overlap_seconds) {
  if (!(overlap_seconds >= 0.0) || !(chunk_seconds > overlap_seconds))
    throw std::invalid_argument("plan_chunks: need chunk_seconds > overlap_seconds >= 0");
  if (sample_rate <= 0) throw std::invalid_argument("plan_chunks: sample rate must be positive");
  ChunkPlan p;
  p.sample_rate = sample_rate;
  p.total = total_samples;
  p.chunk = static_cast<std::size_t>(std::llround(chunk_seconds * sample_rate));
  p.overlap = static_cast<std::size_t>(std::llround(overlap_seconds * sample_rate));
  if (p.chunk <= p.overlap) throw std::invalid_argument("plan_chunks: chunk must exceed overlap after rounding");
  for (std::size_t start = 0;; start += p.hop()) {
    const std::size_t end = std::min(start + p.chunk, total_samples);
    p.ranges.emplace_back(start, end);
    if (end >= total_samples) break;
  }
  return p;
}

void GlobalAggregate::push(const Eigen::RowVectorXd& e) {
  if (!(ema_alpha > 0.0 && ema_alpha < 1.0)) throw std::invalid_argument("aggregate_global: ema alpha must lie in (0, 1)");
  if (count > 0 && e.size() != current.size()) throw ShapeError("aggregate_global: embedding size changed");
  ++count;
  if (count == 1) {
    current = e;
  } else if (mode == GlobalMode::Mean) {
    current += (e - current) / double(count);
  } else {
    current = ema_alpha * current + (1.0 - ema_alpha) * e;
  }
}

Eigen::RowVectorXd aggregate_global(std::span<const Eigen::RowVectorXd> embeddings, GlobalMode mode,
                                    double ema_alpha) {
  if (embeddings.empty()) throw std::invalid_argument("aggregate_global: no embeddings");
  if (mode == GlobalMode::Mean) {
    // Direct sum keeps the mean exact for {v, -v}.
    Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(embeddings.front().size());
    for (const auto& e : embeddings) {
      if (e.size() != s.size()) throw ShapeError("aggregate_global: embedding size changed");
      s += e;
    }
    return s / double(embeddings.size());
  }
  GlobalAggregate g{mode, ema_alpha, {}, 0};
  for (const auto& e : embeddings) g.push(e);
  return g.current;
}

std::vector<float> crossfade_stitch(const std::vector<std::vector<float>>& segments, std::size_t overlap_samples,
                                    double fade_ms, int sample_rate) {
  if (segments.empty()) return {};
  const auto fade = static_cast<std::size_t>(std::llround(fade_ms * 1e-3 * sample_rate));
  if (segments.size() > 1 && fade > overlap_samples)
    throw std::invalid_argument("crossfade_stitch: fade of " + std::to_string(fade) + " samples exceeds the overlap of " +
                                std::to_string(overlap_samples));
  std::vector<std::size_t> offset(segments.size(), 0);
  for (std::size_t i = 1; i < segments.size(); ++i) {
    if (segments[i - 1].size() < overlap_samples)
      throw std::invalid_argument("crossfade_stitch: segment shorter than the overlap");
    offset[i] = offset[i - 1] + segments[i - 1].size() - overlap_samples;
  }
  std::vector<float> out(offset.back() + segments.back().size());
  std::copy(segments[0].begin(), segments[0].end(), out.begin());
  for (std::size_t i = 1; i < segments.size(); ++i) {
    const auto& prev = segments[i - 1];
    const auto& next = segments[i];
    const std::size_t fade_start = offset[i] + (overlap_samples - fade) / 2;
    for (std::size_t k = 0; k < fade; ++k) {
      const std::size_t pos = fade_start + k;
      const double th = 0.5 * std::numbers::pi * (double(k) + 0.5) / double(fade);
      const double w_in = std::sin(th) * std::sin(th);
      out[pos] = static_cast<float>((1.0 - w_in) * prev[pos - offset[i - 1]] + w_in * next[pos - offset[i]]);
    }
    std::copy(next.begin() + static_cast<std::ptrdiff_t>(fade_start + fade - offset[i]), next.end(),
              out.begin() + static_cast<std::ptrdiff_t>(fade_start + fade));
  }
  return out;
}

FeatureSource synthetic_feature_source(const CodecConfig& cfg, const SslConfig& ssl, const NormStats& stats) {
  std::vector<int> layers = cfg.content_layers;
  layers.insert(layers.end(), cfg.global_layers.begin(), cfg.global_layers.end());
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  return [cfg, ssl, stats, layers](std::span<const float> chunk, std::size_t) {
    auto feats = synth_ssl_layers(chunk, cfg.mel.sample_rate, layers, ssl);
    return prepare_inputs(feats, cfg, stats, cfg.mel.frames_for(chunk.size()));
  };
}

StreamResult stream_resynthesize(std::span<const float> audio, const Codec<float>& codec, const FeatureSource& features,
                                 const StreamOptions& opt) {
  if (audio.empty()) throw std::invalid_argument("stream_resynthesize: empty audio");
  const CodecConfig& cfg = codec.cfg;
  const int sr = cfg.mel.sample_rate;
  StreamResult r;
  r.plan = plan_chunks(audio.size(), sr, opt.chunk_seconds, opt.overlap_seconds);
  const std::size_t fhop = feature_hop(sr), token_hop = fhop * std::size_t(cfg.stride());
  if (r.plan.ranges.size() > 1 && r.plan.hop() % token_hop != 0)
    throw std::invalid_argument("stream_resynthesize: chunk hop must be a whole number of tokens (" +
                                std::to_string(token_hop) + " samples)");

  const std::size_t n = r.plan.ranges.size();
  r.chunks.resize(n);
  parallel_for(n, opt.threads, [&](std::size_t i) {
    auto& c = r.chunks[i];
    std::tie(c.start, c.end) = r.plan.ranges[i];
    const CodecInputs in = features(audio.subspan(c.start, c.end - c.start), c.start);
    const Encoded e = encode(codec, in, static_cast<std::int64_t>(c.start / fhop));
    c.first_token = static_cast<std::int64_t>(c.start / token_hop);
    c.tokens = e.tokens;
    c.global = e.global;
  });

  GlobalAggregate agg{opt.mode, opt.ema_alpha, {}, 0};
  for (auto& c : r.chunks) {
    agg.push(c.global);
    c.decode_global = agg.current;
  }
  r.global = agg.current;
  if (opt.mode == GlobalMode::Mean) {
    std::vector<Eigen::RowVectorXd> all;
    for (const auto& c : r.chunks) all.push_back(c.global);
    r.global = aggregate_global(all, GlobalMode::Mean);
    for (auto& c : r.chunks) c.decode_global = r.global;
  }

  std::vector<std::vector<float>> segments(n);
  parallel_for(n, opt.threads, [&](std::size_t i) {
    auto& c = r.chunks[i];
    const std::size_t len = c.end - c.start;
    c.mel = decode(codec, c.tokens, c.decode_global, cfg.mel.frames_for(len)).cast<double>();
    segments[i] = griffin_lim_invert(c.mel, cfg.mel, opt.gl_iters, 0, opt.gl_momentum);
    segments[i].resize(len, 0.0f);
  });
  r.audio = crossfade_stitch(segments, r.plan.overlap, opt.fade_ms, sr);

  // Each overlap's tokens are split at its midpoint.
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = r.chunks[i];
    const std::int64_t end = c.first_token + static_cast<std::int64_t>(c.tokens.size());
    std::int64_t lo = c.first_token, hi = end;
    if (i > 0) {
      const auto& p = r.chunks[i - 1];
      lo = c.first_token + (p.first_token + static_cast<std::int64_t>(p.tokens.size()) - c.first_token) / 2;
    }
    if (i + 1 < n) hi = r.chunks[i + 1].first_token + (end - r.chunks[i + 1].first_token) / 2;
    for (std::int64_t t = lo; t < hi; ++t) r.tokens.push_back(c.tokens[static_cast<std::size_t>(t - c.first_token)]);
  }
  return r;
}

std::pair<std::int64_t, std::int64_t> interior_tokens(const ChunkResult& chunk, const CodecConfig& cfg,
                                                     const ChunkPlan& plan, int feature_context) {
  const std::int64_t s = cfg.stride();
  // Attention reach of the content stack plus the downsampling kernel.
  const std::int64_t reach = std::int64_t(cfg.content.n_layers) * ((cfg.content.window - 1) / 2) + 2 * s + feature_context;
  const std::int64_t margin = (reach + s - 1) / s;
  const std::int64_t n = static_cast<std::int64_t>(chunk.tokens.size());
  const std::int64_t lo = chunk.start == 0 ? 0 : margin;
  const std::int64_t hi = chunk.end == plan.total ? n : n - margin;
  return {chunk.first_token + lo, chunk.first_token + std::max(lo, hi)};
}

}  // namespace disco
