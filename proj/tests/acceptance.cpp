// End-to-end acceptance run. Prints one PASS/FAIL line per criterion after
// indented detail lines; exits non-zero when any selected criterion fails.
// Usage: acceptance [criterion numbers...]   (default: all)

#include "cli.hpp"
#include "disco/audio.hpp"
#include "disco/checkpoint.hpp"
#include "disco/config.hpp"
#include "disco/corpus.hpp"
#include "disco/formats.hpp"
#include "disco/io.hpp"
#include "disco/metrics.hpp"
#include "disco/pitch.hpp"
#include "disco/quantizer.hpp"
#include "disco/streaming.hpp"
#include "disco/training.hpp"
#include "grad_suite.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace disco;
namespace fs = std::filesystem;

namespace {

constexpr int kSeeds = 5;
constexpr int kSeedsNeeded = 4;

struct Outcome {
  bool pass = false;
  std::string summary;
};

std::map<int, Outcome> g_results;

void detail(const char* fmt, auto... args) {
  std::printf("  ");
  std::printf(fmt, args...);
  std::printf("\n");
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

class Timer {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

void record(int n, bool pass, std::string summary) {
  g_results[n] = {pass, std::move(summary)};
  std::printf("  [criterion %d done: %s]\n", n, pass ? "pass" : "fail");
  std::fflush(stdout);
}

// ------------------------------------------------------------------ 1, 2

void criterion_fsq_constants() {
  Timer t;
  const std::vector<int> levels{8, 8, 8, 5, 5};
  std::int64_t size = 1;
  for (int l : levels) size *= l;
  const bool size_ok = size == 12800 && CodecConfig::paper().codebook_size() == 12800;
  const long b12 = std::lround(bitrate(12.5, size)), b25 = std::lround(bitrate(25.0, size));
  const double secs = t.seconds();
  detail("codebook %lld, bitrate %.3f -> %ld bps at 12.5 Hz, %.3f -> %ld bps at 25 Hz", (long long)size,
         bitrate(12.5, size), b12, bitrate(25.0, size), b25);
  record(1, size_ok && b12 == 171 && b25 == 341 && secs < 1.0,
         fmt("codebook 12800, %ld/%ld bps, %.3f s", b12, b25, secs));
}

void criterion_fsq_bijectivity() {
  Timer t;
  const std::vector<int> levels{8, 8, 8, 5, 5};
  const std::span<const int> lv(levels);
  std::int64_t bad_index = 0;
  std::set<std::vector<int>> seen;
  for (std::int64_t i = 0; i < 12800; ++i) {
    const auto c = index_to_codes(i, lv);
    if (codes_to_index(c, lv) != i) ++bad_index;
    seen.insert(c);
  }
  std::vector<std::int64_t> all(12800);
  for (std::int64_t i = 0; i < 12800; ++i) all[std::size_t(i)] = i;
  const bool batch_ok = codes_to_indices(indices_to_codes(all, lv), lv) == all;

  std::mt19937_64 rng(2024);
  const MatD x = oracle::random_matrix(100000, 5, rng, 2.0);
  const auto q = fsq_quantize(Var<double>::constant(x), lv);
  const MatD deq = fsq_dequantize<double>(q.codes, lv);
  const bool idem = deq == q.values.value() && fsq_snap(q.values.value(), lv) == q.codes &&
                    fsq_dequantize<double>(fsq_snap(deq, lv), lv) == deq;
  const double secs = t.seconds();
  detail("index roundtrip failures %lld, distinct words %zu, batch roundtrip %s, idempotence on 1e5 vectors %s",
         (long long)bad_index, seen.size(), batch_ok ? "ok" : "broken", idem ? "ok" : "broken");
  record(2, bad_index == 0 && seen.size() == 12800 && batch_ok && idem && secs < 5.0,
         fmt("12800/12800 words, 1e5 idempotent vectors, %.2f s", secs));
}

// ------------------------------------------------------------------ 3

void criterion_gradients() {
  Timer t;
  bool ok = true;
  const auto cases = gradsuite::all_cases();
  for (const auto& c : cases) {
    double worst = 0;
    bool finite = true;
    for (std::uint64_t s = 0; s < 20; ++s) {
      const double e = c.run(s);
      if (!std::isfinite(e)) finite = false;
      worst = std::max(worst, e);
    }
    const bool pass = finite && worst < gradsuite::kTol;
    ok = ok && pass;
    detail("%-16s 20 seeds, max rel err %.2e %s", c.name.c_str(), worst, pass ? "" : "FAIL");
  }
  const double secs = t.seconds();
  record(3, ok && secs < 120.0, fmt("%zu op groups incl. dim-8 codec, 20 seeds each, %.1f s", cases.size(), secs));
}

// ------------------------------------------------------------------ 4, 5

void criterion_metric_oracles() {
  Timer t;
  std::mt19937_64 rng(404);
  double pnmi_err = 0;
  for (int k = 0; k < 100; ++k) {
    std::uniform_int_distribution<int> dim(2, 12), cnt(0, 20);
    CountMatrix m(dim(rng), dim(rng));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = cnt(rng);
    m(0, 0) += 1;
    m(m.rows() - 1, m.cols() - 1) += 1;
    pnmi_err = std::max(pnmi_err, std::abs(pnmi(JointCounts{m}) - oracle::pnmi(m)));
  }

  int eer_mismatch = 0;
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> coarse(0, 5);
  for (int k = 0; k < 100; ++k) {
    std::vector<Trial> trials;
    const int n = 6 + k % 40;
    for (int i = 0; i < n; ++i) {
      const bool same = i % 3 != 0;
      const double s = k % 2 ? g(rng) + (same ? 1.0 : 0.0) : double(coarse(rng) + (same ? 1 : 0));
      trials.push_back({s, same});
    }
    if (eer(trials) != oracle::eer(trials)) ++eer_mismatch;
  }

  int edit_mismatch = 0;
  std::uniform_int_distribution<int> len(0, 14), sym(0, 4);
  for (int k = 0; k < 200; ++k) {
    std::vector<std::string> a(std::size_t(len(rng))), b(std::size_t(len(rng)));
    for (auto& s : a) s = std::string(1, char('a' + sym(rng)));
    for (auto& s : b) s = std::string(1, char('a' + sym(rng)));
    if (edit_distance(a, b) != oracle::edit_distance(a, b)) ++edit_mismatch;
  }

  const double abx_sep = abx_error(synthetic_abx_triples(500, 8, 10, 3.0, 41), AbxDistance::Dtw);
  const double abx_rnd = abx_error(synthetic_abx_triples(2000, 8, 10, 0.0, 42), AbxDistance::Dtw);
  const double secs = t.seconds();
  detail("pnmi max |err| %.2e over 100 tables; eer mismatches %d/100; edit mismatches %d/200", pnmi_err, eer_mismatch,
         edit_mismatch);
  detail("abx separable %.4f, random %.4f", abx_sep, abx_rnd);
  record(4,
         pnmi_err <= 1e-12 && eer_mismatch == 0 && edit_mismatch == 0 && abx_sep == 0.0 &&
             std::abs(abx_rnd - 0.5) <= 0.03 && secs < 60.0,
         fmt("pnmi err %.1e, eer/edit exact, abx %.3f/%.3f, %.1f s", pnmi_err, abx_sep, abx_rnd, secs));
}

void criterion_boundaries() {
  Timer t;
  const double uni = normalized_entropy(std::vector<std::int64_t>(12800, 3), 12800);
  std::vector<std::int64_t> constant(12800, 0);
  constant[77] = 500;
  const double con = normalized_entropy(constant, 12800);
  CountMatrix diag = CountMatrix::Zero(6, 6);
  for (int i = 0; i < 6; ++i) diag(i, i) = 10 + i;
  const double pd = pnmi(JointCounts{diag});
  CountMatrix ind(4, 5);
  const int rows[4] = {1, 2, 3, 4}, cols[5] = {2, 1, 3, 5, 4};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) ind(i, j) = rows[i] * cols[j];
  const double pi = pnmi(JointCounts{ind});
  const double secs = t.seconds();
  detail("uniform %.17g, constant %.17g, diagonal pnmi %.17g, independent pnmi %.3e", uni, con, pd, pi);
  record(5, uni == 1.0 && con == 0.0 && pd == 1.0 && std::abs(pi) <= 1e-12 && secs < 1.0,
         fmt("1, 0, 1, %.1e", pi));
}

// ------------------------------------------------------------------ 6, 7

struct SeedRun {
  std::uint64_t seed = 0;
  Config cfg;
  std::vector<LabeledAudio> audio;
  PreparedCorpus pc;
  std::unique_ptr<Codec<float>> codec;
  std::optional<Discriminator<float>> disc;  // after post-training
  double loss0 = 0, loss1 = 0;
  bool curve_ok = true;
  double train_seconds = 0;
};

std::unique_ptr<SeedRun> train_seed(std::uint64_t seed) {
  auto r = std::make_unique<SeedRun>();
  Timer t;
  r->seed = seed;
  r->cfg = preset_config("desk");
  r->cfg.train.seed = seed;
  ToyCorpusConfig cc;
  cc.seed = seed;
  for (auto& u : make_toy_corpus(cc)) r->audio.push_back({u.name, u.speaker, u.audio});
  r->pc = prepare_corpus(r->audio, r->cfg.model, r->cfg.ssl);
  r->codec = std::make_unique<Codec<float>>(make_codec<float>(r->cfg.model, seed));
  const double a = r->cfg.train.alpha;
  const auto l0 = evaluate_main_loss(*r->codec, r->pc, a);
  r->loss0 = l0.mel + a * l0.ssl;
  const auto res = train_loop(*r->codec, r->pc, r->cfg.train, nullptr, [&](const CurveRow& row) {
    const bool finite = std::isfinite(row.total) && row.l_mel >= 0 && row.l_ssl >= 0;
    r->curve_ok = r->curve_ok && finite;
  });
  r->curve_ok = r->curve_ok && int(res.curve.size()) == r->cfg.train.steps;
  const auto l1 = evaluate_main_loss(*r->codec, r->pc, a);
  r->loss1 = l1.mel + a * l1.ssl;
  r->train_seconds = t.seconds();
  detail("seed %llu: %zu params, corpus loss %.4f -> %.4f, curve %.4f -> %.4f, %.0f s",
         (unsigned long long)seed, r->codec->store.element_count(), r->loss0, r->loss1, res.curve.front().total,
         res.curve.back().total, r->train_seconds);
  return r;
}

// Overfit and F0 tracking for one seed.
bool overfit_ok(const SeedRun& r) {
  Timer t;
  const auto& cfg = r.cfg.model;
  double corr = 0, rmse = 0;
  int missing = 0;
  for (std::size_t i = 0; i < r.pc.items.size(); ++i) {
    const CodecInputs in = item_inputs(r.pc.items[i]);
    const Encoded e = encode(*r.codec, in);
    const MatF mel = decode(*r.codec, e.tokens, e.global, in.mel_frames);
    const auto wav = griffin_lim_invert(mel.cast<double>(), cfg.mel, 32, 0, 0.99);
    const auto src = f0_extract(r.audio[i].audio.samples, cfg.mel.sample_rate);
    const auto hyp = f0_extract(wav, cfg.mel.sample_rate);
    const auto agree = f0_corr_rmse(src, hyp, true);
    if (!agree) {
      ++missing;
      continue;
    }
    corr += agree->corr;
    rmse += agree->rmse;
  }
  const double n = double(r.pc.items.size() - std::size_t(missing));
  corr /= n;
  rmse /= n;
  const double ratio = r.loss1 / r.loss0;
  const bool ok = r.curve_ok && ratio <= 0.2 && missing == 0 && corr >= 0.8 && rmse <= 0.5 &&
                  r.train_seconds + t.seconds() <= 600.0;
  detail("seed %llu: loss ratio %.3f, F0Corr %.3f, normalized log-F0 RMSE %.3f over %zu items%s, %.0f s -> %s",
         (unsigned long long)r.seed, ratio, corr, rmse, r.pc.items.size(),
         missing ? fmt(" (%d unvoiced)", missing).c_str() : "", r.train_seconds + t.seconds(), ok ? "pass" : "fail");
  return ok;
}

// Voice conversion tilt and token/speaker information for one seed.
bool disentangled_ok(const SeedRun& r) {
  const auto& cfg = r.cfg.model;
  const auto& items = r.pc.items;
  std::vector<int> by_spk[2];
  double mean_tilt[2] = {0, 0};
  for (std::size_t i = 0; i < items.size(); ++i) {
    by_spk[items[i].speaker].push_back(int(i));
    mean_tilt[items[i].speaker] += spectral_tilt(items[i].mel.cast<double>(), cfg.mel);
  }
  for (int s = 0; s < 2; ++s) mean_tilt[s] /= double(by_spk[s].size());

  int converted = 0, closer = 0, same_tokens = 0;
  double worst_ratio = 0;
  for (int k = 0; k < 4; ++k)
    for (int dir = 0; dir < 2; ++dir) {
      const int si = by_spk[dir][std::size_t(k)], ri = by_spk[1 - dir][std::size_t(k)];
      const CodecInputs src = item_inputs(items[std::size_t(si)]), ref = item_inputs(items[std::size_t(ri)]);
      std::vector<std::int64_t> toks;
      const MatF vc = voice_convert(*r.codec, src, ref, &toks);
      const double tilt = spectral_tilt(vc.cast<double>(), cfg.mel);
      const double to_ref = std::abs(tilt - mean_tilt[1 - dir]), to_src = std::abs(tilt - mean_tilt[dir]);
      ++converted;
      closer += 2.0 * to_ref < to_src;
      same_tokens += toks == encode(*r.codec, src).tokens;
      worst_ratio = std::max(worst_ratio, to_ref / to_src);
    }

  std::vector<int> tok_spk;
  std::vector<std::int64_t> tokens;
  MatD globals(std::ptrdiff_t(items.size()), cfg.global.embed_dim);
  std::vector<int> utt_spk;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Encoded e = encode(*r.codec, item_inputs(items[i]));
    for (auto t : e.tokens) {
      tokens.push_back(t);
      tok_spk.push_back(items[i].speaker);
    }
    globals.row(std::ptrdiff_t(i)) = e.global;
    utt_spk.push_back(items[i].speaker);
  }
  const auto tok_info = information(joint_counts(tok_spk, tokens, 2, cfg.codebook_size()));
  const Pca pca = pca_project(globals, 1);
  std::vector<std::int64_t> sign;
  for (Eigen::Index i = 0; i < pca.projections.rows(); ++i) sign.push_back(pca.projections(i, 0) > 0 ? 1 : 0);
  const auto glob_info = information(joint_counts(utt_spk, sign, 2, 2));
  const double nmi_tok = tok_info.nmi(), nmi_glob = glob_info.nmi();

  const bool ok = closer == converted && same_tokens == converted && nmi_tok < 0.25 * nmi_glob;
  detail("seed %llu: speaker tilts %.3f / %.3f; %d/%d conversions > 2x closer to reference (worst ref/src %.3f); "
         "tokens identical %d/%d",
         (unsigned long long)r.seed, mean_tilt[0], mean_tilt[1], closer, converted, worst_ratio, same_tokens,
         converted);
  detail("seed %llu: NMI(tokens;speaker) %.4f vs NMI(PCA-1 sign;speaker) %.4f; I/H(speaker) %.4f vs %.4f -> %s",
         (unsigned long long)r.seed, nmi_tok, nmi_glob, tok_info.pnmi(), glob_info.pnmi(), ok ? "pass" : "fail");
  return ok;
}

// ------------------------------------------------------------------ 8

double grad_mass(const ParamStore<float>& st, const std::string& prefix, std::size_t* tensors = nullptr) {
  double g = 0;
  for (const auto& e : st.entries())
    if (e.name.rfind(prefix, 0) == 0) {
      if (tensors) ++*tensors;
      if (e.var.grad().size() != 0) g += e.var.grad().cwiseAbs().cast<double>().sum();
    }
  return g;
}

void criterion_ablation(SeedRun& r) {
  Timer t;
  // On the trained model: at initialisation adaLN-Zero keeps the global
  // branch out of the output, so its gradient would be zero either way.
  const TrainItem& item = r.pc.items[3];
  Codec<float>& codec = *r.codec;
  const CodecInputs in = item_inputs(item);
  auto run = [&](ForwardFlags flags) {
    codec.store.zero_grad();
    auto out = full_forward(codec, in, flags);
    const auto loss =
        loss_main(out.mel, item.mel, out.features ? &*out.features : nullptr, &item.content, r.cfg.train.alpha);
    backward(loss.total);
  };
  std::size_t n_global = 0, n_fdec = 0;
  run({true, true});
  const double on_global = grad_mass(codec.store, "global.", &n_global);
  const double on_fdec = grad_mass(codec.store, "feature_decoder.", &n_fdec);
  run({false, true});
  const double off_global = grad_mass(codec.store, "global.");
  run({true, false});
  const double off_fdec = grad_mass(codec.store, "feature_decoder.");
  codec.store.zero_grad();
  detail("global branch (%zu tensors): |grad| %.3e on, %.17g off; feature decoder (%zu tensors): %.3e on, %.17g off",
         n_global, on_global, off_global, n_fdec, on_fdec, off_fdec);
  const bool ablation_ok = n_global > 0 && n_fdec > 0 && on_global > 0 && on_fdec > 0 && off_global == 0.0 &&
                           off_fdec == 0.0;

  std::map<std::string, MatF> before;
  for (const auto& e : r.codec->store.entries()) before[e.name] = e.var.value();
  TrainConfig post = r.cfg.train;
  post.mode = TrainMode::Post;
  post.steps = 100;
  auto disc = make_discriminator<float>(r.cfg.model.mel.n_mels, post.disc_bands, post.disc_layers, post.disc_channels,
                                        post.seed);
  const auto res = train_loop(*r.codec, r.pc, post, &disc);
  std::size_t content = 0, content_same = 0, moved_global = 0, moved_decoder = 0;
  for (const auto& e : r.codec->store.entries()) {
    const bool same = e.var.value() == before.at(e.name);
    if (e.name.rfind("content.", 0) == 0) {
      ++content;
      content_same += same;
    }
    if (e.name.rfind("global.", 0) == 0) moved_global += !same;
    if (e.name.rfind("decoder.", 0) == 0) moved_decoder += !same;
  }
  const double secs = t.seconds();
  detail("post-training 100 steps: content tensors unchanged %zu/%zu, moved global %zu, moved decoder %zu, "
         "final l_adv %.4f l_disc %.4f",
         content_same, content, moved_global, moved_decoder, res.curve.back().l_adv, res.curve.back().l_disc);
  const bool post_ok = content > 0 && content_same == content && moved_global > 0 && moved_decoder > 0;
  record(8, ablation_ok && post_ok && secs < 120.0,
         fmt("ablation grads exactly 0, content bitwise frozen over 100 post steps, %.1f s", secs));
  r.disc = std::move(disc);
}

// ------------------------------------------------------------------ 9, 10

void criterion_streaming(const SeedRun& r) {
  Timer t;
  const auto& cfg = r.cfg.model;
  const int sr = cfg.mel.sample_rate;
  const Audio audio = synth_toy_utterance({150.0, 0.9}, 60.0, sr, 606);
  const FeatureSource source = synthetic_feature_source(cfg, r.pc.ssl, r.pc.stats);
  StreamOptions opt;
  const StreamResult s = stream_resynthesize(audio.samples, *r.codec, source, opt);

  bool overlaps_ok = s.plan.overlap == 34560;
  for (std::size_t i = 0; i + 1 < s.plan.ranges.size(); ++i)
    overlaps_ok = overlaps_ok && s.plan.ranges[i].second - s.plan.ranges[i + 1].first == 34560;

  const Encoded whole = encode(*r.codec, source(audio.samples, 0));
  std::int64_t compared = 0, equal = 0;
  for (const auto& c : s.chunks) {
    const auto [lo, hi] = interior_tokens(c, cfg, s.plan);
    for (std::int64_t k = lo; k < hi; ++k) {
      ++compared;
      equal += c.tokens[std::size_t(k - c.first_token)] == whole.tokens[std::size_t(k)];
    }
  }

  // Boundary jumps: largest sample step across each crossfade window.
  const auto fade = std::size_t(std::llround(opt.fade_ms * 1e-3 * sr));
  std::vector<bool> near_boundary(s.audio.size(), false);
  std::vector<std::pair<std::size_t, std::size_t>> windows;
  for (std::size_t i = 1; i < s.plan.ranges.size(); ++i) {
    const std::size_t start = s.plan.ranges[i].first + (s.plan.overlap - fade) / 2;
    const std::size_t lo = start > 0 ? start - 1 : 0, hi = std::min(s.audio.size() - 1, start + fade + 1);
    windows.emplace_back(lo, hi);
    for (std::size_t n = lo; n <= hi; ++n) near_boundary[n] = true;
  }
  double intra = 0, worst_boundary = 0;
  for (std::size_t n = 0; n + 1 < s.audio.size(); ++n) {
    const double d = std::abs(double(s.audio[n + 1]) - double(s.audio[n]));
    if (!near_boundary[n] && !near_boundary[n + 1]) intra = std::max(intra, d);
  }
  for (const auto& [lo, hi] : windows)
    for (std::size_t n = lo; n < hi; ++n)
      worst_boundary = std::max(worst_boundary, std::abs(double(s.audio[n + 1]) - double(s.audio[n])));

  std::vector<Eigen::RowVectorXd> same(s.chunks.size(), s.chunks.front().global);
  const double agg_diff =
      (aggregate_global(same, GlobalMode::Mean) - aggregate_global(same, GlobalMode::Ema, opt.ema_alpha))
          .cwiseAbs()
          .maxCoeff();
  bool finite = true;
  for (float v : s.audio) finite = finite && std::isfinite(v);
  const double secs = t.seconds();
  detail("%zu chunks, overlaps %s; interior tokens %lld/%lld equal to whole-file encoding", s.chunks.size(),
         overlaps_ok ? "all 34560 samples" : "WRONG", (long long)equal, (long long)compared);
  detail("max boundary step %.4f vs intra-segment max step %.4f; mean vs EMA on identical embeddings %.2e", worst_boundary,
         intra, agg_diff);
  record(9,
         overlaps_ok && compared > 0 && equal == compared && worst_boundary <= 2.0 * intra && agg_diff <= 1e-6 &&
             finite && secs < 60.0,
         fmt("%lld/%lld interior tokens, boundary %.3f <= 2 x %.3f, %.1f s", (long long)equal, (long long)compared,
             worst_boundary, intra, secs));
}

void criterion_length(const SeedRun& r) {
  Timer t;
  const auto& cfg = r.cfg.model;
  const double seconds = 6 * 5.76;
  const Audio audio = synth_toy_utterance({240.0, 1.9}, seconds, cfg.mel.sample_rate, 707);
  const TrainItem item = prepare_item({"long", 1, audio}, cfg, r.pc.ssl, r.pc.stats);
  const CodecInputs in = item_inputs(item);
  const Encoded e = encode(*r.codec, in);
  const MatF mel = decode(*r.codec, e.tokens, e.global, in.mel_frames);
  const MatF feats = reconstruct_features(*r.codec, e.tokens);
  const auto frames = in.content.rows();
  const bool contracts = frames == 1728 && std::int64_t(e.tokens.size()) == token_count(frames, cfg) &&
                         e.tokens.size() == 432 && mel.rows() == cfg.mel.frames_for(audio.samples.size()) &&
                         mel.cols() == cfg.mel.n_mels && feats.rows() == 432 * cfg.stride() &&
                         e.global.size() == cfg.global.embed_dim;
  bool tokens_in_range = true;
  for (auto tok : e.tokens) tokens_in_range = tokens_in_range && tok >= 0 && tok < cfg.codebook_size();
  const bool finite = mel.allFinite() && feats.allFinite() && e.global.allFinite();
  const double l1 = (mel - item.mel).cwiseAbs().mean();
  const double secs = t.seconds();
  detail("%.2f s input: %lld feature frames -> %zu tokens -> %lld mel frames, %lld feature rows; mel L1 %.3f",
         seconds, (long long)frames, e.tokens.size(), (long long)mel.rows(), (long long)feats.rows(), l1);
  record(10, contracts && tokens_in_range && finite && secs < 30.0,
         fmt("432 tokens, %lld mel frames, finite, %.1f s", (long long)mel.rows(), secs));
}

// ------------------------------------------------------------------ 11

void criterion_mushra() {
  Timer t;
  const auto flat = mushra_bootstrap(std::vector<double>(24, 71.5), 1000, 0.95, 3);
  const bool degenerate = flat.median == 71.5 && flat.lo == 71.5 && flat.hi == 71.5;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 100);
  std::vector<double> scores(200);
  for (auto& x : scores) x = u(rng);
  Timer run;
  const auto a = mushra_bootstrap(scores, 1000, 0.95, 99);
  const double run_secs = run.seconds();
  const auto b = mushra_bootstrap(scores, 1000, 0.95, 99);
  const bool repro = a.median == b.median && a.lo == b.lo && a.hi == b.hi;
  detail("flat [%.2f, %.2f] median %.2f; random median %.3f CI [%.3f, %.3f]; 1000 iterations in %.4f s", flat.lo,
         flat.hi, flat.median, a.median, a.lo, a.hi, run_secs);
  record(11, degenerate && repro && run_secs < 1.0 && t.seconds() < 5.0,
         fmt("zero-width degenerate CI, bitwise reproducible, %.3f s", run_secs));
}

// ------------------------------------------------------------------ 12

const char* kSmallConfig = R"(preset = desk
[model]
ssl_dim = 16
content.layers = 1
content.heads = 2
content.d_model = 16
content.d_ffn = 32
token_module.layers = 1
token_module.heads = 2
token_module.d_model = 16
token_module.d_ffn = 32
mel_module.layers = 1
mel_module.heads = 2
mel_module.d_model = 16
mel_module.d_ffn = 32
feature_decoder.layers = 1
feature_decoder.heads = 2
feature_decoder.d_model = 16
feature_decoder.d_ffn = 32
global.width = 8
global.embed_dim = 6
global.pool_hidden = 4
postnet.channels = 4
[train]
steps = 25
)";

int cli(std::vector<std::string> args, std::string* err_text = nullptr) {
  args.insert(args.begin(), "disco");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (err_text) *err_text = err.str();
  return code;
}

void criterion_determinism(const SeedRun* r) {
  Timer t;
  const fs::path dir = fs::temp_directory_path() / ("disco_accept_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  auto p = [&](const std::string& n) { return (dir / n).string(); };
  atomic_write(dir / "small.cfg", kSmallConfig);
  bool ok = cli({"synth-corpus", "--out", p("corpus"), "--per-speaker", "2", "--seconds", "2"}) == 0;
  const std::vector<std::string> train{"train", "-q", "--config", p("small.cfg"), "--corpus", p("corpus"), "--out",
                                       p("m.knck")};
  ok = ok && cli(train) == 0;
  const std::string first = ok ? read_file(p("m.knck.loss.csv")) : "";
  const std::string first_ck = ok ? read_file(p("m.knck")) : "";
  auto again = train;
  again.push_back("--force");
  ok = ok && cli(again) == 0;
  const std::string second = ok ? read_file(p("m.knck.loss.csv")) : "";
  const bool csv_same = ok && !first.empty() && first == second && read_file(p("m.knck")) == first_ck;
  std::size_t rows = 0;
  for (char c : first) rows += c == '\n';
  detail("cmd_train twice: loss CSV %zu bytes, %zu data rows, %s; checkpoint %s", first.size(), rows ? rows - 1 : 0,
         csv_same ? "identical" : "DIFFERENT", csv_same ? "identical" : "DIFFERENT");

  std::vector<std::string> broken;
  auto check = [&](const char* name, bool same) {
    if (!same) broken.push_back(name);
  };
  std::mt19937_64 rng(12);
  TokenFile tf;
  std::uniform_int_distribution<int> tok(0, 12799);
  for (int i = 0; i < 500; ++i) tf.tokens.push_back(std::uint16_t(tok(rng)));
  const auto tb = encode_token_file(tf);
  check("tokens", encode_token_file(decode_token_file(tb)) == tb);
  EmbeddingFile ef;
  std::normal_distribution<float> g;
  for (int i = 0; i < 128; ++i) ef.values.push_back(g(rng));
  const auto eb = encode_embedding_file(ef);
  check("embedding", encode_embedding_file(decode_embedding_file(eb)) == eb);
  FeatureFile ff;
  ff.values = oracle::random_matrix(40, 12, rng).cast<float>();
  const auto fb = encode_feature_file(ff);
  check("features", encode_feature_file(decode_feature_file(fb)) == fb);
  for (WavEncoding enc : {WavEncoding::Pcm16, WavEncoding::Float32}) {
    const Audio a = synth_toy_utterance({150.0, 0.9}, 0.5, 24000, 5);
    const auto wb = encode_wav(a, enc);
    check(enc == WavEncoding::Pcm16 ? "wav-pcm16" : "wav-f32", encode_wav(decode_wav(wb), enc) == wb);
  }
  check("cli-checkpoint", !first_ck.empty() && [&] {
    const Checkpoint ck = decode_checkpoint(first_ck);
    return encode_checkpoint(ck.config, ck.codec, ck.stats, ck.disc ? &*ck.disc : nullptr) == first_ck;
  }());
  if (r) {
    const Discriminator<float>* d = r->disc ? &*r->disc : nullptr;
    const auto bytes = encode_checkpoint(r->cfg, *r->codec, r->pc.stats, d);
    const Checkpoint ck = decode_checkpoint(bytes);
    check("desk-checkpoint", ck.disc.has_value() == (d != nullptr) &&
                                 encode_checkpoint(ck.config, ck.codec, ck.stats, ck.disc ? &*ck.disc : nullptr) == bytes);
    check("config", render_config(parse_config(render_config(r->cfg))) == render_config(r->cfg));
  }
  fs::remove_all(dir);
  const double secs = t.seconds();
  std::string list;
  for (const auto& b : broken) list += " " + b;
  detail("format round trips: %s", broken.empty() ? "tokens, embedding, features, wav pcm16/f32, checkpoints, config"
                                                   : ("BROKEN:" + list).c_str());
  record(12, csv_same && broken.empty(), fmt("identical loss CSV on rerun, all formats bitwise, %.1f s", secs));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> want;
  for (int i = 1; i < argc; ++i) want.insert(std::atoi(argv[i]));
  if (want.empty())
    for (int i = 1; i <= 12; ++i) want.insert(i);
  auto wanted = [&](int n) { return want.count(n) > 0; };
  Timer total;

  try {
    if (wanted(1)) criterion_fsq_constants();
    if (wanted(2)) criterion_fsq_bijectivity();
    if (wanted(3)) criterion_gradients();
    if (wanted(4)) criterion_metric_oracles();
    if (wanted(5)) criterion_boundaries();
    if (wanted(11)) criterion_mushra();

    std::unique_ptr<SeedRun> seed0;
    if (wanted(6) || wanted(7)) {
      int pass6 = 0, pass7 = 0;
      for (int s = 0; s < kSeeds; ++s) {
        auto run = train_seed(std::uint64_t(s));
        pass6 += overfit_ok(*run);
        pass7 += disentangled_ok(*run);
        if (s == 0) seed0 = std::move(run);
      }
      if (wanted(6)) record(6, pass6 >= kSeedsNeeded, fmt("%d/%d seeds", pass6, kSeeds));
      if (wanted(7)) record(7, pass7 >= kSeedsNeeded, fmt("%d/%d seeds", pass7, kSeeds));
    }
    if (!seed0 && (wanted(8) || wanted(9) || wanted(10) || wanted(12))) seed0 = train_seed(0);
    if (wanted(9)) criterion_streaming(*seed0);
    if (wanted(10)) criterion_length(*seed0);
    if (wanted(8)) criterion_ablation(*seed0);
    if (wanted(12)) criterion_determinism(seed0.get());
  } catch (const std::exception& e) {
    std::printf("  aborted: %s\n", e.what());
  }

  std::printf("\n");
  bool all = true;
  for (int n : want) {
    const auto it = g_results.find(n);
    const bool pass = it != g_results.end() && it->second.pass;
    all = all && pass;
    std::printf("criterion %d: %s  %s\n", n, pass ? "PASS" : "FAIL",
                it == g_results.end() ? "(not reached)" : it->second.summary.c_str());
  }
  std::printf("total %.0f s\n", total.seconds());
  return all ? 0 : 1;
}
