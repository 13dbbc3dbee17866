#include "cli.hpp"

#include "disco/audio.hpp"
#include "disco/checkpoint.hpp"
#include "disco/config.hpp"
#include "disco/corpus.hpp"
#include "disco/formats.hpp"
#include "disco/io.hpp"
#include "disco/kmeans.hpp"
#include "disco/metrics.hpp"
#include "disco/streaming.hpp"
#include "disco/training.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

namespace disco::cli {

namespace fs = std::filesystem;

namespace {

// Options shared by the commands that build or load a model.
struct ModelOpts {
  std::string config_path;
  std::string preset = "desk";
  std::vector<std::string> sets;
  std::int64_t seed = -1;
};

void add_model_opts(CLI::App* c, ModelOpts& m) {
  c->add_option("--config", m.config_path, "Config file (key = value with [sections])");
  c->add_option("--preset", m.preset, "Preset when no config file is given")->check(CLI::IsMember({"desk", "paper"}));
  c->add_option("--set", m.sets, "Override one field, e.g. --set train.alpha=0 (repeatable)");
  c->add_option("--seed", m.seed, "Seed for initialisation, shuffling and cropping");
}

Config build_config(const ModelOpts& m) {
  Config cfg = m.config_path.empty() ? preset_config(m.preset) : load_config(m.config_path);
  for (const auto& s : m.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set " + s + ": expected key=value");
    apply_override(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (m.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(m.seed);
  return cfg;
}

std::vector<LabeledAudio> load_corpus_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir + ": corpus directory not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  if (files.empty()) throw DataError(dir + ": no .wav files");
  std::sort(files.begin(), files.end());
  std::vector<LabeledAudio> out;
  for (const auto& f : files) {
    LabeledAudio a;
    a.name = f.stem().string();
    // "spk<N>_..." names carry a speaker label; anything else is speaker 0.
    if (a.name.rfind("spk", 0) == 0) a.speaker = std::atoi(a.name.c_str() + 3);
    a.audio = load_wav(f);
    out.push_back(std::move(a));
  }
  return out;
}

Audio load_wav_checked(const std::string& path, const Config& cfg) {
  Audio a = load_wav(path);
  if (a.sample_rate != cfg.model.mel.sample_rate)
    throw DataError(path + ": sample rate " + std::to_string(a.sample_rate) + " Hz, model expects " +
                    std::to_string(cfg.model.mel.sample_rate));
  if (a.samples.size() < std::size_t(cfg.model.mel.n_fft)) throw DataError(path + ": audio too short");
  return a;
}

std::vector<int> feature_layers(const CodecConfig& cfg) {
  std::vector<int> layers = cfg.content_layers;
  layers.insert(layers.end(), cfg.global_layers.begin(), cfg.global_layers.end());
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  return layers;
}

// Model inputs from audio, or from imported feature files when given.
CodecInputs inputs_for(const Checkpoint& ck, const Audio& a, const std::string& content_feats,
                       const std::string& global_feats) {
  const CodecConfig& m = ck.config.model;
  CodecInputs in;
  if (content_feats.empty() || global_feats.empty()) {
    auto layers = synth_ssl_layers(a.samples, a.sample_rate, feature_layers(m), ck.config.ssl);
    in = prepare_inputs(layers, m, ck.stats, m.mel.frames_for(a.samples.size()));
  }
  if (!content_feats.empty()) in.content = normalize(import_features(content_feats, m.ssl_dim).values, ck.stats);
  if (!global_feats.empty()) in.global = import_features(global_feats, m.ssl_dim).values;
  if (in.content.rows() != in.global.rows())
    throw DataError("content and global features differ in frame count (" + std::to_string(in.content.rows()) +
                    " vs " + std::to_string(in.global.rows()) + ")");
  in.mel_frames = m.mel.frames_for(a.samples.size());
  return in;
}

TokenFile token_file_for(const CodecConfig& m, const std::vector<std::int64_t>& tokens) {
  TokenFile f;
  f.token_rate_hz = m.token_rate;
  f.codebook_size = static_cast<std::uint32_t>(m.codebook_size());
  if (m.quantizer == QuantizerKind::Fsq)
    f.levels = m.fsq.levels;
  else
    f.levels.clear();
  for (auto t : tokens) f.tokens.push_back(static_cast<std::uint16_t>(t));
  return f;
}

void check_token_file(const TokenFile& f, const CodecConfig& m, const std::string& path) {
  const TokenFile expect = token_file_for(m, {});
  if (std::llround(f.token_rate_hz * 1000) != std::llround(expect.token_rate_hz * 1000) ||
      f.codebook_size != expect.codebook_size || f.levels != expect.levels)
    throw DataError(path + ": token metadata does not match the checkpoint (rate " + std::to_string(f.token_rate_hz) +
                    " Hz, " + std::to_string(f.codebook_size) + " codes)");
}

std::string mel_csv(const MatD& mel) {
  std::ostringstream os;
  char buf[32];
  for (Eigen::Index t = 0; t < mel.rows(); ++t) {
    for (Eigen::Index j = 0; j < mel.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", mel(t, j));
      os << (j ? "," : "") << buf;
    }
    os << '\n';
  }
  return os.str();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::istringstream is(read_file(path));
  std::vector<std::string> lines;
  for (std::string l; std::getline(is, l);) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
    lines.push_back(l);
  }
  return lines;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) {
    const auto b = f.find_first_not_of(" \t"), e = f.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : f.substr(b, e - b + 1));
  }
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": expected a number, got '" + s + "'");
  }
}

void emit(std::ostream& out, const Report& r, bool csv) { out << (csv ? r.csv() : r.table()); }

void write_text(const std::string& path, const std::string& text, bool force) { atomic_write(path, text, force); }

// ---------------------------------------------------------------- commands

int cmd_train(const ModelOpts& mo, const std::string& corpus_dir, const std::string& out, std::string curve,
              const std::string& valid_dir, int valid_every, bool force, bool quiet, std::ostream& err) {
  Config cfg = build_config(mo);
  if (cfg.train.mode == TrainMode::Post) throw ConfigError("train: use the posttrain command for the post phase");
  if (curve.empty()) curve = out + ".loss.csv";
  check_writable(out, force);
  check_writable(curve, force);
  const auto audio = load_corpus_dir(corpus_dir);
  const PreparedCorpus pc = prepare_corpus(audio, cfg.model, cfg.ssl);
  Codec<float> codec = make_codec<float>(cfg.model, cfg.train.seed);
  // with --valid, keep the weights with the lowest validation mel L1
  std::optional<PreparedCorpus> valid;
  if (!valid_dir.empty()) valid = prepare_corpus(load_corpus_dir(valid_dir), cfg.model, cfg.ssl, &pc.stats);
  std::vector<MatF> best;
  double best_mel = std::numeric_limits<double>::infinity();
  int best_step = -1;
  const auto res = train_loop(codec, pc, cfg.train, nullptr, [&](const CurveRow& r) {
    if (!quiet && (r.step % 100 == 0 || r.step + 1 == cfg.train.steps))
      err << "step " << r.step << " l_mel " << r.l_mel << " l_ssl " << r.l_ssl << " lr " << r.lr << '\n';
    if (!valid || ((r.step + 1) % valid_every != 0 && r.step + 1 != cfg.train.steps)) return;
    const double mel = evaluate_main_loss(codec, *valid, cfg.train.alpha).mel;
    if (!quiet) err << "step " << r.step << " valid l_mel " << mel << '\n';
    if (mel < best_mel) {
      best_mel = mel;
      best_step = r.step;
      best.clear();
      for (const auto& e : codec.store.entries()) best.push_back(e.var.value());
    }
  });
  if (best_step >= 0 && best_step + 1 != cfg.train.steps) {
    auto& entries = codec.store.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i].var.mutable_value() = best[i];
    if (!quiet) err << "kept step " << best_step << " (valid l_mel " << best_mel << ")\n";
  }
  save_checkpoint(out, cfg, codec, pc.stats, nullptr, force);
  write_text(curve, curve_csv(res.curve), force);
  return kOk;
}

int cmd_posttrain(const std::string& in, const std::string& corpus_dir, const std::string& out, std::string curve,
                  const std::vector<std::string>& sets, std::int64_t seed, bool force, bool quiet, std::ostream& err) {
  if (curve.empty()) curve = out + ".loss.csv";
  check_writable(out, force);
  check_writable(curve, force);
  Checkpoint ck = load_checkpoint(in);
  Config cfg = ck.config;
  cfg.train.mode = TrainMode::Post;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set " + s + ": expected key=value");
    apply_override(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
  if (cfg.model.ssl_dim != ck.config.model.ssl_dim || cfg.model.mel.n_mels != ck.config.model.mel.n_mels)
    throw ConfigError("posttrain: model fields cannot be overridden");
  const auto audio = load_corpus_dir(corpus_dir);
  const PreparedCorpus pc = prepare_corpus(audio, cfg.model, cfg.ssl, &ck.stats);
  Discriminator<float> disc = ck.disc ? *ck.disc
                                      : make_discriminator<float>(cfg.model.mel.n_mels, cfg.train.disc_bands,
                                                                  cfg.train.disc_layers, cfg.train.disc_channels,
                                                                  cfg.train.seed);
  const auto res = train_loop(ck.codec, pc, cfg.train, &disc, [&](const CurveRow& r) {
    if (!quiet && (r.step % 100 == 0 || r.step + 1 == cfg.train.steps))
      err << "step " << r.step << " l_mel " << r.l_mel << " l_adv " << r.l_adv << " l_disc " << r.l_disc << '\n';
  });
  save_checkpoint(out, cfg, ck.codec, ck.stats, &disc, force);
  write_text(curve, curve_csv(res.curve), force);
  return kOk;
}

struct CodecIo {
  std::string checkpoint, wav, content_feats, global_feats;
};

int cmd_encode(const CodecIo& io, const std::string& tokens, const std::string& embedding, bool force) {
  check_writable(tokens, force);
  check_writable(embedding, force);
  const Checkpoint ck = load_checkpoint(io.checkpoint);
  const Audio a = load_wav_checked(io.wav, ck.config);
  const Encoded e = encode(ck.codec, inputs_for(ck, a, io.content_feats, io.global_feats));
  EmbeddingFile ef;
  for (Eigen::Index i = 0; i < e.global.size(); ++i) ef.values.push_back(static_cast<float>(e.global[i]));
  write_token_file(tokens, token_file_for(ck.config.model, e.tokens), force);
  write_embedding_file(embedding, ef, force);
  return kOk;
}

struct DecodeOut {
  std::string wav, mel_csv, mel_feat;
  int gl_iters = 32;
  double gl_momentum = 0.99;
  std::uint64_t seed = 0;
};

void write_decoded(const Config& cfg, const MatD& mel, std::size_t samples, const DecodeOut& o, bool force) {
  if (!o.mel_csv.empty()) write_text(o.mel_csv, mel_csv(mel), force);
  if (!o.mel_feat.empty()) {
    FeatureFile f;
    f.rate_hz = cfg.model.mel.frame_rate();
    f.values = mel.cast<float>();
    write_feature_file(o.mel_feat, f, force);
  }
  if (!o.wav.empty()) {
    Audio out;
    out.sample_rate = cfg.model.mel.sample_rate;
    out.samples = griffin_lim_invert(mel, cfg.model.mel, o.gl_iters, o.seed, o.gl_momentum);
    if (samples > 0) out.samples.resize(samples, 0.0f);
    save_wav(o.wav, out, WavEncoding::Pcm16, force);
  }
}

void check_outputs(const DecodeOut& o, bool force) {
  if (o.wav.empty() && o.mel_csv.empty() && o.mel_feat.empty())
    throw CLI::ValidationError("decode", "give at least one of --wav, --mel-csv, --mel");
  for (const auto* p : {&o.wav, &o.mel_csv, &o.mel_feat})
    if (!p->empty()) check_writable(*p, force);
}

int cmd_decode(const std::string& checkpoint, const std::string& tokens, const std::string& embedding,
               const DecodeOut& o, bool force) {
  check_outputs(o, force);
  const Checkpoint ck = load_checkpoint(checkpoint);
  const TokenFile tf = read_token_file(tokens);
  check_token_file(tf, ck.config.model, tokens);
  if (tf.tokens.empty()) throw DataError(tokens + ": no tokens");
  const EmbeddingFile ef = read_embedding_file(embedding);
  if (static_cast<int>(ef.values.size()) != ck.config.model.global.embed_dim)
    throw DataError(embedding + ": dimension " + std::to_string(ef.values.size()) + ", checkpoint expects " +
                    std::to_string(ck.config.model.global.embed_dim));
  std::vector<std::int64_t> t(tf.tokens.begin(), tf.tokens.end());
  Eigen::RowVectorXd g(ef.values.size());
  for (std::size_t i = 0; i < ef.values.size(); ++i) g[Eigen::Index(i)] = ef.values[i];
  const MatD mel = decode(ck.codec, t, g).cast<double>();
  write_decoded(ck.config, mel, 0, o, force);
  return kOk;
}

int cmd_resynth(const CodecIo& io, const DecodeOut& o, bool stream, const std::string& mode, std::string tokens_out,
                bool force, std::ostream& out) {
  check_outputs(o, force);
  if (!tokens_out.empty()) check_writable(tokens_out, force);
  const Checkpoint ck = load_checkpoint(io.checkpoint);
  const Audio a = load_wav_checked(io.wav, ck.config);
  if (stream) {
    if (!io.content_feats.empty() || !io.global_feats.empty())
      throw CLI::ValidationError("resynth", "--stream works from audio only");
    StreamOptions so;
    so.mode = mode == "ema" ? GlobalMode::Ema : GlobalMode::Mean;
    so.gl_iters = o.gl_iters;
    so.gl_momentum = o.gl_momentum;
    const auto r = stream_resynthesize(a.samples, ck.codec, synthetic_feature_source(ck.config.model, ck.config.ssl, ck.stats), so);
    if (!o.wav.empty()) {
      Audio w;
      w.sample_rate = a.sample_rate;
      w.samples = r.audio;
      save_wav(o.wav, w, WavEncoding::Pcm16, force);
    }
    if (!tokens_out.empty()) write_token_file(tokens_out, token_file_for(ck.config.model, r.tokens), force);
    out << "chunks " << r.chunks.size() << " tokens " << r.tokens.size() << '\n';
    return kOk;
  }
  const CodecInputs in = inputs_for(ck, a, io.content_feats, io.global_feats);
  const Encoded e = encode(ck.codec, in);
  const MatD mel = decode(ck.codec, e.tokens, e.global, in.mel_frames).cast<double>();
  if (!tokens_out.empty()) write_token_file(tokens_out, token_file_for(ck.config.model, e.tokens), force);
  write_decoded(ck.config, mel, a.samples.size(), o, force);
  return kOk;
}

int cmd_convert(const std::string& checkpoint, const std::string& source, const std::string& reference,
                const DecodeOut& o, bool force) {
  check_outputs(o, force);
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Audio src = load_wav_checked(source, ck.config);
  const Audio ref = load_wav_checked(reference, ck.config);
  const MatD mel = voice_convert(ck.codec, inputs_for(ck, src, "", ""), inputs_for(ck, ref, "", "")).cast<double>();
  write_decoded(ck.config, mel, src.samples.size(), o, force);
  return kOk;
}

int cmd_features(const std::string& wav, const std::vector<int>& layers, int dims, std::uint64_t seed,
                 const std::string& out_path, bool force) {
  check_writable(out_path, force);
  const Audio a = load_wav(wav);
  SslConfig ssl;
  ssl.dims = dims;
  ssl.seed = seed;
  std::vector<MatF> mats;
  for (auto& [l, m] : synth_ssl_layers(a.samples, a.sample_rate, layers, ssl)) mats.push_back(m);
  FeatureFile f;
  f.rate_hz = kFeatureRate;
  f.values = average_layers(mats);
  write_feature_file(out_path, f, force);
  return kOk;
}

MatD stack_features(const std::vector<std::string>& paths, int pool, double* rate = nullptr) {
  std::vector<MatD> parts;
  Eigen::Index rows = 0, dims = -1;
  for (const auto& p : paths) {
    const FeatureFile f = read_feature_file(p);
    if (rate) *rate = f.rate_hz / std::max(pool, 1);
    MatD v = f.values.cast<double>();
    if (pool > 1) v = avgpool_downsample(v, pool);
    if (dims >= 0 && v.cols() != dims) throw DataError(p + ": feature dimension differs from the other files");
    dims = v.cols();
    rows += v.rows();
    parts.push_back(std::move(v));
  }
  MatD all(rows, std::max<Eigen::Index>(dims, 0));
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    all.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return all;
}

int cmd_kmeans_fit(const std::vector<std::string>& feats, int k, int iters, int pool, std::uint64_t seed,
                   const std::string& out_path, bool force, std::ostream& out) {
  check_writable(out_path, force);
  double rate = 0.0;
  const MatD all = stack_features(feats, pool, &rate);
  if (all.rows() == 0) throw DataError("kmeans: no feature frames");
  const KmeansModel km = fit_kmeans(all, k, iters, seed);
  FeatureFile f;
  f.rate_hz = rate;  // rate of the frames the centroids were fitted on
  f.values = km.centroids.cast<float>();
  write_feature_file(out_path, f, force);
  out << "clusters " << km.k() << " inertia " << (km.inertia_history.empty() ? 0.0 : km.inertia_history.back())
      << '\n';
  return kOk;
}

int cmd_kmeans_assign(const std::string& centroids, const std::string& feats, int pool, const std::string& tokens,
                      bool force) {
  check_writable(tokens, force);
  const FeatureFile c = read_feature_file(centroids);
  const FeatureFile f = read_feature_file(feats);
  MatD x = f.values.cast<double>();
  if (pool > 1) x = avgpool_downsample(x, pool);
  if (x.cols() != c.values.cols()) throw DataError(feats + ": dimension does not match the centroids");
  if (c.values.rows() > 65536) throw DataError(centroids + ": more than 65536 centroids");
  TokenFile tf;
  tf.token_rate_hz = f.rate_hz / std::max(pool, 1);
  tf.codebook_size = static_cast<std::uint32_t>(c.values.rows());
  tf.levels.clear();
  for (int l : assign(x, c.values.cast<double>())) tf.tokens.push_back(static_cast<std::uint16_t>(l));
  write_token_file(tokens, tf, force);
  return kOk;
}

// ------------------------------------------------------------------- eval

std::vector<std::int64_t> read_tokens(const std::vector<std::string>& paths, std::int64_t& codebook) {
  std::vector<std::int64_t> all;
  codebook = -1;
  for (const auto& p : paths) {
    const TokenFile f = read_token_file(p);
    if (codebook >= 0 && codebook != f.codebook_size) throw DataError(p + ": codebook size differs from the other files");
    codebook = f.codebook_size;
    all.insert(all.end(), f.tokens.begin(), f.tokens.end());
  }
  return all;
}

int eval_entropy(const std::vector<std::string>& files, std::int64_t n, bool csv, std::ostream& out) {
  std::int64_t codebook = 0;
  const auto toks = read_tokens(files, codebook);
  if (n <= 0) n = codebook;
  Report r;
  r.add("entropy", normalized_entropy(token_histogram(toks, n), n));
  emit(out, r, csv);
  return kOk;
}

int eval_pnmi(const std::vector<std::string>& files, const std::string& labels, const std::string& joint_out,
              bool force, bool csv, std::ostream& out) {
  std::int64_t codebook = 0;
  const auto toks = read_tokens(files, codebook);
  std::vector<int> lab;
  std::istringstream is(read_file(labels));
  for (std::string w; is >> w;) lab.push_back(static_cast<int>(parse_number(w, labels)));
  if (lab.size() != toks.size())
    throw DataError(labels + ": " + std::to_string(lab.size()) + " labels for " + std::to_string(toks.size()) + " tokens");
  if (lab.empty()) throw DataError(labels + ": no labels");
  const int n_labels = *std::max_element(lab.begin(), lab.end()) + 1;
  if (*std::min_element(lab.begin(), lab.end()) < 0) throw DataError(labels + ": negative label");
  const JointCounts jc = joint_counts(lab, toks, n_labels, codebook);
  if (!joint_out.empty()) {
    std::ostringstream os;
    os << "label,token,count\n";
    for (Eigen::Index i = 0; i < jc.counts.rows(); ++i)
      for (Eigen::Index j = 0; j < jc.counts.cols(); ++j)
        if (jc.counts(i, j) > 0) os << i << ',' << j << ',' << jc.counts(i, j) << '\n';
    write_text(joint_out, os.str(), force);
  }
  const InformationStats s = information(jc);
  Report r;
  r.add("pnmi", pnmi(jc));
  r.add("mi_nats", s.mi);
  r.add("h_labels_nats", s.h_rows);
  emit(out, r, csv);
  return kOk;
}

int eval_abx(const std::string& triples, int synthetic, double separation, std::uint64_t seed,
             const std::string& distance, bool csv, std::ostream& out) {
  std::vector<AbxTriple> t;
  if (!triples.empty()) {
    const fs::path base = fs::path(triples).parent_path();
    int line_no = 0;
    for (const auto& line : read_lines(triples)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      const auto f = split_csv(line);
      if (f.size() != 3) throw DataError(triples + ":" + std::to_string(line_no) + ": expected a,b,x paths");
      auto load = [&](const std::string& p) { return read_feature_file(base / p).values.cast<double>().eval(); };
      t.push_back({load(f[0]), load(f[1]), load(f[2])});
    }
  } else if (synthetic > 0) {
    t = synthetic_abx_triples(synthetic, 16, 20, separation, seed);
  } else {
    throw CLI::ValidationError("abx", "give --triples or --synthetic");
  }
  Report r;
  r.add("abx_error", abx_error(t, distance == "mean" ? AbxDistance::FrameMean : AbxDistance::Dtw));
  r.add("triples", double(t.size()));
  emit(out, r, csv);
  return kOk;
}

int eval_eer(const std::string& trials, bool csv, std::ostream& out) {
  std::vector<Trial> t;
  int line_no = 0;
  for (const auto& line : read_lines(trials)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line.rfind("score", 0) == 0) continue;
    const auto f = split_csv(line);
    const std::string where = trials + ":" + std::to_string(line_no);
    if (f.size() != 2) throw DataError(where + ": expected score,label");
    bool same;
    if (f[1] == "same" || f[1] == "1" || f[1] == "target")
      same = true;
    else if (f[1] == "different" || f[1] == "0" || f[1] == "nontarget")
      same = false;
    else
      throw DataError(where + ": label must be same or different");
    t.push_back({parse_number(f[0], where), same});
  }
  Report r;
  r.add("eer", eer(t));
  emit(out, r, csv);
  return kOk;
}

int eval_f0corr(const std::string& ref, const std::string& hyp, bool raw, const std::string& overlay, bool force,
                bool csv, std::ostream& out) {
  if (!overlay.empty()) check_writable(overlay, force);
  const Audio a = load_wav(ref), b = load_wav(hyp);
  PitchConfig pc;
  pc.frame_hop = a.sample_rate / 100;
  PitchConfig pcb = pc;
  pcb.frame_hop = b.sample_rate / 100;
  const PitchTrack ta = f0_extract(a.samples, a.sample_rate, pc), tb = f0_extract(b.samples, b.sample_rate, pcb);
  const auto agr = f0_corr_rmse(ta, tb, !raw);
  if (!agr) throw DataError("f0corr: fewer than 3 frames voiced in both files");
  if (!overlay.empty()) write_text(overlay, f0_overlay_csv(ta, tb), force);
  Report r;
  r.add("f0corr", agr->corr);
  r.add("log_f0_rmse", agr->rmse);
  r.add("frames", double(agr->frames));
  emit(out, r, csv);
  return kOk;
}

int eval_wer(const std::string& ref, const std::string& hyp, bool chars, bool csv, std::ostream& out) {
  const auto rl = read_lines(ref), hl = read_lines(hyp);
  if (rl.size() != hl.size())
    throw DataError("wer: " + std::to_string(rl.size()) + " reference lines vs " + std::to_string(hl.size()) + " hypotheses");
  std::size_t edits = 0, length = 0;
  for (std::size_t i = 0; i < rl.size(); ++i) {
    const auto r = chars ? split_chars(rl[i]) : split_words(rl[i]);
    const auto h = chars ? split_chars(hl[i]) : split_words(hl[i]);
    edits += edit_distance(r, h);
    length += r.size();
  }
  if (length == 0) throw DataError(ref + ": empty reference");
  Report r;
  r.add(chars ? "cer" : "wer", double(edits) / double(length));
  emit(out, r, csv);
  return kOk;
}

int eval_mushra(const std::string& scores, int iters, double ci, std::uint64_t seed, bool csv, std::ostream& out) {
  std::map<std::string, std::vector<double>> by_cond;
  int line_no = 0;
  for (const auto& line : read_lines(scores)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line.rfind("condition", 0) == 0) continue;
    const auto f = split_csv(line);
    const std::string where = scores + ":" + std::to_string(line_no);
    if (f.size() != 2) throw DataError(where + ": expected condition,score");
    by_cond[f[0]].push_back(parse_number(f[1], where));
  }
  if (by_cond.empty()) throw DataError(scores + ": no scores");
  if (csv) out << "condition,median,lo,hi\n";
  for (const auto& [cond, v] : by_cond) {
    const auto e = mushra_bootstrap(v, iters, ci, seed);
    char buf[160];
    if (csv)
      std::snprintf(buf, sizeof buf, "%s,%.6g,%.6g,%.6g\n", cond.c_str(), e.median, e.lo, e.hi);
    else
      std::snprintf(buf, sizeof buf, "%-16s %7.2f  [%7.2f, %7.2f]\n", cond.c_str(), e.median, e.lo, e.hi);
    out << buf;
  }
  return kOk;
}

int eval_pca(const std::vector<std::string>& files, int components, const std::string& out_path, bool force, bool csv,
             std::ostream& out) {
  if (!out_path.empty()) check_writable(out_path, force);
  MatD x(static_cast<Eigen::Index>(files.size()), 0);
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto e = read_embedding_file(files[i]);
    if (i == 0) x.resize(x.rows(), static_cast<Eigen::Index>(e.values.size()));
    if (static_cast<Eigen::Index>(e.values.size()) != x.cols()) throw DataError(files[i] + ": dimension differs");
    for (std::size_t j = 0; j < e.values.size(); ++j) x(Eigen::Index(i), Eigen::Index(j)) = e.values[j];
  }
  const Pca p = pca_project(x, components);
  if (!out_path.empty()) {
    std::ostringstream os;
    os << "file";
    for (int k = 0; k < components; ++k) os << ",pc" << k + 1;
    os << '\n';
    char buf[32];
    for (std::size_t i = 0; i < files.size(); ++i) {
      os << fs::path(files[i]).stem().string();
      for (int k = 0; k < components; ++k) {
        std::snprintf(buf, sizeof buf, "%.9g", p.projections(Eigen::Index(i), k));
        os << ',' << buf;
      }
      os << '\n';
    }
    write_text(out_path, os.str(), force);
  }
  Report r;
  for (int k = 0; k < components; ++k) r.add("explained_pc" + std::to_string(k + 1), p.explained[k]);
  emit(out, r, csv);
  return kOk;
}

int cmd_synth_corpus(const std::string& dir, int per_speaker, double seconds, std::uint64_t seed, bool force,
                     std::ostream& out) {
  ToyCorpusConfig cc;
  cc.utterances_per_speaker = per_speaker;
  cc.seconds = seconds;
  cc.seed = seed;
  const auto corpus = make_toy_corpus(cc);
  fs::create_directories(dir);
  for (const auto& u : corpus) check_writable(fs::path(dir) / (u.name + ".wav"), force);
  for (const auto& u : corpus) save_wav(fs::path(dir) / (u.name + ".wav"), u.audio, WavEncoding::Float32, force);
  out << "wrote " << corpus.size() << " utterances to " << dir << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Disentangled speech tokenizer: train, encode, decode, convert and evaluate"};
  app.name(args.empty() ? "disco" : fs::path(args[0]).filename().string());
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  bool force = false, csv = false, quiet = false;
  app.add_flag("--force", force, "Overwrite existing outputs");
  app.add_flag("--csv", csv, "Print reports as CSV instead of an aligned table");
  app.add_flag("-q,--quiet", quiet, "No progress lines");

  std::function<int()> action;

  ModelOpts mo;
  std::string corpus, out_path, curve;
  auto* train = app.add_subcommand("train", "Main-phase training on a directory of WAV files");
  add_model_opts(train, mo);
  train->add_option("--corpus", corpus, "Directory of .wav files (spk<N>_ prefixes give speaker labels)")->required();
  train->add_option("--out", out_path, "Checkpoint to write")->required();
  train->add_option("--curve", curve, "Loss CSV (default: <out>.loss.csv)");
  std::string valid_dir;
  int valid_every = 100;
  train->add_option("--valid", valid_dir, "Directory of validation .wav files; keeps the best checkpoint by mel L1");
  train->add_option("--valid-every", valid_every, "Steps between validation passes")->check(CLI::PositiveNumber);
  train->callback([&] {
    action = [&] { return cmd_train(mo, corpus, out_path, curve, valid_dir, valid_every, force, quiet, err); };
  });

  std::string in_ckpt;
  std::vector<std::string> post_sets;
  std::int64_t post_seed = -1;
  auto* post = app.add_subcommand("posttrain", "GAN post-training of the global branch and decoder");
  post->add_option("--checkpoint", in_ckpt, "Main-phase checkpoint")->required()->check(CLI::ExistingFile);
  post->add_option("--corpus", corpus, "Directory of .wav files")->required();
  post->add_option("--out", out_path, "Checkpoint to write")->required();
  post->add_option("--curve", curve, "Loss CSV (default: <out>.loss.csv)");
  post->add_option("--set", post_sets, "Override a train.* field (repeatable)");
  post->add_option("--seed", post_seed, "Seed for shuffling and cropping");
  post->callback([&] {
    action = [&] { return cmd_posttrain(in_ckpt, corpus, out_path, curve, post_sets, post_seed, force, quiet, err); };
  });

  CodecIo io;
  std::string tokens, embedding;
  auto add_io = [&](CLI::App* c) {
    c->add_option("--checkpoint", io.checkpoint, "Model checkpoint")->required();
    c->add_option("--wav", io.wav, "Input audio")->required();
    c->add_option("--content-features", io.content_feats, "Averaged content-layer features (KNFT) instead of the synthetic extractor");
    c->add_option("--global-features", io.global_feats, "Averaged global-layer features (KNFT)");
  };
  auto* enc = app.add_subcommand("encode", "Audio -> content tokens and a global embedding");
  add_io(enc);
  enc->add_option("--tokens", tokens, "Token file to write")->required();
  enc->add_option("--embedding", embedding, "Embedding file to write")->required();
  enc->callback([&] { action = [&] { return cmd_encode(io, tokens, embedding, force); }; });

  DecodeOut dout;
  auto add_decode_out = [&](CLI::App* c, bool wav_is_output_name) {
    c->add_option(wav_is_output_name ? "--out" : "--wav", dout.wav, "Audio to write (Griffin-Lim)");
    c->add_option("--mel-csv", dout.mel_csv, "Log-mel CSV to write");
    c->add_option("--mel", dout.mel_feat, "Log-mel feature file (KNFT) to write");
    c->add_option("--gl-iters", dout.gl_iters, "Griffin-Lim iterations")->capture_default_str();
    c->add_option("--gl-momentum", dout.gl_momentum, "Griffin-Lim momentum")->capture_default_str();
  };
  auto* dec = app.add_subcommand("decode", "Tokens + embedding -> log-mel and audio");
  dec->add_option("--checkpoint", io.checkpoint, "Model checkpoint")->required();
  dec->add_option("--tokens", tokens, "Token file")->required();
  dec->add_option("--embedding", embedding, "Embedding file")->required();
  add_decode_out(dec, false);
  dec->callback([&] { action = [&] { return cmd_decode(io.checkpoint, tokens, embedding, dout, force); }; });

  bool stream = false;
  std::string agg_mode = "mean";
  auto* res = app.add_subcommand("resynth", "Encode then decode one file");
  add_io(res);
  add_decode_out(res, true);
  res->add_option("--tokens", tokens, "Also write the token stream");
  res->add_flag("--stream", stream, "Chunked processing (5.76 s chunks, 1.44 s overlap)");
  res->add_option("--mode", agg_mode, "Global aggregation when streaming")->check(CLI::IsMember({"mean", "ema"}));
  res->callback([&] { action = [&] { return cmd_resynth(io, dout, stream, agg_mode, tokens, force, out); }; });

  std::string source, reference;
  auto* conv = app.add_subcommand("convert", "Content of --source spoken with the voice of --reference");
  conv->add_option("--checkpoint", io.checkpoint, "Model checkpoint")->required();
  conv->add_option("--source", source, "Source audio")->required();
  conv->add_option("--reference", reference, "Reference audio")->required();
  add_decode_out(conv, true);
  conv->callback([&] { action = [&] { return cmd_convert(io.checkpoint, source, reference, dout, force); }; });

  std::vector<int> layers{6, 9};
  int dims = 768;
  std::uint64_t seed = 0;
  auto* feat = app.add_subcommand("features", "Synthetic SSL-style features of a WAV file, layer-averaged");
  feat->add_option("--wav", io.wav, "Input audio")->required();
  feat->add_option("--layers", layers, "Layers to average")->capture_default_str();
  feat->add_option("--dims", dims, "Feature dimension")->capture_default_str();
  feat->add_option("--seed", seed, "Extractor seed")->capture_default_str();
  feat->add_option("--out", out_path, "Feature file to write")->required();
  feat->callback([&] { action = [&] { return cmd_features(io.wav, layers, dims, seed, out_path, force); }; });

  std::vector<std::string> feature_files;
  std::string centroids;
  int k = 500, iters = 20, pool = 1;
  auto* km = app.add_subcommand("kmeans", "k-means reference tokenizer");
  km->require_subcommand(1);
  auto* fit = km->add_subcommand("fit", "Fit centroids on feature files");
  fit->add_option("--features", feature_files, "Feature files (KNFT)")->required();
  fit->add_option("-k,--clusters", k, "Number of clusters")->capture_default_str();
  fit->add_option("--iters", iters, "Lloyd iterations")->capture_default_str();
  fit->add_option("--pool", pool, "Average-pool factor before clustering")->capture_default_str();
  fit->add_option("--seed", seed, "Seeding RNG")->capture_default_str();
  fit->add_option("--out", out_path, "Centroid file (KNFT)")->required();
  fit->callback([&] { action = [&] { return cmd_kmeans_fit(feature_files, k, iters, pool, seed, out_path, force, out); }; });
  auto* asg = km->add_subcommand("assign", "Nearest-centroid tokens for one feature file");
  asg->add_option("--centroids", centroids, "Centroid file")->required();
  asg->add_option("--features", io.content_feats, "Feature file")->required();
  asg->add_option("--pool", pool, "Average-pool factor")->capture_default_str();
  asg->add_option("--tokens", tokens, "Token file to write")->required();
  asg->callback([&] { action = [&] { return cmd_kmeans_assign(centroids, io.content_feats, pool, tokens, force); }; });

  auto* ev = app.add_subcommand("eval", "Evaluation metrics");
  ev->require_subcommand(1);
  std::vector<std::string> token_files;
  std::int64_t codebook = 0;
  auto* e_ent = ev->add_subcommand("entropy", "Normalized entropy of the token distribution");
  e_ent->add_option("--tokens", token_files, "Token files")->required();
  e_ent->add_option("--codebook", codebook, "Codebook size (default: from the files)");
  e_ent->callback([&] { action = [&] { return eval_entropy(token_files, codebook, csv, out); }; });

  std::string labels, joint;
  auto* e_pnmi = ev->add_subcommand("pnmi", "Phone-normalized mutual information");
  e_pnmi->add_option("--tokens", token_files, "Token files, concatenated in order")->required();
  e_pnmi->add_option("--labels", labels, "Whitespace-separated integer label per token")->required();
  e_pnmi->add_option("--joint", joint, "Write the joint counts as label,token,count CSV");
  e_pnmi->callback([&] { action = [&] { return eval_pnmi(token_files, labels, joint, force, csv, out); }; });

  std::string triples, distance = "dtw";
  int synthetic = 0;
  double separation = 0.0;
  auto* e_abx = ev->add_subcommand("abx", "ABX error over (a,b,x) feature triples");
  e_abx->add_option("--triples", triples, "CSV of a,b,x feature-file paths (relative to the CSV)");
  e_abx->add_option("--synthetic", synthetic, "Use N generated triples instead");
  e_abx->add_option("--separation", separation, "Category separation for --synthetic")->capture_default_str();
  e_abx->add_option("--seed", seed, "Seed for --synthetic")->capture_default_str();
  e_abx->add_option("--distance", distance, "dtw or mean")->check(CLI::IsMember({"dtw", "mean"}))->capture_default_str();
  e_abx->callback([&] { action = [&] { return eval_abx(triples, synthetic, separation, seed, distance, csv, out); }; });

  std::string trials;
  auto* e_eer = ev->add_subcommand("eer", "Equal error rate of scored trials");
  e_eer->add_option("--trials", trials, "CSV of score,label (same|different)")->required();
  e_eer->callback([&] { action = [&] { return eval_eer(trials, csv, out); }; });

  std::string ref, hyp, overlay;
  bool raw = false, chars = false;
  auto* e_f0 = ev->add_subcommand("f0corr", "Log-F0 correlation and RMSE between two recordings");
  e_f0->add_option("--ref", ref, "Reference audio")->required();
  e_f0->add_option("--hyp", hyp, "Hypothesis audio")->required();
  e_f0->add_flag("--raw", raw, "Skip per-instance normalization of log F0");
  e_f0->add_option("--overlay", overlay, "Write a time,f0_a,f0_b CSV");
  e_f0->callback([&] { action = [&] { return eval_f0corr(ref, hyp, raw, overlay, force, csv, out); }; });

  auto* e_wer = ev->add_subcommand("wer", "Word (or character) error rate, line by line");
  e_wer->add_option("--ref", ref, "Reference transcripts")->required();
  e_wer->add_option("--hyp", hyp, "Hypothesis transcripts")->required();
  e_wer->add_flag("--chars", chars, "Character error rate");
  e_wer->callback([&] { action = [&] { return eval_wer(ref, hyp, chars, csv, out); }; });

  std::string scores;
  int boot = 1000;
  double ci = 0.95;
  auto* e_mu = ev->add_subcommand("mushra", "Bootstrap medians and confidence intervals per condition");
  e_mu->add_option("--scores", scores, "CSV of condition,score")->required();
  e_mu->add_option("--iters", boot, "Bootstrap iterations")->capture_default_str();
  e_mu->add_option("--ci", ci, "Interval coverage")->capture_default_str();
  e_mu->add_option("--seed", seed, "Resampling seed")->capture_default_str();
  e_mu->callback([&] { action = [&] { return eval_mushra(scores, boot, ci, seed, csv, out); }; });

  std::vector<std::string> emb_files;
  int components = 2;
  auto* e_pca = ev->add_subcommand("pca", "PCA of global embeddings");
  e_pca->add_option("--embeddings", emb_files, "Embedding files")->required();
  e_pca->add_option("--components", components, "Components")->capture_default_str();
  e_pca->add_option("--out", out_path, "Write per-file projections as CSV");
  e_pca->callback([&] { action = [&] { return eval_pca(emb_files, components, out_path, force, csv, out); }; });

  int per_speaker = 16;
  double seconds = 5.76;
  auto* syn = app.add_subcommand("synth-corpus", "Write the two-speaker toy corpus as WAV files");
  syn->add_option("--out", out_path, "Directory")->required();
  syn->add_option("--per-speaker", per_speaker, "Utterances per speaker")->capture_default_str();
  syn->add_option("--seconds", seconds, "Utterance length")->capture_default_str();
  syn->add_option("--seed", seed, "Corpus seed")->capture_default_str();
  syn->callback([&] { action = [&] { return cmd_synth_corpus(out_path, per_speaker, seconds, seed, force, out); }; });

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
    return action ? action() : kUsage;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);  // prints help or the parse error
    return code == 0 ? kOk : kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const OutputExistsError& e) {
    err << "refusing to overwrite: " << e.what() << '\n';
    return kExists;
  } catch (const TrainingDivergence& e) {
    err << "training diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    // Shape, range and argument errors raised while reading inputs.
    err << "error: " << e.what() << '\n';
    return kData;
  }
}

}  // namespace disco::cli
