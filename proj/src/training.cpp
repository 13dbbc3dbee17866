#include "disco/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace disco {

namespace {

constexpr int kFeatureHop = 480;   // 24 kHz samples per 50 Hz feature frame
constexpr int kCropQuantum = 7680;  // keeps feature and mel grids aligned

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

void TrainConfig::validate() const {
  require(alpha >= 0 && beta >= 0 && gamma >= 0, "train: loss weights must be non-negative");
  require(peak_lr > 0 && post_lr > 0, "train: learning rates must be positive");
  require(warmup_frac >= 0 && warmup_frac < 1, "train: warmup_frac must be in [0, 1)");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "train: adam betas must be in [0, 1)");
  require(weight_decay >= 0, "train: weight_decay must be non-negative");
  require(adam_eps > 0, "train: adam_eps must be positive");
  require(steps >= 0, "train: steps must be non-negative");
  require(batch >= 1, "train: batch must be at least 1");
  require(segment_seconds > 0, "train: segment_seconds must be positive");
  require(disc_bands >= 1 && disc_layers >= 2 && disc_channels >= 1, "train: bad discriminator shape");
}

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.steps = 150000;
  c.batch = 128;
  return c;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.peak_lr = 2e-3;
  c.steps = 2000;
  c.batch = 2;
  c.disc_channels = 8;
  return c;
}

const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Main: return "main";
    case TrainMode::Post: return "post";
    case TrainMode::TwoStageA: return "two_stage_a";
    case TrainMode::TwoStageB: return "two_stage_b";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "main") return TrainMode::Main;
  if (s == "post") return TrainMode::Post;
  if (s == "two_stage_a") return TrainMode::TwoStageA;
  if (s == "two_stage_b") return TrainMode::TwoStageB;
  throw std::invalid_argument("unknown training mode '" + s + "'");
}

std::vector<std::string> trainable_prefixes(TrainMode mode) {
  switch (mode) {
    case TrainMode::Main: return {""};
    case TrainMode::Post: return {"global.", "decoder."};
    case TrainMode::TwoStageA: return {"content.", "feature_decoder."};
    case TrainMode::TwoStageB: return {"global.", "decoder."};
  }
  return {};
}

// ------------------------------------------------------------------- losses

template <typename S>
MainLoss<S> loss_main(const Var<S>& mel_hat, const Mat<S>& mel_ref, const Var<S>* feat_hat, const Mat<S>* feat_ref,
                      double alpha) {
  if (mel_hat.rows() != mel_ref.rows() || mel_hat.cols() != mel_ref.cols())
    throw ShapeError("loss_main: mel prediction and target differ in shape");
  MainLoss<S> out;
  Var<S> lmel = l1_loss(mel_hat, Var<S>::constant(mel_ref));
  out.mel = double(lmel.item());
  out.total = lmel;
  if (feat_hat && feat_ref) {
    if (feat_hat->rows() != feat_ref->rows() || feat_hat->cols() != feat_ref->cols())
      throw ShapeError("loss_main: feature prediction and target differ in shape");
    Var<S> lssl = mse_loss(*feat_hat, Var<S>::constant(*feat_ref));
    out.ssl = double(lssl.item());
    if (alpha != 0.0) out.total = add(out.total, scale(lssl, S(alpha)));
  }
  return out;
}

// ------------------------------------------------------------ discriminator

template <typename S>
Discriminator<S> make_discriminator(int n_mels, int bands, int layers, int channels, std::uint64_t seed) {
  require(n_mels >= bands && bands >= 1, "discriminator: need at least one mel bin per band");
  require(layers >= 2 && channels >= 1, "discriminator: need two layers and one channel");
  Discriminator<S> d;
  Rng rng(seed);
  for (int b = 0; b < bands; ++b) {
    const int lo = int(std::lround(double(b) * n_mels / bands));
    const int hi = int(std::lround(double(b + 1) * n_mels / bands));
    d.bands.emplace_back(lo, hi - lo);
    std::vector<Conv2dLayer<S>> net;
    for (int l = 0; l < layers; ++l) {
      const int cin = l == 0 ? 1 : channels;
      const int cout = l == layers - 1 ? 1 : channels;
      const std::string p = "disc.band" + std::to_string(b) + ".conv" + std::to_string(l);
      Conv2dLayer<S> c;
      c.weight = d.store.add(p + ".weight", 9 * cin, cout, Init::TruncNormal, rng, 1.0 / std::sqrt(9.0 * cin));
      c.bias = d.store.add(p + ".bias", 1, cout, Init::Zeros, rng);
      net.push_back(c);
    }
    d.nets.push_back(std::move(net));
  }
  return d;
}

template <typename S>
DiscOutput<S> discriminate(const Discriminator<S>& d, const Var<S>& mel) {
  const int t = int(mel.rows());
  DiscOutput<S> out;
  for (std::size_t b = 0; b < d.bands.size(); ++b) {
    const auto [lo, n] = d.bands[b];
    Var<S> h = reshape(slice_cols(mel, lo, n), Eigen::Index(t) * n, 1);
    std::vector<Var<S>> feats;
    const auto& net = d.nets[b];
    for (std::size_t l = 0; l < net.size(); ++l) {
      h = conv2d(h, t, n, net[l].weight, net[l].bias, 3, 3);
      if (l + 1 < net.size()) {
        h = leaky_relu(h, S(0.1));
        feats.push_back(h);
      }
    }
    out.scores.push_back(h);
    out.features.push_back(std::move(feats));
  }
  return out;
}

namespace {

template <typename S>
Var<S> mean_of(const std::vector<Var<S>>& xs) {
  Var<S> acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return scale(acc, S(1) / S(xs.size()));
}

template <typename S>
Var<S> disc_loss(const Var<S>& mel_hat, const Var<S>& real, const Discriminator<S>& d) {
  DiscOutput<S> r = discriminate(d, real);
  DiscOutput<S> f = discriminate(d, detach(mel_hat));
  std::vector<Var<S>> terms;
  for (std::size_t b = 0; b < r.scores.size(); ++b)
    terms.push_back(add(mean(square(add_scalar(r.scores[b], S(-1)))), mean(square(f.scores[b]))));
  return mean_of(terms);
}

template <typename S>
std::pair<Var<S>, Var<S>> generator_losses(const Var<S>& mel_hat, const Var<S>& real, const Discriminator<S>& d) {
  DiscOutput<S> r = discriminate(d, real);
  DiscOutput<S> f = discriminate(d, mel_hat);
  std::vector<Var<S>> adv, fm;
  for (std::size_t b = 0; b < f.scores.size(); ++b) {
    adv.push_back(mean(square(add_scalar(f.scores[b], S(-1)))));
    for (std::size_t l = 0; l < f.features[b].size(); ++l)
      fm.push_back(l1_loss(f.features[b][l], detach(r.features[b][l])));
  }
  return {mean_of(adv), mean_of(fm)};
}

}  // namespace

template <typename S>
GanLosses<S> gan_losses(const Var<S>& mel_hat, const Mat<S>& mel_ref, const Discriminator<S>& d) {
  if (mel_hat.rows() != mel_ref.rows() || mel_hat.cols() != mel_ref.cols())
    throw ShapeError("gan_losses: mel prediction and target differ in shape");
  Var<S> real = Var<S>::constant(mel_ref);
  GanLosses<S> g;
  std::tie(g.adv, g.fm) = generator_losses(mel_hat, real, d);
  g.disc = disc_loss(mel_hat, real, d);
  return g;
}

// ---------------------------------------------------------------- optimiser

template <typename S>
void AdamW<S>::step(ParamStore<S>& store, double lr) {
  auto& entries = store.entries();
  for (const auto& e : entries)
    if (e.var.requires_grad() && e.var.grad().size() != 0 && !e.var.grad().allFinite())
      throw NumericError("adamw: non-finite gradient in " + e.name);
  if (m_.size() != entries.size()) {
    m_.assign(entries.size(), Mat<S>());
    v_.assign(entries.size(), Mat<S>());
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, double(t_));
  const double c2 = 1.0 - std::pow(b2_, double(t_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& var = entries[i].var;
    if (!var.requires_grad() || var.grad().size() == 0) continue;
    Mat<S>& p = var.mutable_value();
    const Mat<S>& g = var.grad();
    if (m_[i].size() == 0) {
      m_[i] = Mat<S>::Zero(p.rows(), p.cols());
      v_[i] = Mat<S>::Zero(p.rows(), p.cols());
    }
    m_[i] = S(b1_) * m_[i] + S(1 - b1_) * g;
    v_[i] = S(b2_) * v_[i] + S(1 - b2_) * g.cwiseProduct(g);
    if (wd_ != 0.0) p *= S(1.0 - lr * wd_);
    p.array() -= S(lr) * (m_[i].array() / S(c1)) / ((v_[i].array() / S(c2)).sqrt() + S(eps_));
  }
}

template <typename S>
double clip_grad_norm(ParamStore<S>& store, double max_norm) {
  double sq = 0.0;
  for (const auto& e : store.entries())
    if (e.var.grad().size() != 0) sq += e.var.grad().template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm && std::isfinite(norm)) {
    const S f = S(max_norm / norm);
    for (auto& e : store.entries())
      if (e.var.grad().size() != 0) e.var.mutable_grad() *= f;
  }
  return norm;
}

double cosine_warmup_lr(std::int64_t step, std::int64_t total, double peak, double warmup_frac) {
  if (total <= 0) return peak;
  const double warm = warmup_frac * double(total);
  const double s = double(std::clamp<std::int64_t>(step, 0, total));
  if (s < warm) return peak * s / warm;
  if (total - warm <= 0) return peak;
  const double progress = (s - warm) / (double(total) - warm);
  return peak * 0.5 * (1.0 + std::cos(M_PI * progress));
}

// ------------------------------------------------------------------- corpus

TrainItem prepare_item(const LabeledAudio& a, const CodecConfig& cfg, const SslConfig& ssl, const NormStats& stats) {
  if (a.audio.sample_rate != cfg.mel.sample_rate)
    throw DataError(a.name + ": sample rate " + std::to_string(a.audio.sample_rate) + " Hz, expected " +
                    std::to_string(cfg.mel.sample_rate));
  if (a.audio.samples.size() < std::size_t(cfg.mel.n_fft))
    throw DataError(a.name + ": too short (" + std::to_string(a.audio.samples.size()) + " samples)");
  std::vector<int> layers = cfg.content_layers;
  layers.insert(layers.end(), cfg.global_layers.begin(), cfg.global_layers.end());
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  auto feats = synth_ssl_layers(a.audio.samples, a.audio.sample_rate, layers, ssl);
  CodecInputs in = prepare_inputs(feats, cfg, stats);
  TrainItem it;
  it.name = a.name;
  it.speaker = a.speaker;
  it.samples = a.audio.samples.size();
  it.content = std::move(in.content);
  it.global = std::move(in.global);
  it.mel = mel_spectrogram(a.audio.samples, cfg.mel).cast<float>();
  return it;
}

PreparedCorpus prepare_corpus(const std::vector<LabeledAudio>& audio, const CodecConfig& cfg, const SslConfig& ssl,
                              const NormStats* stats) {
  if (audio.empty()) throw DataError("training corpus is empty");
  PreparedCorpus pc;
  pc.ssl = ssl;
  if (stats) {
    pc.stats = *stats;
  } else {
    std::vector<MatF> content;
    for (const auto& a : audio) {
      if (a.audio.sample_rate != cfg.mel.sample_rate)
        throw DataError(a.name + ": sample rate " + std::to_string(a.audio.sample_rate) + " Hz, expected " +
                        std::to_string(cfg.mel.sample_rate));
      auto f = synth_ssl_layers(a.audio.samples, a.audio.sample_rate, cfg.content_layers, ssl);
      std::vector<MatF> parts;
      for (int id : cfg.content_layers) parts.push_back(f.at(id));
      content.push_back(average_layers(parts));
    }
    pc.stats = compute_norm_stats(content);
  }
  for (const auto& a : audio) pc.items.push_back(prepare_item(a, cfg, ssl, pc.stats));
  return pc;
}

CodecInputs item_inputs(const TrainItem& item) {
  CodecInputs in;
  in.content = item.content;
  in.global = item.global;
  in.mel_frames = item.mel.rows();
  return in;
}

std::string curve_csv(const std::vector<CurveRow>& rows) {
  std::ostringstream os;
  os << "step,l_mel,l_ssl,l_adv,l_fm,l_disc,lr\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.l_mel, r.l_ssl, r.l_adv, r.l_fm,
                  r.l_disc, r.lr);
    os << buf;
  }
  return os.str();
}

// --------------------------------------------------------------------- loop

namespace {

}  // namespace

TrainCrop crop_item(const TrainItem& it, std::size_t segment, int mel_hop, std::mt19937_64& rng) {
  TrainCrop c;
  if (it.samples <= segment) {
    c.in = item_inputs(it);
    c.mel = it.mel;
    return c;
  }
  const std::size_t slots = (it.samples - segment) / kCropQuantum;
  const std::size_t start = kCropQuantum * std::uniform_int_distribution<std::size_t>(0, slots)(rng);
  const Eigen::Index f0 = Eigen::Index(start / kFeatureHop), m0 = Eigen::Index(start / mel_hop);
  const Eigen::Index nf = std::min<Eigen::Index>(Eigen::Index(segment / kFeatureHop), it.content.rows() - f0);
  const Eigen::Index nm = std::min<Eigen::Index>(Eigen::Index(segment / mel_hop), it.mel.rows() - m0);
  c.in.content = it.content.middleRows(f0, nf);
  c.in.global = it.global.middleRows(f0, nf);
  c.in.mel_frames = nm;
  c.mel = it.mel.middleRows(m0, nm);
  return c;
}

namespace {

// The feature decoder emits stride * tokens frames; targets cover the first T.
Var<float> trim_rows(const Var<float>& x, Eigen::Index rows) {
  return x.rows() == rows ? x : slice_rows(x, 0, std::min(rows, x.rows()));
}

struct FlagGuard {
  ParamStore<float>& store;
  ~FlagGuard() { store.set_trainable("", true); }
};

void check_loss(double v, const char* what, int step) {
  if (!std::isfinite(v))
    throw TrainingDivergence(std::string("training diverged at step ") + std::to_string(step) + ": " + what +
                             " is not finite");
}

}  // namespace

TrainResult train_loop(Codec<float>& codec, const PreparedCorpus& corpus, const TrainConfig& cfg,
                       Discriminator<float>* disc, const std::function<void(const CurveRow&)>& on_step) {
  cfg.validate();
  if (corpus.items.empty()) throw DataError("training corpus is empty");
  const bool post = cfg.mode == TrainMode::Post;
  if (post && !disc) throw std::invalid_argument("post-training needs a discriminator");
  const bool vq = codec.cfg.quantizer == QuantizerKind::VqEma;
  const bool content_trains = cfg.mode == TrainMode::Main || cfg.mode == TrainMode::TwoStageA;
  if (vq && !content_trains && !codec.vq.initialized())
    throw std::invalid_argument("vq codebook must be trained before " + std::string(to_string(cfg.mode)));
  const bool want_ssl = cfg.mode == TrainMode::TwoStageA || (cfg.mode == TrainMode::Main && codec.cfg.ssl_loss_on);

  codec.store.set_trainable("", false);
  FlagGuard guard{codec.store};
  for (const auto& p : trainable_prefixes(cfg.mode)) codec.store.set_trainable(p, true);

  AdamW<float> opt(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
  AdamW<float> dopt(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
  std::mt19937_64 rng(cfg.seed);
  const std::size_t segment = std::size_t(std::llround(cfg.segment_seconds * codec.cfg.mel.sample_rate));
  std::vector<std::size_t> order(corpus.items.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const float inv_b = 1.0f / float(cfg.batch);
  const ForwardFlags flags{codec.cfg.global_on, want_ssl};

  TrainResult result;
  for (int step = 0; step < cfg.steps; ++step) {
    CurveRow row;
    row.step = step;
    row.lr = post ? cfg.post_lr : cosine_warmup_lr(step, cfg.steps, cfg.peak_lr, cfg.warmup_frac);
    std::vector<TrainCrop> batch;
    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(crop_item(corpus.items[order[cursor++]], segment, codec.cfg.mel.hop, rng));
    }
    try {
      if (vq && !codec.vq.initialized()) {
        std::vector<MatD> lat;
        Eigen::Index rows = 0;
        for (const auto& c : batch) {
          lat.push_back(content_latent(codec, c.in.content).value().cast<double>());
          rows += lat.back().rows();
        }
        MatD all(rows, codec.cfg.vq_dim);
        Eigen::Index r = 0;
        for (const auto& l : lat) {
          all.middleRows(r, l.rows()) = l;
          r += l.rows();
        }
        codec.vq = VqEma(codec.cfg.vq, cfg.seed);
        codec.vq.initialize(all);
      }

      codec.store.zero_grad();
      if (!post) {
        std::vector<std::pair<MatD, std::vector<int>>> vq_batch;
        for (const auto& c : batch) {
          Var<float> total;
          if (cfg.mode == TrainMode::TwoStageA) {
            ContentEncoding<float> enc = encode_content(codec, c.in.content);
            Var<float> feats = trim_rows(reconstruct_features_values(codec, enc.values), c.in.content.rows());
            Var<float> l = mse_loss(feats, Var<float>::constant(c.in.content));
            row.l_ssl += double(l.item()) * inv_b;
            total = l;
            if (enc.commitment_loss) total = add(total, *enc.commitment_loss);
            if (vq) vq_batch.emplace_back(enc.latent.value().cast<double>(),
                                          std::vector<int>(enc.tokens.begin(), enc.tokens.end()));
          } else {
            ForwardResult<float> r = full_forward(codec, c.in, flags);
            std::optional<Var<float>> feats;
            if (r.features) feats = trim_rows(*r.features, c.in.content.rows());
            MainLoss<float> l = loss_main(r.mel, c.mel, feats ? &*feats : nullptr, feats ? &c.in.content : nullptr,
                                          cfg.alpha);
            row.l_mel += l.mel * inv_b;
            row.l_ssl += l.ssl * inv_b;
            total = l.total;
            if (r.commitment_loss && content_trains) total = add(total, *r.commitment_loss);
            if (vq && content_trains) vq_batch.emplace_back(r.latent.value().cast<double>(), r.vq_indices);
          }
          check_loss(double(total.item()), "loss", step);
          backward(scale(total, inv_b));
        }
        if (cfg.grad_clip > 0) clip_grad_norm(codec.store, cfg.grad_clip);
        opt.step(codec.store, row.lr);
        for (const auto& [x, idx] : vq_batch) codec.vq.update(x, idx);
      } else {
        std::vector<Var<float>> fakes;
        for (const auto& c : batch) {
          ForwardResult<float> r = full_forward(codec, c.in, ForwardFlags{codec.cfg.global_on, false});
          fakes.push_back(r.mel);
        }
        // discriminator step on detached fakes
        disc->store.set_trainable("", true);
        disc->store.zero_grad();
        for (std::size_t i = 0; i < batch.size(); ++i) {
          Var<float> ld = disc_loss(fakes[i], Var<float>::constant(batch[i].mel), *disc);
          row.l_disc += double(ld.item()) * inv_b;
          check_loss(double(ld.item()), "discriminator loss", step);
          backward(scale(ld, inv_b));
        }
        if (cfg.grad_clip > 0) clip_grad_norm(disc->store, cfg.grad_clip);
        dopt.step(disc->store, cfg.post_lr);
        // generator step against the updated, frozen discriminator
        disc->store.set_trainable("", false);
        for (std::size_t i = 0; i < batch.size(); ++i) {
          Var<float> real = Var<float>::constant(batch[i].mel);
          auto [adv, fm] = generator_losses(fakes[i], real, *disc);
          Var<float> lmel = l1_loss(fakes[i], real);
          row.l_mel += double(lmel.item()) * inv_b;
          row.l_adv += double(adv.item()) * inv_b;
          row.l_fm += double(fm.item()) * inv_b;
          Var<float> total = add(lmel, add(scale(adv, float(cfg.beta)), scale(fm, float(cfg.gamma))));
          check_loss(double(total.item()), "generator loss", step);
          backward(scale(total, inv_b));
        }
        disc->store.set_trainable("", true);
        if (cfg.grad_clip > 0) clip_grad_norm(codec.store, cfg.grad_clip);
        opt.step(codec.store, row.lr);
      }
    } catch (const TrainingDivergence&) {
      throw;
    } catch (const NumericError& e) {
      throw TrainingDivergence("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    row.total = row.l_mel + cfg.alpha * row.l_ssl + cfg.beta * row.l_adv + cfg.gamma * row.l_fm;
    result.curve.push_back(row);
    if (on_step) on_step(row);
  }
  codec.store.zero_grad();
  if (disc) disc->store.zero_grad();
  return result;
}

MainLoss<float> evaluate_main_loss(const Codec<float>& codec, const PreparedCorpus& corpus, double alpha) {
  if (corpus.items.empty()) throw DataError("evaluation corpus is empty");
  MainLoss<float> acc;
  const double n = double(corpus.items.size());
  for (const auto& it : corpus.items) {
    CodecInputs in = item_inputs(it);
    ForwardResult<float> r = full_forward(codec, in, ForwardFlags{codec.cfg.global_on, codec.cfg.ssl_loss_on});
    std::optional<Var<float>> feats;
    if (r.features) feats = trim_rows(*r.features, in.content.rows());
    MainLoss<float> l = loss_main(r.mel, it.mel, feats ? &*feats : nullptr, feats ? &in.content : nullptr, alpha);
    acc.mel += l.mel / n;
    acc.ssl += l.ssl / n;
  }
  acc.total = Var<float>::constant(MatF::Constant(1, 1, float(acc.mel + alpha * acc.ssl)));
  return acc;
}

#define DISCO_INSTANTIATE_TRAINING(S)                                                                       \
  template MainLoss<S> loss_main(const Var<S>&, const Mat<S>&, const Var<S>*, const Mat<S>*, double);       \
  template Discriminator<S> make_discriminator(int, int, int, int, std::uint64_t);                          \
  template DiscOutput<S> discriminate(const Discriminator<S>&, const Var<S>&);                              \
  template GanLosses<S> gan_losses(const Var<S>&, const Mat<S>&, const Discriminator<S>&);                  \
  template class AdamW<S>;                                                                                  \
  template double clip_grad_norm(ParamStore<S>&, double);

DISCO_INSTANTIATE_TRAINING(float)
DISCO_INSTANTIATE_TRAINING(double)

#undef DISCO_INSTANTIATE_TRAINING

}  // namespace disco
