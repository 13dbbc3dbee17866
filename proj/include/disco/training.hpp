#pragma once

#include "disco/audio.hpp"
#include "disco/codec.hpp"
#include "disco/features.hpp"
#include "disco/io.hpp"
#include "disco/nn.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace disco {

enum class TrainMode { Main, Post, TwoStageA, TwoStageB };

struct TrainConfig {
  double alpha = 1.0;          // weight of the feature reconstruction loss
  double beta = 1.0 / 30.0;    // adversarial loss weight (post-training)
  double gamma = 1.0 / 3.0;    // feature matching loss weight (post-training)
  double peak_lr = 2e-4;
  double warmup_frac = 0.10;
  double post_lr = 4e-5;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double weight_decay = 1e-4;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;      // global norm; <= 0 disables
  int steps = 2000;
  int batch = 1;
  double segment_seconds = 5.76;
  TrainMode mode = TrainMode::Main;
  std::uint64_t seed = 0;
  int disc_bands = 5;
  int disc_layers = 5;
  int disc_channels = 64;

  void validate() const;
  static TrainConfig paper();
  static TrainConfig desk();
};

const char* to_string(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

/// Raised when a loss or gradient stops being finite.
class TrainingDivergence : public NumericError {
 public:
  using NumericError::NumericError;
};

template <typename S>
struct MainLoss {
  Var<S> total;
  double mel = 0.0;
  double ssl = 0.0;
};

/// L_mel = mean |mel_hat - mel_ref|, L_ssl = mean (feat_hat - feat_ref)^2,
/// total = L_mel + alpha * L_ssl. Without feature outputs L_ssl is zero.
template <typename S>
MainLoss<S> loss_main(const Var<S>& mel_hat, const Mat<S>& mel_ref, const Var<S>* feat_hat, const Mat<S>* feat_ref,
                      double alpha);

template <typename S>
struct Conv2dLayer {
  Var<S> weight;  // [3*3*Cin, Cout]
  Var<S> bias;
};

/// One small 2-D conv stack per mel band.
template <typename S>
struct Discriminator {
  ParamStore<S> store;
  std::vector<std::pair<int, int>> bands;  // [start, count) over mel bins
  std::vector<std::vector<Conv2dLayer<S>>> nets;
};

template <typename S>
Discriminator<S> make_discriminator(int n_mels, int bands, int layers, int channels, std::uint64_t seed);

template <typename S>
struct DiscOutput {
  std::vector<Var<S>> scores;                 // per band, [T*bins, 1]
  std::vector<std::vector<Var<S>>> features;  // per band, per hidden layer
};

template <typename S>
DiscOutput<S> discriminate(const Discriminator<S>& d, const Var<S>& mel);

template <typename S>
struct GanLosses {
  Var<S> adv;   // mean over bands of mean (D(fake) - 1)^2
  Var<S> fm;    // mean over bands and layers of mean |f(real) - f(fake)|
  Var<S> disc;  // mean over bands of mean (D(real) - 1)^2 + mean D(sg(fake))^2
};

/// Least-squares GAN losses. The discriminator loss sees a detached fake.
template <typename S>
GanLosses<S> gan_losses(const Var<S>& mel_hat, const Mat<S>& mel_ref, const Discriminator<S>& d);

/// Decoupled weight decay Adam with bias correction.
template <typename S>
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.99, double eps = 1e-8, double weight_decay = 1e-4)
      : b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

  /// Updates every trainable parameter that received a gradient. A non-finite
  /// gradient anywhere rejects the whole step with NumericError.
  void step(ParamStore<S>& store, double lr);
  std::int64_t steps() const { return t_; }

 private:
  double b1_, b2_, eps_, wd_;
  std::int64_t t_ = 0;
  std::vector<Mat<S>> m_, v_;
};

/// Scales gradients so their global L2 norm is at most max_norm; returns the norm before scaling.
template <typename S>
double clip_grad_norm(ParamStore<S>& store, double max_norm);

/// Linear warmup from 0 to peak over warmup_frac * total steps, then cosine to 0.
double cosine_warmup_lr(std::int64_t step, std::int64_t total, double peak, double warmup_frac);

struct TrainItem {
  std::string name;
  int speaker = -1;
  std::size_t samples = 0;
  MatF content;  // normalized content features
  MatF global;
  MatF mel;
};

struct PreparedCorpus {
  std::vector<TrainItem> items;
  NormStats stats;
  SslConfig ssl;
};

struct LabeledAudio {
  std::string name;
  int speaker = -1;
  Audio audio;
};

/// Extracts features and mel targets; fits normalization statistics unless given.
PreparedCorpus prepare_corpus(const std::vector<LabeledAudio>& audio, const CodecConfig& cfg, const SslConfig& ssl,
                              const NormStats* stats = nullptr);
TrainItem prepare_item(const LabeledAudio& audio, const CodecConfig& cfg, const SslConfig& ssl,
                       const NormStats& stats);
CodecInputs item_inputs(const TrainItem& item);

struct TrainCrop {
  CodecInputs in;
  MatF mel;
};

/// Random segment of `segment` samples starting on a multiple of 7680 samples,
/// where the 50 Hz feature grid and the mel grid coincide. Items no longer than
/// the segment are returned whole.
TrainCrop crop_item(const TrainItem& item, std::size_t segment, int mel_hop, std::mt19937_64& rng);

struct CurveRow {
  int step = 0;
  double l_mel = 0, l_ssl = 0, l_adv = 0, l_fm = 0, l_disc = 0, lr = 0;
  double total = 0;
};

std::string curve_csv(const std::vector<CurveRow>& rows);

struct TrainResult {
  std::vector<CurveRow> curve;
};

/// Runs cfg.steps optimisation steps in cfg.mode. Post mode needs `disc`.
TrainResult train_loop(Codec<float>& codec, const PreparedCorpus& corpus, const TrainConfig& cfg,
                       Discriminator<float>* disc = nullptr,
                       const std::function<void(const CurveRow&)>& on_step = {});

/// Mean main-phase loss over whole items (no cropping), without gradients.
MainLoss<float> evaluate_main_loss(const Codec<float>& codec, const PreparedCorpus& corpus, double alpha);

/// Parameter-name prefixes that each mode leaves trainable.
std::vector<std::string> trainable_prefixes(TrainMode mode);

}  // namespace disco
