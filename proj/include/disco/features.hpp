#pragma once

#include "disco/formats.hpp"
#include "disco/tensor.hpp"

#include <complex>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

namespace disco {

struct MelConfig {
  int sample_rate = 24000;
  int n_fft = 1024;
  int hop = 256;
  int n_mels = 100;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 means sample_rate / 2
  double log_floor = 1e-5;

  double upper() const { return fmax > 0.0 ? fmax : sample_rate / 2.0; }
  double frame_rate() const { return double(sample_rate) / hop; }
  Eigen::Index frames_for(std::size_t samples) const { return static_cast<Eigen::Index>((samples + hop - 1) / hop); }
  void validate() const;
};

using ComplexMat = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filters on the HTK mel scale, unit peak. [n_mels, n_fft/2 + 1]
MatD mel_filterbank(const MelConfig& cfg);
Eigen::VectorXd mel_center_frequencies(const MelConfig& cfg);

/// Hann-windowed STFT with frames centred on t * hop (reflect padding),
/// ceil(len / hop) frames. [frames, n_fft/2 + 1]
ComplexMat stft(std::span<const float> samples, int n_fft, int hop);
/// Weighted overlap-add inverse of `stft`, trimmed to `length` samples.
std::vector<float> istft(const ComplexMat& spec, int n_fft, int hop, std::size_t length);

/// log(max(filterbank * |STFT|, floor)), [frames, n_mels].
MatD mel_spectrogram(std::span<const float> samples, const MelConfig& cfg);

/// Pseudo-inverse of the filterbank for magnitudes, then Griffin-Lim phase
/// recovery (momentum 0 is the classic algorithm). Output length is frames * hop.
std::vector<float> griffin_lim_invert(const MatD& log_mel, const MelConfig& cfg, int iters = 32,
                                      std::uint64_t seed = 0, double momentum = 0.0);

/// Mean over active frames of the least-squares slope of log-mel against log
/// centre frequency, using bands between 300 Hz and 8 kHz.
double spectral_tilt(const MatD& log_mel, const MelConfig& cfg);

// Synthetic stand-in for a self-supervised speech encoder.
inline constexpr double kFeatureRate = 50.0;

struct SslConfig {
  int dims = 768;
  int n_mels = 80;
  int n_fft = 1024;
  std::uint64_t seed = 0;
  int shallow_below = 4;  // layers under this id carry utterance constants
};

/// Layers below `shallow_below` see the raw log-mel plus per-utterance tilt
/// and mean log F0; deeper layers see each frame's log-mel with its own
/// spectral slope removed. Pure in (samples, layer, seed).
MatF synth_ssl_features(std::span<const float> samples, int sample_rate, int layer, const SslConfig& cfg = {});
std::map<int, MatF> synth_ssl_layers(std::span<const float> samples, int sample_rate, std::span<const int> layers,
                                     const SslConfig& cfg = {});

/// Reads a feature file and checks its dimensionality when `expected_dims` > 0.
FeatureFile import_features(const std::filesystem::path& path, int expected_dims = 0);

struct NormStats {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd std;
};

/// Population mean and std over every frame of the corpus; std floored at 1e-5.
NormStats compute_norm_stats(const std::vector<MatF>& corpus);
MatF normalize(const MatF& x, const NormStats& stats);
MatF denormalize(const MatF& x, const NormStats& stats);

MatF average_layers(const std::vector<MatF>& layers);

}  // namespace disco
