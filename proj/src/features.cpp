#include "disco/features.hpp"

#include "disco/io.hpp"
#include "disco/pitch.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace disco {

void MelConfig::validate() const {
  if (sample_rate <= 0) throw std::invalid_argument("mel: sample_rate must be positive");
  if (n_fft < 2 || hop < 1 || hop > n_fft) throw std::invalid_argument("mel: need 1 <= hop <= n_fft");
  if (n_mels < 1) throw std::invalid_argument("mel: n_mels must be >= 1");
  if (!(fmin >= 0.0 && fmin < upper() && upper() <= sample_rate / 2.0))
    throw std::invalid_argument("mel: need 0 <= fmin < fmax <= sample_rate / 2");
  if (!(log_floor > 0.0)) throw std::invalid_argument("mel: log floor must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

Eigen::VectorXd mel_edges(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.upper());
  Eigen::VectorXd edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));
  return edges;
}

std::vector<double> hann(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

// Index into [0, n) with mirror reflection at both ends (edge sample not repeated).
long reflect(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

MatD mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const int bins = cfg.n_fft / 2 + 1;
  const Eigen::VectorXd e = mel_edges(cfg);
  MatD fb = MatD::Zero(cfg.n_mels, bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = e[m], mid = e[m + 1], hi = e[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = double(k) * cfg.sample_rate / cfg.n_fft;
      if (f > lo && f < hi) fb(m, k) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return fb;
}

Eigen::VectorXd mel_center_frequencies(const MelConfig& cfg) {
  return mel_edges(cfg).segment(1, cfg.n_mels);
}

ComplexMat stft(std::span<const float> x, int n_fft, int hop) {
  if (x.empty()) throw std::invalid_argument("stft: empty input");
  const long n = static_cast<long>(x.size());
  const Eigen::Index frames = (n + hop - 1) / hop;
  const int bins = n_fft / 2 + 1;
  const auto w = hann(n_fft);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(static_cast<std::size_t>(n_fft));
  std::vector<std::complex<double>> out;
  ComplexMat s(frames, bins);
  for (Eigen::Index t = 0; t < frames; ++t) {
    const long start = long(t) * hop - n_fft / 2;
    for (int i = 0; i < n_fft; ++i)
      buf[static_cast<std::size_t>(i)] =
          w[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(reflect(start + i, n))];
    fft.fwd(out, buf);
    for (int k = 0; k < bins; ++k) s(t, k) = out[static_cast<std::size_t>(k)];
  }
  return s;
}

std::vector<float> istft(const ComplexMat& spec, int n_fft, int hop, std::size_t length) {
  const auto w = hann(n_fft);
  const long total = static_cast<long>(spec.rows()) * hop + n_fft;
  std::vector<double> acc(static_cast<std::size_t>(total), 0.0), norm(static_cast<std::size_t>(total), 0.0);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> half(static_cast<std::size_t>(spec.cols()));
  std::vector<double> frame;
  const long offset = n_fft / 2;  // acc index 0 is sample -n_fft/2
  for (Eigen::Index t = 0; t < spec.rows(); ++t) {
    for (Eigen::Index k = 0; k < spec.cols(); ++k) half[static_cast<std::size_t>(k)] = spec(t, k);
    fft.inv(frame, half, n_fft);
    const long start = long(t) * hop;
    for (int i = 0; i < n_fft; ++i) {
      acc[static_cast<std::size_t>(start + i)] += frame[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(i)];
      norm[static_cast<std::size_t>(start + i)] += w[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(i)];
    }
  }
  std::vector<float> y(length, 0.0f);
  for (std::size_t i = 0; i < length; ++i) {
    const auto j = static_cast<std::size_t>(long(i) + offset);
    if (j < acc.size() && norm[j] > 1e-8) y[i] = static_cast<float>(acc[j] / norm[j]);
  }
  return y;
}

MatD mel_spectrogram(std::span<const float> samples, const MelConfig& cfg) {
  cfg.validate();
  if (samples.size() < static_cast<std::size_t>(cfg.n_fft))
    throw std::invalid_argument("mel_spectrogram: input of " + std::to_string(samples.size()) +
                                " samples is shorter than n_fft = " + std::to_string(cfg.n_fft));
  const ComplexMat s = stft(samples, cfg.n_fft, cfg.hop);
  const MatD mag = s.cwiseAbs();
  MatD mel = mag * mel_filterbank(cfg).transpose();
  return mel.cwiseMax(cfg.log_floor).array().log().matrix();
}

std::vector<float> griffin_lim_invert(const MatD& log_mel, const MelConfig& cfg, int iters, std::uint64_t seed,
                                      double momentum) {
  cfg.validate();
  if (log_mel.cols() != cfg.n_mels) throw ShapeError("griffin_lim_invert: mel has wrong number of bins");
  if (iters < 0) throw std::invalid_argument("griffin_lim_invert: iters must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("griffin_lim_invert: momentum must lie in [0, 1)");
  const MatD fb = mel_filterbank(cfg);
  const MatD pinv = fb.completeOrthogonalDecomposition().pseudoInverse();  // [bins, n_mels]
  const MatD mag = (log_mel.array().exp().matrix() * pinv.transpose()).cwiseMax(0.0);
  const std::size_t length = static_cast<std::size_t>(log_mel.rows()) * static_cast<std::size_t>(cfg.hop);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-std::numbers::pi, std::numbers::pi);
  ComplexMat spec(mag.rows(), mag.cols());
  for (Eigen::Index i = 0; i < spec.size(); ++i) spec.data()[i] = std::polar(mag.data()[i], u(rng));

  // Fast Griffin-Lim: extrapolate the consistent spectrum before re-imposing magnitudes.
  const double beta = momentum / (1.0 + momentum);
  ComplexMat prev = ComplexMat::Zero(spec.rows(), spec.cols());
  std::vector<float> y = istft(spec, cfg.n_fft, cfg.hop, length);
  for (int it = 0; it < iters; ++it) {
    const ComplexMat re = stft(y, cfg.n_fft, cfg.hop);
    for (Eigen::Index i = 0; i < spec.size(); ++i) {
      const std::complex<double> d = re.data()[i] - beta * prev.data()[i];
      const double a = std::abs(d);
      spec.data()[i] = a > 1e-12 ? d * (mag.data()[i] / a) : std::complex<double>(mag.data()[i], 0.0);
    }
    prev = re;
    y = istft(spec, cfg.n_fft, cfg.hop, length);
  }
  return y;
}

double spectral_tilt(const MatD& log_mel, const MelConfig& cfg) {
  if (log_mel.cols() != cfg.n_mels) throw ShapeError("spectral_tilt: mel has wrong number of bins");
  const Eigen::VectorXd c = mel_center_frequencies(cfg);
  std::vector<Eigen::Index> bands;
  for (Eigen::Index m = 0; m < c.size(); ++m)
    if (c[m] >= 300.0 && c[m] <= 8000.0) bands.push_back(m);
  if (bands.size() < 2) throw std::invalid_argument("spectral_tilt: too few bands in 300 Hz - 8 kHz");
  Eigen::VectorXd lf(static_cast<Eigen::Index>(bands.size()));
  for (std::size_t i = 0; i < bands.size(); ++i) lf[static_cast<Eigen::Index>(i)] = std::log(c[bands[i]]);
  const double lf_mean = lf.mean();
  const Eigen::VectorXd lc = lf.array() - lf_mean;
  const double var = lc.squaredNorm();
  const double active = std::log(cfg.log_floor) + std::log(10.0);
  double total = 0.0;
  int n = 0;
  for (Eigen::Index t = 0; t < log_mel.rows(); ++t) {
    if (log_mel.row(t).maxCoeff() < active) continue;
    double cov = 0.0;
    for (std::size_t i = 0; i < bands.size(); ++i) cov += lc[static_cast<Eigen::Index>(i)] * log_mel(t, bands[i]);
    total += cov / var;
    ++n;
  }
  return n > 0 ? total / n : 0.0;
}

namespace {

MelConfig ssl_mel(int sample_rate, const SslConfig& cfg) {
  MelConfig m;
  m.sample_rate = sample_rate;
  m.n_fft = cfg.n_fft;
  m.hop = static_cast<int>(std::lround(sample_rate / kFeatureRate));
  m.n_mels = cfg.n_mels;
  return m;
}

struct Analysis {
  MatD log_mel;        // [T, n_mels], zero-padded to n_fft when shorter
  double tilt = 0.0;
  double mean_log_f0 = 0.0;
};

Analysis analyse(std::span<const float> samples, int sample_rate, const SslConfig& cfg, bool need_constants) {
  if (samples.empty()) throw std::invalid_argument("synth_ssl_features: empty audio");
  const MelConfig m = ssl_mel(sample_rate, cfg);
  Analysis a;
  std::vector<float> padded;
  std::span<const float> x = samples;
  if (samples.size() < static_cast<std::size_t>(m.n_fft)) {
    padded.assign(samples.begin(), samples.end());
    padded.resize(static_cast<std::size_t>(m.n_fft), 0.0f);
    x = padded;
  }
  a.log_mel = mel_spectrogram(x, m).topRows(m.frames_for(samples.size()));
  if (need_constants) {
    a.tilt = spectral_tilt(a.log_mel, m);
    PitchConfig pc;
    pc.frame_hop = m.hop;
    const PitchTrack p = f0_extract(samples, sample_rate, pc);
    double s = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < p.f0.size(); ++i)
      if (p.voiced[i]) {
        s += std::log(p.f0[i]);
        ++n;
      }
    a.mean_log_f0 = n > 0 ? s / n : std::log(150.0);
  }
  return a;
}

// Per-frame least-squares slope against log frequency, removed around the band mean.
MatD remove_frame_tilt(const MatD& log_mel, const MelConfig& m) {
  Eigen::RowVectorXd lf = mel_center_frequencies(m).array().log().matrix().transpose();
  lf.array() -= lf.mean();
  const double var = lf.squaredNorm();
  MatD out = log_mel;
  for (Eigen::Index t = 0; t < out.rows(); ++t) {
    const double slope = out.row(t).dot(lf) / var;
    out.row(t) -= slope * lf;
  }
  return out;
}

MatF project_layer(const Analysis& a, int layer, const SslConfig& cfg, int sample_rate) {
  const bool shallow = layer < cfg.shallow_below;
  const int in = cfg.n_mels + (shallow ? 2 : 0);
  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(layer) * 7919ULL + 1ULL);
  std::normal_distribution<double> g(0.0, 1.0);
  MatD w(in, cfg.dims);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = g(rng);
  w.topRows(cfg.n_mels) /= std::sqrt(double(cfg.n_mels));
  Eigen::RowVectorXd bias(cfg.dims);
  for (Eigen::Index i = 0; i < bias.size(); ++i) bias[i] = 0.1 * g(rng);

  const MelConfig m = ssl_mel(sample_rate, cfg);
  MatD base = shallow ? a.log_mel : remove_frame_tilt(a.log_mel, m);
  MatD z = (base.array() + 4.0) / 3.0;
  MatD h = z * w.topRows(cfg.n_mels);
  if (shallow) {
    Eigen::RowVectorXd constants = a.tilt * w.row(cfg.n_mels) + 3.0 * (a.mean_log_f0 - std::log(150.0)) * w.row(cfg.n_mels + 1);
    h.rowwise() += constants;
  }
  h.rowwise() += bias;
  return h.array().tanh().cast<float>().matrix();
}

}  // namespace

MatF synth_ssl_features(std::span<const float> samples, int sample_rate, int layer, const SslConfig& cfg) {
  const Analysis a = analyse(samples, sample_rate, cfg, layer < cfg.shallow_below);
  return project_layer(a, layer, cfg, sample_rate);
}

std::map<int, MatF> synth_ssl_layers(std::span<const float> samples, int sample_rate, std::span<const int> layers,
                                     const SslConfig& cfg) {
  bool any_shallow = false;
  for (int l : layers) any_shallow = any_shallow || l < cfg.shallow_below;
  const Analysis a = analyse(samples, sample_rate, cfg, any_shallow);
  std::map<int, MatF> out;
  for (int l : layers) out[l] = project_layer(a, l, cfg, sample_rate);
  return out;
}

FeatureFile import_features(const std::filesystem::path& path, int expected_dims) {
  FeatureFile f = read_feature_file(path);
  if (expected_dims > 0 && f.values.cols() != expected_dims)
    throw DataError(path.string() + ": feature dim " + std::to_string(f.values.cols()) + " != expected " +
                    std::to_string(expected_dims));
  return f;
}

NormStats compute_norm_stats(const std::vector<MatF>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("compute_norm_stats: empty corpus");
  const Eigen::Index d = corpus.front().cols();
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(d);
  double n = 0;
  for (const auto& x : corpus) {
    if (x.cols() != d) throw ShapeError("compute_norm_stats: inconsistent feature dims");
    sum += x.cast<double>().colwise().sum();
    n += double(x.rows());
  }
  if (n < 2) throw std::invalid_argument("compute_norm_stats: need at least 2 frames");
  NormStats s;
  s.mean = sum / n;
  Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(d);
  for (const auto& x : corpus) sq += (x.cast<double>().rowwise() - s.mean).array().square().matrix().colwise().sum();
  s.std = (sq / n).array().sqrt().cwiseMax(1e-5).matrix();
  return s;
}

MatF normalize(const MatF& x, const NormStats& s) {
  if (x.cols() != s.mean.size()) throw ShapeError("normalize: feature dim does not match stats");
  return ((x.cast<double>().rowwise() - s.mean).array().rowwise() / s.std.array()).cast<float>().matrix();
}

MatF denormalize(const MatF& x, const NormStats& s) {
  if (x.cols() != s.mean.size()) throw ShapeError("denormalize: feature dim does not match stats");
  return ((x.cast<double>().array().rowwise() * s.std.array()).matrix().rowwise() + s.mean).cast<float>();
}

MatF average_layers(const std::vector<MatF>& layers) {
  if (layers.empty()) throw std::invalid_argument("average_layers: no layers");
  MatD acc = layers.front().cast<double>();
  for (std::size_t i = 1; i < layers.size(); ++i) {
    if (layers[i].rows() != acc.rows() || layers[i].cols() != acc.cols())
      throw ShapeError("average_layers: layers differ in shape");
    acc += layers[i].cast<double>();
  }
  return (acc / double(layers.size())).cast<float>();
}

}  // namespace disco
