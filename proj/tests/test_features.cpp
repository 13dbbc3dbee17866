#include <doctest.h>

#include "disco/audio.hpp"
#include "disco/corpus.hpp"
#include "disco/features.hpp"
#include "disco/formats.hpp"
#include "disco/io.hpp"
#include "oracles.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace disco;

namespace {

std::vector<float> tone(double hz, double seconds, int sr = 24000, double amp = 0.5) {
  std::vector<float> x(static_cast<std::size_t>(seconds * sr));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * i / sr));
  return x;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "disco_test_features";
  std::filesystem::create_directories(dir);
  return dir / name;
}

double mel_l1(const MatD& a, const MatD& b) { return (a - b).cwiseAbs().mean(); }

}  // namespace

TEST_CASE("wav read and write") {
  Audio silence;
  silence.samples.assign(24000, 0.0f);
  Audio back = decode_wav(encode_wav(silence));
  CHECK(back.samples.size() == 24000);
  CHECK(back.sample_rate == 24000);
  CHECK(std::all_of(back.samples.begin(), back.samples.end(), [](float v) { return v == 0.0f; }));

  Audio sine;
  sine.samples = tone(440.0, 1.0, 24000, 1.0);
  Audio s16 = decode_wav(encode_wav(sine, WavEncoding::Pcm16));
  float peak = 0;
  for (float v : s16.samples) peak = std::max(peak, std::abs(v));
  CHECK(peak >= 0.9996f);
  CHECK(peak <= 1.0f);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Audio noise;
  for (int i = 0; i < 5000; ++i) noise.samples.push_back(u(rng));
  Audio n16 = decode_wav(encode_wav(noise, WavEncoding::Pcm16));
  for (std::size_t i = 0; i < noise.samples.size(); ++i) CHECK(std::abs(n16.samples[i] - noise.samples[i]) <= 1.0f / 32768.0f);
  Audio nf = decode_wav(encode_wav(noise, WavEncoding::Float32));
  CHECK(nf.samples == noise.samples);
  CHECK(encode_wav(nf, WavEncoding::Float32) == encode_wav(noise, WavEncoding::Float32));
  Audio signed_zero;
  signed_zero.samples = {-0.0f, 0.0f, -0.0f};
  const std::string zb = encode_wav(signed_zero, WavEncoding::Float32);
  CHECK(encode_wav(decode_wav(zb), WavEncoding::Float32) == zb);

  auto path = temp_path("noise.wav");
  save_wav(path, noise, WavEncoding::Float32);
  CHECK(load_wav(path).samples == noise.samples);
  CHECK_THROWS_AS(save_wav(path, noise, WavEncoding::Float32, /*force=*/false), OutputExistsError);

  std::string bytes = encode_wav(noise);
  CHECK_THROWS_AS(decode_wav(bytes.substr(0, bytes.size() - 3)), DataError);
  CHECK_THROWS_AS(decode_wav("RIFX0000WAVE"), DataError);
  std::string adpcm = bytes;
  adpcm[20] = 2;  // format tag
  CHECK_THROWS_AS(decode_wav(adpcm), DataError);
}

TEST_CASE("stereo input is downmixed") {
  ByteWriter w;
  w.bytes("RIFF");
  w.u32(36 + 8);
  w.bytes("WAVEfmt ");
  w.u32(16);
  w.u16(1);
  w.u16(2);
  w.u32(16000);
  w.u32(16000 * 4);
  w.u16(4);
  w.u16(16);
  w.bytes("data");
  w.u32(8);
  for (std::int16_t v : {std::int16_t(16384), std::int16_t(0), std::int16_t(-16384), std::int16_t(-16384)})
    w.u16(static_cast<std::uint16_t>(v));
  Audio a = decode_wav(w.str());
  REQUIRE(a.samples.size() == 2);
  CHECK(a.samples[0] == 0.25f);
  CHECK(a.samples[1] == -0.5f);
  CHECK(a.sample_rate == 16000);
  CHECK(a.source_channels == 2);
}

TEST_CASE("mel spectrogram") {
  MelConfig cfg;
  CHECK(cfg.frame_rate() == 93.75);
  MatD fb = mel_filterbank(cfg);
  CHECK(fb.rows() == 100);
  CHECK(fb.cols() == 513);
  for (Eigen::Index m = 0; m < fb.rows(); ++m) CHECK(fb.row(m).sum() > 0.0);

  std::vector<float> silence(24000, 0.0f);
  MatD s = mel_spectrogram(silence, cfg);
  CHECK(s.rows() == (24000 + 255) / 256);
  CHECK(s.isApproxToConstant(std::log(1e-5)));

  auto x = tone(1000.0, 1.0);
  MatD m = mel_spectrogram(x, cfg);
  // Oracle: the HTK triangle with the largest response at exactly 1 kHz.
  const double top = 2595.0 * std::log10(1.0 + 12000.0 / 700.0), f = 2595.0 * std::log10(1.0 + 1000.0 / 700.0);
  int expect = -1;
  double best = 0;
  for (int b = 0; b < 100; ++b) {
    const double lo = top * b / 101.0, mid = top * (b + 1) / 101.0, hi = top * (b + 2) / 101.0;
    const double r = f <= lo || f >= hi ? 0.0 : (f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid));
    if (r > best) {
      best = r;
      expect = b;
    }
  }
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    Eigen::Index arg;
    m.row(t).maxCoeff(&arg);
    CHECK(arg == expect);
  }

  std::vector<float> loud = x;
  for (float& v : loud) v *= 2.0f;
  MatD ml = mel_spectrogram(loud, cfg);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (m.data()[i] > std::log(1e-5) + 1.0) CHECK(ml.data()[i] - m.data()[i] == doctest::Approx(std::log(2.0)).epsilon(1e-9));

  CHECK_THROWS(mel_spectrogram(std::vector<float>(100, 0.0f), cfg));
}

TEST_CASE("stft and istft reconstruct") {
  std::mt19937_64 rng(2);
  std::normal_distribution<float> g(0.0f, 0.3f);
  std::vector<float> x(7000);
  for (float& v : x) v = g(rng);
  ComplexMat s = stft(x, 1024, 256);
  CHECK(s.rows() == (7000 + 255) / 256);
  auto y = istft(s, 1024, 256, x.size());
  double err = 0;
  for (std::size_t i = 0; i < x.size(); ++i) err = std::max(err, double(std::abs(x[i] - y[i])));
  CHECK(err < 1e-5);
}

TEST_CASE("griffin-lim inversion") {
  MelConfig cfg;
  auto x = tone(1000.0, 0.5);
  MatD m = mel_spectrogram(x, cfg);
  auto y = griffin_lim_invert(m, cfg, 32);
  CHECK(y.size() == static_cast<std::size_t>(m.rows() * 256));

  // Dominant FFT bin of the interior, against the tone's bin.
  ComplexMat sy = stft(y, 1024, 256);
  Eigen::RowVectorXd spec = sy.middleRows(5, sy.rows() - 10).cwiseAbs().colwise().sum();
  Eigen::Index peak;
  spec.maxCoeff(&peak);
  CHECK(std::abs(double(peak) - 1000.0 * 1024 / 24000.0) <= 1.0);

  std::vector<float> silence(12000, 0.0f);
  auto q = griffin_lim_invert(mel_spectrogram(silence, cfg), cfg, 32);
  double rms = 0;
  for (float v : q) rms += double(v) * v;
  CHECK(std::sqrt(rms / q.size()) < 1e-3);

  // Re-analysis error over a probe set never grows with more iterations.
  for (int p = 0; p < 10; ++p) {
    CAPTURE(p);
    Audio a = synth_toy_utterance({100.0 + 15.0 * p, 0.3 + 0.15 * p}, 0.6, 24000, static_cast<std::uint64_t>(p));
    MatD target = mel_spectrogram(a.samples, cfg);
    double prev = 1e300;
    for (int iters : {0, 4, 8, 16, 32}) {
      auto r = griffin_lim_invert(target, cfg, iters);
      r.resize(a.samples.size());
      const double e = mel_l1(mel_spectrogram(r, cfg), target);
      if (iters == 0) prev = e + 1e-12;
      CHECK(e <= prev);
      prev = e;
    }
    auto r0 = griffin_lim_invert(target, cfg, 0), r32 = griffin_lim_invert(target, cfg, 32);
    r0.resize(a.samples.size());
    r32.resize(a.samples.size());
    CHECK(mel_l1(mel_spectrogram(r32, cfg), target) < mel_l1(mel_spectrogram(r0, cfg), target));
  }
}

TEST_CASE("synthetic ssl features") {
  Audio a = synth_toy_utterance({120.0, 0.5}, 2.0, 24000, 3);
  MatF f1 = synth_ssl_features(a.samples, 24000, 6, {});
  MatF f2 = synth_ssl_features(a.samples, 24000, 6, {});
  CHECK(f1 == f2);
  CHECK(f1.cols() == 768);
  CHECK(std::abs(double(f1.rows()) - 100.0) <= 1.0);
  const std::vector<int> ids{1, 2, 6, 9};
  auto all = synth_ssl_layers(a.samples, 24000, ids, {});
  CHECK(all.at(6) == f1);
  CHECK(all.at(1) == synth_ssl_features(a.samples, 24000, 1, {}));
  CHECK_FALSE(all.at(6) == all.at(9));

  // Same content, different constant tilt: deep layers should barely notice.
  Audio b = synth_toy_utterance({120.0, 1.5}, 2.0, 24000, 3);
  auto mean_cos = [](const MatF& x, const MatF& y) {
    double c = 0;
    for (Eigen::Index t = 0; t < x.rows(); ++t)
      c += x.row(t).cast<double>().dot(y.row(t).cast<double>()) /
           (x.row(t).cast<double>().norm() * y.row(t).cast<double>().norm());
    return c / x.rows();
  };
  const double deep = mean_cos(synth_ssl_features(a.samples, 24000, 6), synth_ssl_features(b.samples, 24000, 6));
  const double shallow = mean_cos(synth_ssl_features(a.samples, 24000, 1), synth_ssl_features(b.samples, 24000, 1));
  CHECK(deep > shallow);

  SslConfig other;
  other.seed = 1;
  CHECK_FALSE(synth_ssl_features(a.samples, 24000, 6, other) == f1);
}

TEST_CASE("feature files") {
  std::mt19937_64 rng(4);
  FeatureFile f;
  f.values = oracle::random_matrix(100, 768, rng).cast<float>();
  auto path = temp_path("f.knft");
  write_feature_file(path, f, true);
  FeatureFile g = import_features(path, 768);
  CHECK(g.values == f.values);
  CHECK(g.rate_hz == 50.0);
  CHECK_THROWS_AS(import_features(path, 80), DataError);
  std::string bytes = encode_feature_file(f);
  CHECK_THROWS_AS(decode_feature_file(bytes.substr(0, bytes.size() - 10)), DataError);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_feature_file(bytes), DataError);
}

TEST_CASE("normalization statistics") {
  MatF a(1, 2), b(1, 2);
  a << 1, 1;
  b << 3, 3;
  NormStats s = compute_norm_stats({a, b});
  CHECK(s.mean.isApproxToConstant(2.0));
  CHECK(s.std.isApproxToConstant(1.0));

  std::mt19937_64 rng(5);
  std::vector<MatF> corpus;
  for (int i = 0; i < 4; ++i) {
    MatF x = (oracle::random_matrix(50 + i, 6, rng, 2.0).array() + 3.0).cast<float>();
    x.col(5).setConstant(7.0f);
    corpus.push_back(x);
  }
  NormStats st = compute_norm_stats(corpus);
  CHECK(st.std[5] == 1e-5);
  MatD stacked(0, 6);
  for (const auto& x : corpus) {
    MatD n = normalize(x, st).cast<double>();
    MatD next(stacked.rows() + n.rows(), 6);
    next << stacked, n;
    stacked = next;
    CHECK((denormalize(normalize(x, st), st) - x).cwiseAbs().maxCoeff() < 1e-5);
  }
  Eigen::RowVectorXd mu = stacked.colwise().mean();
  Eigen::RowVectorXd sd = ((stacked.rowwise() - mu).array().square().colwise().sum() / double(stacked.rows())).sqrt();
  CHECK(mu.cwiseAbs().maxCoeff() < 1e-6);
  CHECK((sd.head(5).array() - 1.0).abs().maxCoeff() < 1e-6);
  CHECK(stacked.col(5).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS(compute_norm_stats({}));
  CHECK_THROWS(compute_norm_stats({MatF::Zero(1, 3)}));
}

TEST_CASE("layer averaging") {
  std::mt19937_64 rng(6);
  MatF x = oracle::random_matrix(9, 4, rng).cast<float>();
  CHECK(average_layers({x}) == x);
  CHECK(average_layers({x, x, x}) == x);
  CHECK(average_layers({MatF::Zero(1, 1), MatF::Constant(1, 1, 2.0f)})(0, 0) == 1.0f);
  CHECK_THROWS_AS(average_layers({x, MatF::Zero(3, 4)}), ShapeError);
}

TEST_CASE("toy corpus") {
  ToyCorpusConfig cfg;
  cfg.utterances_per_speaker = 2;
  auto c = make_toy_corpus(cfg);
  REQUIRE(c.size() == 4);
  CHECK(c[0].audio.samples.size() == 138240);
  CHECK(make_toy_corpus(cfg)[3].audio.samples == c[3].audio.samples);
  MelConfig mel;
  const double t0 = spectral_tilt(mel_spectrogram(c[0].audio.samples, mel), mel);
  const double t1 = spectral_tilt(mel_spectrogram(c[2].audio.samples, mel), mel);
  MESSAGE("tilt speaker0 " << t0 << " speaker1 " << t1);
  CHECK(t0 > t1 + 0.3);
}
