#include "disco/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace disco {

Audio synth_toy_utterance(const ToySpeaker& speaker, double seconds, int sample_rate, std::uint64_t seed) {
  if (!(seconds > 0.0) || sample_rate <= 0) throw std::invalid_argument("synth_toy_utterance: bad length or rate");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = static_cast<std::size_t>(std::llround(seconds * sample_rate));

  // Pitch: piecewise-linear glides in log F0, knots every 0.25-0.6 s.
  std::vector<double> knot_t{0.0}, knot_v{0.4 * (u(rng) - 0.5)};
  while (knot_t.back() < seconds) {
    knot_t.push_back(knot_t.back() + 0.25 + 0.35 * u(rng));
    knot_v.push_back(0.5 * (u(rng) - 0.5));  // +-0.25 in natural log, about +-0.36 octave
  }
  // Envelope: syllables of 0.15-0.4 s separated by pauses of 0-0.12 s.
  std::vector<double> syl_start, syl_end;
  for (double t = 0.02 * u(rng); t < seconds;) {
    const double len = 0.15 + 0.25 * u(rng);
    syl_start.push_back(t);
    syl_end.push_back(std::min(t + len, seconds));
    t += len + 0.12 * u(rng);
  }
  const double am_rate = 3.0 + 3.0 * u(rng);

  const int max_h = static_cast<int>(std::floor(0.45 * sample_rate / (speaker.base_f0 * 0.7)));
  std::vector<double> amp(static_cast<std::size_t>(max_h) + 1);
  double norm = 0.0;
  for (int k = 1; k <= max_h; ++k) {
    amp[static_cast<std::size_t>(k)] = std::pow(double(k), -speaker.tilt);
    norm += amp[static_cast<std::size_t>(k)];
  }

  Audio a;
  a.sample_rate = sample_rate;
  a.samples.resize(n);
  double phase = 0.0;
  std::size_t knot = 0, syl = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = double(i) / sample_rate;
    while (knot + 2 < knot_t.size() && t >= knot_t[knot + 1]) ++knot;
    const double frac = std::clamp((t - knot_t[knot]) / (knot_t[knot + 1] - knot_t[knot]), 0.0, 1.0);
    const double f0 = speaker.base_f0 * std::exp(knot_v[knot] + frac * (knot_v[knot + 1] - knot_v[knot]));
    phase += 2.0 * std::numbers::pi * f0 / sample_rate;
    if (phase > 2.0 * std::numbers::pi * 1e6) phase = std::fmod(phase, 2.0 * std::numbers::pi);

    while (syl < syl_start.size() && t >= syl_end[syl]) ++syl;
    double env = 0.0;
    if (syl < syl_start.size() && t >= syl_start[syl]) {
      const double pos = (t - syl_start[syl]) / (syl_end[syl] - syl_start[syl]);
      env = std::sin(std::numbers::pi * pos);
      env *= 0.75 + 0.25 * std::sin(2.0 * std::numbers::pi * am_rate * t);
    }
    double s = 0.0;
    const int harmonics = std::min(max_h, static_cast<int>(0.45 * sample_rate / f0));
    for (int k = 1; k <= harmonics; ++k) s += amp[static_cast<std::size_t>(k)] * std::sin(k * phase);
    a.samples[i] = static_cast<float>(0.5 * env * s / norm * 2.0);
  }
  float peak = 0.0f;
  for (float v : a.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.0f)
    for (float& v : a.samples) v *= 0.5f / peak;
  return a;
}

std::vector<ToyUtterance> make_toy_corpus(const ToyCorpusConfig& cfg) {
  if (cfg.speakers.empty() || cfg.utterances_per_speaker < 1)
    throw std::invalid_argument("make_toy_corpus: need at least one speaker and one utterance");
  std::vector<ToyUtterance> out;
  for (std::size_t s = 0; s < cfg.speakers.size(); ++s)
    for (int u = 0; u < cfg.utterances_per_speaker; ++u) {
      ToyUtterance t;
      t.speaker = static_cast<int>(s);
      t.name = "spk" + std::to_string(s) + "_utt" + (u < 10 ? "0" : "") + std::to_string(u);
      const std::uint64_t seed = cfg.seed * 1000003ULL + s * 1009ULL + static_cast<std::uint64_t>(u);
      t.audio = synth_toy_utterance(cfg.speakers[s], cfg.seconds, cfg.sample_rate, seed);
      out.push_back(std::move(t));
    }
  return out;
}

}  // namespace disco
