#pragma once

#include "disco/audio.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace disco {

/// A constructed voice: harmonic amplitudes fall as k^-tilt around a base pitch.
struct ToySpeaker {
  double base_f0 = 120.0;
  double tilt = 0.5;
};

struct ToyCorpusConfig {
  std::vector<ToySpeaker> speakers{{150.0, 0.9}, {240.0, 1.9}};
  int utterances_per_speaker = 16;
  double seconds = 5.76;
  int sample_rate = 24000;
  std::uint64_t seed = 0;
};

struct ToyUtterance {
  std::string name;
  int speaker = 0;
  Audio audio;
};

/// One utterance: a harmonic tone whose pitch glides through random log-F0
/// sweeps around the speaker's base, under a syllable-rate amplitude
/// envelope with short pauses.
Audio synth_toy_utterance(const ToySpeaker& speaker, double seconds, int sample_rate, std::uint64_t seed);

std::vector<ToyUtterance> make_toy_corpus(const ToyCorpusConfig& cfg);

}  // namespace disco
