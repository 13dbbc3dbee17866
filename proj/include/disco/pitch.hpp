#pragma once

#include <span>
#include <vector>

namespace disco {

struct PitchTrack {
  std::vector<double> f0;  // Hz, 0 where unvoiced
  std::vector<bool> voiced;
  double frame_rate = 100.0;
  std::size_t voiced_count() const;
};

struct PitchConfig {
  int frame_hop = 240;     // samples
  double fmin = 60.0;      // Hz
  double fmax = 500.0;     // Hz
  double clarity = 0.5;    // minimum normalized correlation to call a frame voiced
  double octave_ratio = 0.8;  // shortest lag whose peak reaches this fraction of the best wins
  double silence_rms = 1e-4;
  int median_radius = 2;   // voiced frames take the median of voiced neighbours within this radius; 0 disables
};

/// Normalized cross-correlation pitch tracker. Each frame correlates a window
/// of one period at fmin against its lagged copy; the smallest lag whose
/// peak reaches octave_ratio of the best is refined by a parabola through its
/// neighbours. Isolated octave slips are then removed by a running median.
PitchTrack f0_extract(std::span<const float> samples, int sample_rate, const PitchConfig& cfg = {});

}  // namespace disco
