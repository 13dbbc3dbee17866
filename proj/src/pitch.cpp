#include "disco/pitch.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace disco {

std::size_t PitchTrack::voiced_count() const {
  return static_cast<std::size_t>(std::count(voiced.begin(), voiced.end(), true));
}

PitchTrack f0_extract(std::span<const float> x, int sample_rate, const PitchConfig& cfg) {
  if (!(cfg.fmin > 0 && cfg.fmin < cfg.fmax && cfg.fmax < sample_rate / 2.0))
    throw std::invalid_argument("f0_extract: need 0 < fmin < fmax < sample_rate / 2");
  if (cfg.frame_hop < 1) throw std::invalid_argument("f0_extract: frame_hop must be >= 1");
  const long n = static_cast<long>(x.size());
  const long min_lag = std::max(2L, static_cast<long>(std::floor(sample_rate / cfg.fmax)));
  const long max_lag = static_cast<long>(std::ceil(sample_rate / cfg.fmin));
  const long win = max_lag;  // correlation length: one period at fmin
  const long frames = (n + cfg.frame_hop - 1) / cfg.frame_hop;

  PitchTrack out;
  out.frame_rate = double(sample_rate) / cfg.frame_hop;
  out.f0.assign(static_cast<std::size_t>(frames), 0.0);
  out.voiced.assign(static_cast<std::size_t>(frames), false);

  auto at = [&](long i) -> double { return (i >= 0 && i < n) ? double(x[static_cast<std::size_t>(i)]) : 0.0; };
  std::vector<double> r(static_cast<std::size_t>(max_lag + 2), 0.0);
  std::vector<double> seg(static_cast<std::size_t>(win + max_lag + 2));

  for (long f = 0; f < frames; ++f) {
    const long start = f * cfg.frame_hop - (win + max_lag) / 2;
    for (long i = 0; i < static_cast<long>(seg.size()); ++i) seg[static_cast<std::size_t>(i)] = at(start + i);
    double e0 = 0.0;
    for (long i = 0; i < win; ++i) e0 += seg[static_cast<std::size_t>(i)] * seg[static_cast<std::size_t>(i)];
    if (std::sqrt(e0 / win) < cfg.silence_rms) continue;

    // Energy of the lagged window, updated incrementally.
    double el = 0.0;
    for (long i = 0; i < win; ++i)
      el += seg[static_cast<std::size_t>(min_lag - 1 + i)] * seg[static_cast<std::size_t>(min_lag - 1 + i)];
    double best = -1.0;
    for (long lag = min_lag - 1; lag <= max_lag + 1; ++lag) {
      if (lag > min_lag - 1) {
        const double out_v = seg[static_cast<std::size_t>(lag - 1)], in_v = seg[static_cast<std::size_t>(lag + win - 1)];
        el += in_v * in_v - out_v * out_v;
      }
      double dot = 0.0;
      for (long i = 0; i < win; ++i) dot += seg[static_cast<std::size_t>(i)] * seg[static_cast<std::size_t>(i + lag)];
      const double denom = std::sqrt(e0 * std::max(el, 0.0));
      r[static_cast<std::size_t>(lag)] = denom > 0.0 ? dot / denom : 0.0;
      if (lag >= min_lag && lag <= max_lag) best = std::max(best, r[static_cast<std::size_t>(lag)]);
    }
    if (best < cfg.clarity) continue;

    long pick = -1;
    for (long lag = min_lag; lag <= max_lag; ++lag) {
      const double v = r[static_cast<std::size_t>(lag)];
      if (v >= cfg.octave_ratio * best && v >= r[static_cast<std::size_t>(lag - 1)] && v >= r[static_cast<std::size_t>(lag + 1)]) {
        pick = lag;
        break;
      }
    }
    if (pick < 0) continue;
    const double a = r[static_cast<std::size_t>(pick - 1)], b = r[static_cast<std::size_t>(pick)],
                 c = r[static_cast<std::size_t>(pick + 1)];
    const double curv = a - 2.0 * b + c;
    double shift = curv < 0.0 ? 0.5 * (a - c) / curv : 0.0;
    shift = std::clamp(shift, -0.5, 0.5);
    out.f0[static_cast<std::size_t>(f)] = sample_rate / (double(pick) + shift);
    out.voiced[static_cast<std::size_t>(f)] = true;
  }
  if (cfg.median_radius > 0) {
    const std::vector<double> raw = out.f0;
    std::vector<double> win_vals;
    for (long f = 0; f < frames; ++f) {
      if (!out.voiced[static_cast<std::size_t>(f)]) continue;
      win_vals.clear();
      for (long g = std::max(0L, f - cfg.median_radius); g <= std::min(frames - 1, f + cfg.median_radius); ++g)
        if (out.voiced[static_cast<std::size_t>(g)]) win_vals.push_back(raw[static_cast<std::size_t>(g)]);
      auto mid = win_vals.begin() + static_cast<long>(win_vals.size() / 2);
      std::nth_element(win_vals.begin(), mid, win_vals.end());
      out.f0[static_cast<std::size_t>(f)] = *mid;
    }
  }
  return out;
}

}  // namespace disco
