#pragma once

#include "disco/tensor.hpp"

#include <cstdint>
#include <vector>

namespace disco {

struct KmeansModel {
  MatD centroids;  // [K, D]
  int requested_k = 0;
  std::vector<double> inertia_history;  // one entry per Lloyd iteration
  int k() const { return static_cast<int>(centroids.rows()); }
};

/// Non-overlapping window means over time; a trailing partial window is
/// averaged over the frames it actually has.
MatD avgpool_downsample(const MatD& frames, int factor);

/// k-means++ seeding followed by Lloyd iterations. If there are fewer frames
/// than `k`, k is reduced to the frame count (requested_k keeps the original).
/// Identical frames collapse onto one effective cluster.
KmeansModel fit_kmeans(const MatD& frames, int k, int iters, std::uint64_t seed);

/// Nearest centroid under L2, ties going to the lower index.
std::vector<int> assign(const MatD& frames, const MatD& centroids);
inline std::vector<int> assign(const MatD& frames, const KmeansModel& model) {
  return assign(frames, model.centroids);
}

/// Sum of squared distances from each frame to its assigned centroid.
double inertia(const MatD& frames, const MatD& centroids, const std::vector<int>& labels);

}  // namespace disco
