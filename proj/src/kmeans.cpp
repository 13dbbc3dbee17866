#include "disco/kmeans.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <stdexcept>

namespace disco {

MatD avgpool_downsample(const MatD& frames, int factor) {
  if (frames.rows() == 0) throw std::invalid_argument("avgpool_downsample: empty input");
  if (factor < 1) throw std::invalid_argument("avgpool_downsample: factor must be >= 1");
  const Eigen::Index out = (frames.rows() + factor - 1) / factor;
  MatD y(out, frames.cols());
  for (Eigen::Index i = 0; i < out; ++i) {
    const Eigen::Index start = i * factor;
    const Eigen::Index n = std::min<Eigen::Index>(factor, frames.rows() - start);
    y.row(i) = frames.middleRows(start, n).colwise().sum() / double(n);
  }
  return y;
}

namespace {

// Squared distances [N, K] via |x|^2 - 2 x.c + |c|^2, clamped at zero.
MatD squared_distances(const MatD& x, const MatD& c) {
  Eigen::VectorXd xn = x.rowwise().squaredNorm();
  Eigen::RowVectorXd cn = c.rowwise().squaredNorm().transpose();
  MatD d = -2.0 * (x * c.transpose());
  d.colwise() += xn;
  d.rowwise() += cn;
  return d.cwiseMax(0.0);
}

}  // namespace

std::vector<int> assign(const MatD& frames, const MatD& centroids) {
  if (centroids.rows() == 0) throw std::invalid_argument("assign: model has no centroids");
  if (frames.cols() != centroids.cols())
    throw ShapeError("assign: frame dim " + std::to_string(frames.cols()) + " != centroid dim " +
                     std::to_string(centroids.cols()));
  std::vector<int> labels(static_cast<std::size_t>(frames.rows()));
  constexpr Eigen::Index block = 1024;
  for (Eigen::Index s = 0; s < frames.rows(); s += block) {
    const Eigen::Index n = std::min(block, frames.rows() - s);
    MatD d = squared_distances(frames.middleRows(s, n), centroids);
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      d.row(i).minCoeff(&best);  // first minimum wins
      labels[static_cast<std::size_t>(s + i)] = static_cast<int>(best);
    }
  }
  return labels;
}

double inertia(const MatD& frames, const MatD& centroids, const std::vector<int>& labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < frames.rows(); ++i)
    total += (frames.row(i) - centroids.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
  return total;
}

KmeansModel fit_kmeans(const MatD& frames, int k, int iters, std::uint64_t seed) {
  if (frames.rows() == 0) throw std::invalid_argument("fit_kmeans: no frames");
  if (k < 1) throw std::invalid_argument("fit_kmeans: k must be >= 1");
  if (!frames.allFinite()) throw NumericError("fit_kmeans: non-finite frames");
  KmeansModel model;
  model.requested_k = k;
  const Eigen::Index n = frames.rows();
  k = static_cast<int>(std::min<Eigen::Index>(k, n));
  std::mt19937_64 rng(seed);

  // k-means++ seeding. When every remaining frame already sits on a centroid
  // the data has fewer distinct points than k and seeding stops there.
  std::vector<Eigen::Index> chosen{std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng)};
  Eigen::VectorXd nearest = (frames.rowwise() - frames.row(chosen[0])).rowwise().squaredNorm();
  while (static_cast<int>(chosen.size()) < k) {
    const double total = nearest.sum();
    if (!(total > 0.0)) break;
    std::uniform_real_distribution<double> u(0.0, total);
    double r = u(rng), acc = 0.0;
    Eigen::Index pick = n - 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      acc += nearest[i];
      if (acc >= r && nearest[i] > 0.0) {
        pick = i;
        break;
      }
    }
    chosen.push_back(pick);
    nearest = nearest.cwiseMin((frames.rowwise() - frames.row(pick)).rowwise().squaredNorm());
  }
  MatD c(static_cast<Eigen::Index>(chosen.size()), frames.cols());
  for (std::size_t j = 0; j < chosen.size(); ++j) c.row(static_cast<Eigen::Index>(j)) = frames.row(chosen[j]);

  std::vector<int> labels;
  for (int it = 0; it < std::max(iters, 1); ++it) {
    std::vector<int> next = assign(frames, c);
    model.inertia_history.push_back(inertia(frames, c, next));
    const bool converged = next == labels;
    labels = std::move(next);
    if (converged) break;

    MatD sums = MatD::Zero(c.rows(), c.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(c.rows()), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(labels[static_cast<std::size_t>(i)]) += frames.row(i);
      ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    for (Eigen::Index j = 0; j < c.rows(); ++j) {
      if (counts[static_cast<std::size_t>(j)] > 0) {
        c.row(j) = sums.row(j) / double(counts[static_cast<std::size_t>(j)]);
        continue;
      }
      // Empty cluster: move it onto the frame worst served by the current centroids.
      Eigen::Index far = 0;
      double best = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = (frames.row(i) - c.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
        if (d > best) {
          best = d;
          far = i;
        }
      }
      c.row(j) = frames.row(far);
      labels[static_cast<std::size_t>(far)] = static_cast<int>(j);
    }
  }
  model.centroids = std::move(c);
  return model;
}

}  // namespace disco
