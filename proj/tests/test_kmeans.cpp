#include <doctest.h>

#include "disco/kmeans.hpp"
#include "oracles.hpp"

using namespace disco;

TEST_CASE("average pooling") {
  MatD x(4, 1);
  x << 1, 2, 3, 4;
  CHECK(avgpool_downsample(x, 2) == (MatD(2, 1) << 1.5, 3.5).finished());
  CHECK(avgpool_downsample(MatD::Constant(9, 3, 0.25), 4).isApproxToConstant(0.25));
  MatD y(5, 1);
  y << 1, 2, 3, 4, 5;
  MatD p = avgpool_downsample(y, 2);
  REQUIRE(p.rows() == 3);
  CHECK(p(2, 0) == 5.0);
  CHECK_THROWS(avgpool_downsample(MatD(0, 3), 2));
}

TEST_CASE("k-means recovers separated blobs") {
  std::mt19937_64 rng(1);
  MatD x(400, 3);
  for (int i = 0; i < 400; ++i) {
    x.row(i) = oracle::random_matrix(1, 3, rng, 0.1);
    x(i, 0) += i < 200 ? -10.0 : 10.0;
  }
  Eigen::RowVectorXd m0 = x.topRows(200).colwise().mean(), m1 = x.bottomRows(200).colwise().mean();
  KmeansModel km = fit_kmeans(x, 2, 50, 7);
  REQUIRE(km.k() == 2);
  const int a = km.centroids(0, 0) < 0 ? 0 : 1;
  CHECK((km.centroids.row(a) - m0).cwiseAbs().maxCoeff() < 1e-3);
  CHECK((km.centroids.row(1 - a) - m1).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("k-means edge cases") {
  std::mt19937_64 rng(2);
  MatD x = oracle::random_matrix(50, 4, rng);
  KmeansModel one = fit_kmeans(x, 1, 10, 0);
  CHECK((one.centroids.row(0) - x.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);

  KmeansModel many = fit_kmeans(x.topRows(5), 12800, 10, 0);
  CHECK(many.k() == 5);
  CHECK(many.requested_k == 12800);

  KmeansModel same = fit_kmeans(MatD::Constant(20, 2, 3.0), 4, 10, 0);
  CHECK(same.k() == 1);
  CHECK(same.centroids.isApproxToConstant(3.0));

  CHECK_THROWS(fit_kmeans(MatD(0, 2), 2, 10, 0));
}

TEST_CASE("Lloyd inertia never increases and fitting is deterministic") {
  std::mt19937_64 rng(3);
  MatD x = oracle::random_matrix(600, 6, rng);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    KmeansModel km = fit_kmeans(x, 16, 40, seed);
    for (std::size_t i = 1; i < km.inertia_history.size(); ++i)
      CHECK(km.inertia_history[i] <= km.inertia_history[i - 1] * (1 + 1e-12));
    CHECK(fit_kmeans(x, 16, 40, seed).centroids == km.centroids);
    std::vector<int> own = assign(km.centroids, km);
    for (int j = 0; j < km.k(); ++j) CHECK(own[static_cast<std::size_t>(j)] == j);
  }
}

TEST_CASE("assignment matches brute force with lowest-index ties") {
  MatD c(2, 1);
  c << -1, 1;
  CHECK(assign(MatD::Zero(1, 1), c)[0] == 0);
  CHECK(assign(MatD::Constant(1, 1, 1.0), c)[0] == 1);

  std::mt19937_64 rng(4);
  MatD cent = oracle::random_matrix(37, 8, rng);
  MatD frames = oracle::random_matrix(1000, 8, rng);
  auto labels = assign(frames, cent);
  for (Eigen::Index i = 0; i < frames.rows(); ++i) {
    int best = 0;
    double bd = 1e300;
    for (int j = 0; j < cent.rows(); ++j) {
      double d = 0;
      for (int k = 0; k < 8; ++k) d += (frames(i, k) - cent(j, k)) * (frames(i, k) - cent(j, k));
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    CHECK(labels[static_cast<std::size_t>(i)] == best);
  }
  CHECK_THROWS_AS(assign(MatD::Zero(2, 3), cent), ShapeError);
}
