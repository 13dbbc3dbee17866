#pragma once

// Independent reference computations used to freeze expected values in tests.
// Nothing here calls into the code paths it checks.

#include "disco/metrics.hpp"
#include "disco/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

using disco::MatD;

inline MatD random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Dense softmax attention with an explicit boolean mask, per head.
inline MatD masked_attention(const MatD& q, const MatD& k, const MatD& v, int heads, int window, bool causal) {
  const Eigen::Index t = q.rows(), dh = q.cols() / heads;
  const long half = (window - 1) / 2;
  MatD out = MatD::Zero(t, q.cols());
  for (int h = 0; h < heads; ++h) {
    MatD s = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() / std::sqrt(double(dh));
    for (Eigen::Index i = 0; i < t; ++i)
      for (Eigen::Index j = 0; j < t; ++j) {
        bool allowed = std::abs(long(i) - long(j)) <= half;
        if (causal && j > i) allowed = false;
        if (!allowed) s(i, j) = -std::numeric_limits<double>::infinity();
      }
    for (Eigen::Index i = 0; i < t; ++i) {
      double mx = s.row(i).maxCoeff();
      Eigen::RowVectorXd e = (s.row(i).array() - mx).exp();
      s.row(i) = e / e.sum();
    }
    out.middleCols(h * dh, dh) = s * v.middleCols(h * dh, dh);
  }
  return out;
}

// Direct sliding-window sum: y[t][o] = b[o] + sum_{kk, c} x[t*stride - pad + kk][c] * w[kk][c][o].
inline MatD naive_conv1d(const MatD& x, const std::vector<MatD>& taps, const Eigen::RowVectorXd& bias, int stride,
                         int pad_left, Eigen::Index t_out) {
  MatD y(t_out, bias.size());
  for (Eigen::Index t = 0; t < t_out; ++t)
    for (Eigen::Index o = 0; o < bias.size(); ++o) {
      double acc = bias[o];
      for (std::size_t kk = 0; kk < taps.size(); ++kk) {
        const long src = long(t) * stride - pad_left + long(kk);
        if (src < 0 || src >= x.rows()) continue;
        for (Eigen::Index c = 0; c < x.cols(); ++c) acc += x(src, c) * taps[kk](c, o);
      }
      y(t, o) = acc;
    }
  return y;
}

// Hand summation in base 2; the ratio is base independent.
inline double pnmi(const disco::CountMatrix& c) {
  double n = 0;
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    for (Eigen::Index j = 0; j < c.cols(); ++j) n += double(c(i, j));
  std::vector<double> pr(c.rows(), 0.0), pc(c.cols(), 0.0);
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      pr[i] += double(c(i, j)) / n;
      pc[j] += double(c(i, j)) / n;
    }
  double mi = 0, h = 0;
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    if (pr[i] > 0) h -= pr[i] * std::log2(pr[i]);
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      const double p = double(c(i, j)) / n;
      if (p > 0) mi += p * std::log2(p / (pr[i] * pc[j]));
    }
  }
  return mi / h;
}

// Every midpoint between distinct scores plus both ends; FAR/FRR counted
// directly, crossing found by linear interpolation of the two rates.
inline double eer(const std::vector<disco::Trial>& t) {
  std::vector<double> s;
  for (const auto& x : t) s.push_back(x.score);
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  std::vector<double> thr{s.front() - 1};
  for (std::size_t i = 0; i + 1 < s.size(); ++i) thr.push_back(0.5 * (s[i] + s[i + 1]));
  thr.push_back(s.back() + 1);
  std::vector<std::pair<double, double>> pts;
  for (double th : thr) {
    double fa = 0, fr = 0, ns = 0, nd = 0;
    for (const auto& x : t) {
      if (x.same) {
        ++ns;
        fr += x.score < th;
      } else {
        ++nd;
        fa += x.score >= th;
      }
    }
    pts.emplace_back(fa / nd, fr / ns);
  }
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const auto [a0, r0] = pts[i];
    const auto [a1, r1] = pts[i + 1];
    if (a1 - r1 > 0) continue;
    if (a1 == r1) return a1;
    const double u = (a0 - r0) / ((a0 - r0) - (a1 - r1));
    return a0 + u * (a1 - a0);
  }
  return 1.0;
}

// Memoised recursion, a different formulation from the row-rolling DP.
inline std::size_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t r = a[i] == b[j] ? go(i + 1, j + 1) : 1 + std::min({go(i + 1, j), go(i, j + 1), go(i + 1, j + 1)});
    return memo[key] = r;
  };
  return go(0, 0);
}

}  // namespace oracle
