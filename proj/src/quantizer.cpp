#include "disco/quantizer.hpp"

#include "disco/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace disco {

std::int64_t FsqConfig::codebook_size() const {
  std::int64_t n = 1;
  for (int l : levels) n *= l;
  return n;
}

void FsqConfig::validate() const {
  if (levels.empty()) throw std::invalid_argument("fsq: levels must not be empty");
  for (int l : levels)
    if (l < 2) throw std::invalid_argument("fsq: every level count must be >= 2, got " + std::to_string(l));
  if (codebook_size() > (std::int64_t{1} << 31)) throw std::invalid_argument("fsq: codebook too large");
}

template <typename S>
Codes fsq_codes(const Mat<S>& x, std::span<const int> levels) {
  if (static_cast<Eigen::Index>(levels.size()) != x.cols()) throw ShapeError("fsq_codes: one level count per column");
  Codes c(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const S half = S(levels[static_cast<std::size_t>(j)] - 1) / S(2);
    const S top = S(levels[static_cast<std::size_t>(j)] - 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      c(i, j) = static_cast<int>(std::clamp(std::round(half * std::tanh(x(i, j)) + half), S(0), top));
  }
  return c;
}

template <typename S>
FsqOutput<S> fsq_quantize(const Var<S>& x, std::span<const int> levels) {
  return {fsq_codes(x.value(), levels), fsq_ste(x, levels)};
}

template <typename S>
Mat<S> fsq_dequantize(const Codes& codes, std::span<const int> levels) {
  if (static_cast<Eigen::Index>(levels.size()) != codes.cols())
    throw ShapeError("fsq_dequantize: one level count per column");
  Mat<S> v(codes.rows(), codes.cols());
  for (Eigen::Index j = 0; j < codes.cols(); ++j) {
    const S half = S(levels[static_cast<std::size_t>(j)] - 1) / S(2);
    for (Eigen::Index i = 0; i < codes.rows(); ++i) v(i, j) = (S(codes(i, j)) - half) / half;
  }
  return v;
}

template <typename S>
Codes fsq_snap(const Mat<S>& values, std::span<const int> levels) {
  if (static_cast<Eigen::Index>(levels.size()) != values.cols())
    throw ShapeError("fsq_snap: one level count per column");
  Codes c(values.rows(), values.cols());
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    const S half = S(levels[static_cast<std::size_t>(j)] - 1) / S(2);
    const S top = S(levels[static_cast<std::size_t>(j)] - 1);
    for (Eigen::Index i = 0; i < values.rows(); ++i)
      c(i, j) = static_cast<int>(std::clamp(std::round(values(i, j) * half + half), S(0), top));
  }
  return c;
}

std::int64_t codes_to_index(std::span<const int> codes, std::span<const int> levels) {
  if (codes.size() != levels.size()) throw ShapeError("codes_to_index: code word length != number of levels");
  std::int64_t idx = 0;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] < 0 || codes[i] >= levels[i])
      throw std::out_of_range("codes_to_index: code " + std::to_string(codes[i]) + " out of range for dimension " +
                              std::to_string(i) + " with " + std::to_string(levels[i]) + " levels");
    idx = idx * levels[i] + codes[i];
  }
  return idx;
}

std::vector<int> index_to_codes(std::int64_t index, std::span<const int> levels) {
  std::int64_t size = 1;
  for (int l : levels) size *= l;
  if (index < 0 || index >= size)
    throw std::out_of_range("index_to_codes: index " + std::to_string(index) + " outside [0, " + std::to_string(size) +
                            ")");
  std::vector<int> codes(levels.size());
  for (std::size_t i = levels.size(); i-- > 0;) {
    codes[i] = static_cast<int>(index % levels[i]);
    index /= levels[i];
  }
  return codes;
}

std::vector<std::int64_t> codes_to_indices(const Codes& codes, std::span<const int> levels) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(codes.rows()));
  for (Eigen::Index i = 0; i < codes.rows(); ++i)
    out[static_cast<std::size_t>(i)] =
        codes_to_index(std::span<const int>(codes.row(i).data(), static_cast<std::size_t>(codes.cols())), levels);
  return out;
}

Codes indices_to_codes(std::span<const std::int64_t> indices, std::span<const int> levels) {
  Codes c(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(levels.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto w = index_to_codes(indices[i], levels);
    for (std::size_t j = 0; j < w.size(); ++j) c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = w[j];
  }
  return c;
}

double bitrate(double token_rate_hz, std::int64_t codebook_size) {
  if (codebook_size < 2) throw std::invalid_argument("bitrate: codebook size must be >= 2");
  return token_rate_hz * std::log2(static_cast<double>(codebook_size));
}

void VqEmaConfig::validate() const {
  if (codebook_size < 1) throw std::invalid_argument("vq_ema: codebook_size must be >= 1");
  if (!(decay > 0.0 && decay < 1.0)) throw std::invalid_argument("vq_ema: decay must lie in (0, 1)");
  if (restart_threshold < 1) throw std::invalid_argument("vq_ema: restart_threshold must be >= 1");
}

VqEma::VqEma(VqEmaConfig cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) { cfg_.validate(); }

void VqEma::initialize(const MatD& warmup) {
  if (warmup.rows() == 0) throw std::invalid_argument("vq_ema: empty warmup batch");
  const int k = cfg_.codebook_size;
  KmeansModel km = fit_kmeans(warmup, k, cfg_.kmeans_iters, rng_());
  codebook_.resize(k, warmup.cols());
  codebook_.topRows(km.k()) = km.centroids;
  std::uniform_int_distribution<Eigen::Index> pick(0, warmup.rows() - 1);
  for (int j = km.k(); j < k; ++j) codebook_.row(j) = warmup.row(pick(rng_));
  cluster_size_ = Eigen::VectorXd::Ones(k);
  cluster_sum_ = codebook_;
  unused_.assign(static_cast<std::size_t>(k), 0);
  restarts_ = 0;
}

void VqEma::restore(const MatD& codebook) {
  if (codebook.rows() != cfg_.codebook_size) throw ShapeError("vq_ema: restored codebook has the wrong size");
  codebook_ = codebook;
  cluster_size_ = Eigen::VectorXd::Ones(codebook.rows());
  cluster_sum_ = codebook_;
  unused_.assign(static_cast<std::size_t>(codebook.rows()), 0);
}

template <typename S>
VqOutput<S> VqEma::quantize(const Var<S>& x) const {
  if (!initialized()) throw std::logic_error("vq_ema: quantize before initialize");
  if (x.cols() != codebook_.cols()) throw ShapeError("vq_ema: input dim does not match codebook");
  MatD xd = x.value().template cast<double>();
  VqOutput<S> out;
  out.indices = assign(xd, codebook_);
  Mat<S> q(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    q.row(i) = codebook_.row(out.indices[static_cast<std::size_t>(i)]).template cast<S>();
  out.values = straight_through(x, q);
  out.commitment_loss = scale(mse_loss(x, Var<S>::constant(q)), S(cfg_.commitment));
  return out;
}

void VqEma::update(const MatD& x, const std::vector<int>& indices) {
  if (!initialized()) throw std::logic_error("vq_ema: update before initialize");
  if (static_cast<Eigen::Index>(indices.size()) != x.rows()) throw ShapeError("vq_ema: one index per row required");
  const Eigen::Index k = codebook_.rows();
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
  MatD sums = MatD::Zero(k, codebook_.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int j = indices[static_cast<std::size_t>(i)];
    counts[j] += 1.0;
    sums.row(j) += x.row(i);
  }
  const double d = cfg_.decay;
  cluster_size_ = d * cluster_size_ + (1.0 - d) * counts;
  cluster_sum_ = d * cluster_sum_ + (1.0 - d) * sums;

  // Laplace smoothing keeps rarely used codes from dividing by ~0.
  constexpr double eps = 1e-5;
  const double total = cluster_size_.sum();
  for (Eigen::Index j = 0; j < k; ++j) {
    const double n = (cluster_size_[j] + eps) / (total + double(k) * eps) * total;
    codebook_.row(j) = cluster_sum_.row(j) / n;
  }

  std::uniform_int_distribution<Eigen::Index> pick(0, x.rows() - 1);
  for (Eigen::Index j = 0; j < k; ++j) {
    auto& u = unused_[static_cast<std::size_t>(j)];
    u = counts[j] > 0 ? 0 : u + 1;
    if (u >= cfg_.restart_threshold && x.rows() > 0) {
      codebook_.row(j) = x.row(pick(rng_));
      cluster_sum_.row(j) = codebook_.row(j);
      cluster_size_[j] = 1.0;
      u = 0;
      ++restarts_;
    }
  }
}

#define DISCO_INSTANTIATE_QUANTIZER(S)                                                \
  template Codes fsq_codes(const Mat<S>&, std::span<const int>);                      \
  template FsqOutput<S> fsq_quantize(const Var<S>&, std::span<const int>);            \
  template Mat<S> fsq_dequantize(const Codes&, std::span<const int>);                 \
  template Codes fsq_snap(const Mat<S>&, std::span<const int>);                       \
  template VqOutput<S> VqEma::quantize(const Var<S>&) const;

DISCO_INSTANTIATE_QUANTIZER(float)
DISCO_INSTANTIATE_QUANTIZER(double)

#undef DISCO_INSTANTIATE_QUANTIZER

}  // namespace disco
