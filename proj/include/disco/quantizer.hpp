#pragma once

#include "disco/nn.hpp"
#include "disco/ops.hpp"
#include "disco/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace disco {

using Codes = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FsqConfig {
  std::vector<int> levels{8, 8, 8, 5, 5};

  std::int64_t codebook_size() const;
  int dims() const { return static_cast<int>(levels.size()); }
  void validate() const;
};

template <typename S>
struct FsqOutput {
  Codes codes;    // [T, n], code i in 0..L_i-1
  Var<S> values;  // [T, n] in [-1, 1], straight-through gradient
};

/// Bound, shift, round and clamp. Codes come from the exact forward pass even
/// inside a SurrogateScope.
template <typename S>
FsqOutput<S> fsq_quantize(const Var<S>& x, std::span<const int> levels);

template <typename S>
Codes fsq_codes(const Mat<S>& x, std::span<const int> levels);

/// codes -> (c - h) / h with h = (L - 1) / 2.
template <typename S>
Mat<S> fsq_dequantize(const Codes& codes, std::span<const int> levels);

/// Snaps value-space vectors back onto the grid: clamp(round(v * h + h)).
template <typename S>
Codes fsq_snap(const Mat<S>& values, std::span<const int> levels);

/// Mixed radix, first dimension most significant.
std::int64_t codes_to_index(std::span<const int> codes, std::span<const int> levels);
std::vector<int> index_to_codes(std::int64_t index, std::span<const int> levels);
std::vector<std::int64_t> codes_to_indices(const Codes& codes, std::span<const int> levels);
Codes indices_to_codes(std::span<const std::int64_t> indices, std::span<const int> levels);

/// Bits per second for one token stream; callers round for display.
double bitrate(double token_rate_hz, std::int64_t codebook_size);

struct VqEmaConfig {
  int codebook_size = 12800;
  double decay = 0.8;
  int restart_threshold = 200;  // consecutive unused steps before a code is reseeded
  double commitment = 0.25;
  int kmeans_iters = 20;

  void validate() const;
};

template <typename S>
struct VqOutput {
  std::vector<int> indices;
  Var<S> values;           // codebook rows, straight-through to the input
  Var<S> commitment_loss;  // commitment * mse(x, sg(values))
};

/// Vector quantizer with an EMA-updated codebook, k-means initialisation and
/// random restarts for dead codes.
class VqEma {
 public:
  VqEma() = default;
  VqEma(VqEmaConfig cfg, std::uint64_t seed);

  /// k-means over a warmup batch. Codes beyond the number of distinct frames
  /// are filled with randomly drawn warmup frames.
  void initialize(const MatD& warmup);
  bool initialized() const { return codebook_.rows() > 0; }
  /// Reinstates a saved codebook with fresh EMA statistics.
  void restore(const MatD& codebook);

  template <typename S>
  VqOutput<S> quantize(const Var<S>& x) const;

  /// One EMA step given the encoder outputs and their assigned indices.
  void update(const MatD& x, const std::vector<int>& indices);

  const MatD& codebook() const { return codebook_; }
  MatD& mutable_codebook() { return codebook_; }
  const VqEmaConfig& config() const { return cfg_; }
  const std::vector<int>& unused_steps() const { return unused_; }
  int restarts() const { return restarts_; }

 private:
  VqEmaConfig cfg_;
  Rng rng_;
  MatD codebook_;
  Eigen::VectorXd cluster_size_;
  MatD cluster_sum_;
  std::vector<int> unused_;
  int restarts_ = 0;
};

}  // namespace disco
