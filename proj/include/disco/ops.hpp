#pragma once

// Differentiable primitives. Each op computes its value eagerly and, when any
// input requires a gradient, records a hand-written backward on the tape.

#include "disco/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace disco {

enum class Padding { Same, None };

// While a SurrogateScope is alive on this thread, straight-through ops
// (fsq_ste, straight_through) evaluate their smooth surrogate in the forward
// pass. Gradient checking uses this so finite differences see the function
// whose derivative the backward pass actually implements.
class SurrogateScope {
 public:
  SurrogateScope();
  ~SurrogateScope();
  SurrogateScope(const SurrogateScope&) = delete;
  SurrogateScope& operator=(const SurrogateScope&) = delete;

 private:
  bool previous_;
};
bool surrogate_mode();

// Elementwise and broadcasting arithmetic.
template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> add_row(const Var<S>& x, const Var<S>& row);  // x[T,C] + row[1,C]
template <typename S> Var<S> mul_row(const Var<S>& x, const Var<S>& row);  // x[T,C] * row[1,C]
template <typename S> Var<S> scale(const Var<S>& x, S factor);
template <typename S> Var<S> add_scalar(const Var<S>& x, S offset);
template <typename S> Var<S> matmul(const Var<S>& a, const Var<S>& b);
/// y = x W + b with W [in, out] and b [1, out].
template <typename S> Var<S> affine(const Var<S>& x, const Var<S>& weight, const Var<S>& bias);

// Activations.
template <typename S> Var<S> tanh(const Var<S>& x);
template <typename S> Var<S> sigmoid(const Var<S>& x);
template <typename S> Var<S> silu(const Var<S>& x);
template <typename S> Var<S> gelu(const Var<S>& x);  // tanh approximation
template <typename S> Var<S> leaky_relu(const Var<S>& x, S slope);
template <typename S> Var<S> square(const Var<S>& x);

// Normalization over the last axis. The two-argument form has no affine part.
template <typename S> Var<S> layer_norm(const Var<S>& x, S eps);
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gain, const Var<S>& bias, S eps);

/// Rotary embedding on [T, H*Dh]; row t is rotated by angle positions[t] * base^(-2i/Dh).
template <typename S>
Var<S> rope(const Var<S>& x, int n_heads, std::span<const std::int64_t> positions, double base = 10000.0);
template <typename S>
Var<S> rope(const Var<S>& x, int n_heads, std::int64_t first_position = 0, double base = 10000.0);

/// Multi-head softmax attention on [T, H*Dh] where query i sees keys
/// |i - j| <= (window - 1) / 2 (and j <= i when causal). If `weights` is
/// non-null it receives the dense [H*T, T] attention matrix for inspection.
template <typename S>
Var<S> local_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, int n_heads, int window, bool causal,
                       Mat<S>* weights = nullptr);

/// x [T, Cin], weight [k*Cin, Cout] (tap-major), bias [1, Cout].
/// Same padding gives ceil(T/stride) frames with left pad (k - stride)/2.
template <typename S>
Var<S> conv1d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride, Padding padding);
/// x [T, Cin], weight [Cin, k*Cout], bias [1, Cout]; output is exactly T*stride frames.
template <typename S>
Var<S> conv_transpose1d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride);
/// weight [k, C], bias [1, C]; stride 1, same padding.
template <typename S> Var<S> depthwise_conv1d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias);
/// Image stored as [height*width, Cin] (row = h*width + w); weight [kh*kw*Cin, Cout].
/// Stride 1, zero padding that preserves height and width.
template <typename S>
Var<S> conv2d(const Var<S>& x, int height, int width, const Var<S>& weight, const Var<S>& bias, int kh, int kw);

// Shape plumbing.
template <typename S> Var<S> slice_cols(const Var<S>& x, Eigen::Index start, Eigen::Index count);
template <typename S> Var<S> slice_rows(const Var<S>& x, Eigen::Index start, Eigen::Index count);
/// Row-major reinterpretation with the same element count.
template <typename S> Var<S> reshape(const Var<S>& x, Eigen::Index rows, Eigen::Index cols);
template <typename S> Var<S> concat_cols(const std::vector<Var<S>>& parts);
template <typename S> Var<S> concat_rows(const std::vector<Var<S>>& parts);
template <typename S> Var<S> mean_rows(const Var<S>& x);
template <typename S> Var<S> broadcast_rows(const Var<S>& row, Eigen::Index rows);
/// Softmax along the time axis (rows), independently per column.
template <typename S> Var<S> softmax_time(const Var<S>& x);
/// Linear interpolation along time to `out_rows` frames, frame centres aligned.
template <typename S> Var<S> resample_linear(const Var<S>& x, Eigen::Index out_rows);

// Reductions and losses (1 x 1 results).
template <typename S> Var<S> sum(const Var<S>& x);
template <typename S> Var<S> mean(const Var<S>& x);
template <typename S> Var<S> l1_loss(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mse_loss(const Var<S>& a, const Var<S>& b);

/// Weighted mean and standard deviation over time: x, w [T, C] -> [1, 2C].
/// The std is sqrt(var + eps) - sqrt(eps), which is exactly zero for zero variance.
template <typename S> Var<S> weighted_stats(const Var<S>& x, const Var<S>& w, S eps = S(1e-6));

// Quantization.
template <typename S> Var<S> fsq_bound(const Var<S>& x, std::span<const int> levels);
/// Dequantized FSQ values in [-1, 1] with the straight-through gradient of fsq_bound / halfscale.
template <typename S> Var<S> fsq_ste(const Var<S>& x, std::span<const int> levels);
/// Forward value `quantized`, gradient passed to `x` unchanged.
template <typename S> Var<S> straight_through(const Var<S>& x, const Mat<S>& quantized);
/// Rounding with no gradient; differentiating through it raises NonDifferentiableError.
template <typename S> Var<S> hard_round(const Var<S>& x);
template <typename S> Var<S> detach(const Var<S>& x);

}  // namespace disco
