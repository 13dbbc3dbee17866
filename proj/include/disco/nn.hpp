#pragma once

#include "disco/ops.hpp"
#include "disco/tensor.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace disco {

using Rng = std::mt19937_64;

enum class Init { TruncNormal, Zeros, Ones };

/// Named parameters in declaration order. The order is part of the
/// checkpoint format, so modules must register parameters deterministically.
template <typename S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var<S> var;
  };

  Var<S> add(std::string name, Mat<S> init);
  Var<S> add(std::string name, Eigen::Index rows, Eigen::Index cols, Init init, Rng& rng, double stddev = 0.02);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  const Var<S>* find(std::string_view name) const;
  Var<S>* find(std::string_view name);
  const Var<S>& at(std::string_view name) const;

  std::vector<Var<S>> with_prefix(std::string_view prefix) const;
  void set_trainable(std::string_view prefix, bool trainable);
  void zero_grad();
  std::size_t element_count() const;

  /// Copies values (with scalar conversion) from a store with identical names and shapes.
  template <typename T>
  void assign_from(const ParamStore<T>& other) {
    if (other.entries().size() != entries_.size()) throw ShapeError("assign_from: parameter count mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& src = other.entries()[i];
      auto& dst = entries_[i];
      if (src.name != dst.name || src.var.rows() != dst.var.rows() || src.var.cols() != dst.var.cols())
        throw ShapeError("assign_from: parameter '" + dst.name + "' does not match '" + src.name + "'");
      dst.var.mutable_value() = src.var.value().template cast<S>();
    }
  }

 private:
  std::vector<Entry> entries_;
};

Mat<double> truncated_normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);

struct TransformerConfig {
  int n_layers = 6;
  int n_heads = 12;
  int d_model = 768;
  int d_ffn = 2048;
  int window = 125;

  /// Throws std::invalid_argument naming the broken invariant.
  void validate(std::string_view where) const;
};

template <typename S>
struct Linear {
  Var<S> weight;  // [in, out]
  Var<S> bias;    // [1, out]
  Var<S> operator()(const Var<S>& x) const { return affine(x, weight, bias); }
};

template <typename S>
Linear<S> make_linear(ParamStore<S>& store, const std::string& name, int in, int out, Rng& rng,
                      Init weight_init = Init::TruncNormal);

template <typename S>
struct LayerNormParams {
  Var<S> gain;
  Var<S> bias;
  Var<S> operator()(const Var<S>& x) const { return layer_norm(x, gain, bias, S(1e-5)); }
};

template <typename S>
LayerNormParams<S> make_layer_norm(ParamStore<S>& store, const std::string& name, int dim, Rng& rng);

template <typename S>
struct SwiGLU {
  Linear<S> gate, up, down;
  Var<S> operator()(const Var<S>& x) const { return down(mul(silu(gate(x)), up(x))); }
};

/// Expects `down` to be zero-initialised when used on a residual path.
template <typename S>
SwiGLU<S> make_swiglu(ParamStore<S>& store, const std::string& name, int dim, int hidden, Rng& rng,
                      Init down_init = Init::Zeros);

template <typename S>
struct SelfAttention {
  Linear<S> qkv;  // d -> 3d
  Linear<S> out;
  int n_heads = 1;
  int window = 1;
  Var<S> operator()(const Var<S>& x, std::int64_t first_position) const;
};

/// Per-block modulation produced from a conditioning vector.
template <typename S>
struct Modulation {
  Var<S> shift, scale, gate;  // each [1, D]
};

/// adaLN-Zero: silu(cond) projected to (shift, scale, gate) for `n_sites`
/// sub-layers. The projection starts at exactly zero.
template <typename S>
struct AdaLNZero {
  Linear<S> proj;  // [Dc, 3 * n_sites * D]
  int dim = 0;
  int n_sites = 2;
  std::vector<Modulation<S>> operator()(const Var<S>& cond) const;
};

template <typename S>
AdaLNZero<S> make_adaln_zero(ParamStore<S>& store, const std::string& name, int cond_dim, int dim, int n_sites,
                             Rng& rng);

/// y = norm(x) * (1 + scale) + shift, broadcast to every timestep.
template <typename S>
Var<S> modulate(const Var<S>& normed, const Modulation<S>& m);

/// Pre-norm transformer block. With adaLN the norms carry no affine part and
/// both residual branches are gated.
template <typename S>
struct TransformerBlock {
  std::optional<LayerNormParams<S>> norm1, norm2;
  SelfAttention<S> attn;
  SwiGLU<S> ffn;
  std::optional<AdaLNZero<S>> adaln;
  Var<S> operator()(const Var<S>& x, std::int64_t first_position, const Var<S>* cond) const;
};

template <typename S>
struct Transformer {
  TransformerConfig cfg;
  std::vector<TransformerBlock<S>> blocks;
  LayerNormParams<S> final_norm;
  Var<S> operator()(const Var<S>& x, std::int64_t first_position = 0, const Var<S>* cond = nullptr) const;
};

/// cond_dim > 0 adds adaLN-Zero conditioning to every block.
template <typename S>
Transformer<S> make_transformer(ParamStore<S>& store, const std::string& name, const TransformerConfig& cfg, Rng& rng,
                                int cond_dim = 0);

template <typename S>
struct Conv1d {
  Var<S> weight;  // [k*Cin, Cout]
  Var<S> bias;
  int stride = 1;
  Var<S> operator()(const Var<S>& x) const { return conv1d(x, weight, bias, stride, Padding::Same); }
};

template <typename S>
Conv1d<S> make_conv1d(ParamStore<S>& store, const std::string& name, int cin, int cout, int kernel, int stride,
                      Rng& rng, Init weight_init = Init::TruncNormal);

template <typename S>
struct ConvTranspose1d {
  Var<S> weight;  // [Cin, k*Cout]
  Var<S> bias;
  int stride = 1;
  Var<S> operator()(const Var<S>& x) const { return conv_transpose1d(x, weight, bias, stride); }
};

template <typename S>
ConvTranspose1d<S> make_conv_transpose1d(ParamStore<S>& store, const std::string& name, int cin, int cout, int kernel,
                                         int stride, Rng& rng);

/// ConvNeXt block: x + proj(gelu(expand(norm(dwconv(x))))).
template <typename S>
struct ConvNeXtBlock {
  Var<S> dw_weight, dw_bias;
  LayerNormParams<S> norm;
  Linear<S> expand, proj;
  Var<S> operator()(const Var<S>& x) const;
};

template <typename S>
ConvNeXtBlock<S> make_convnext_block(ParamStore<S>& store, const std::string& name, int channels, int kernel,
                                     int expansion, Rng& rng);

}  // namespace disco
