#include "disco/nn.hpp"

#include <stdexcept>

namespace disco {

Mat<double> truncated_normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double v;
    do {
      v = dist(rng);
    } while (v < -2.0 || v > 2.0);
    m.data()[i] = v * stddev;
  }
  return m;
}

template <typename S>
Var<S> ParamStore<S>::add(std::string name, Mat<S> init) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  auto v = Var<S>::parameter(std::move(init));
  entries_.push_back({std::move(name), v});
  return v;
}

template <typename S>
Var<S> ParamStore<S>::add(std::string name, Eigen::Index rows, Eigen::Index cols, Init init, Rng& rng,
                          double stddev) {
  Mat<S> m;
  switch (init) {
    case Init::TruncNormal:
      m = truncated_normal(rows, cols, stddev, rng).template cast<S>();
      break;
    case Init::Zeros:
      m = Mat<S>::Zero(rows, cols);
      break;
    case Init::Ones:
      m = Mat<S>::Ones(rows, cols);
      break;
  }
  return add(std::move(name), std::move(m));
}

template <typename S>
const Var<S>* ParamStore<S>::find(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e.var;
  return nullptr;
}

template <typename S>
Var<S>* ParamStore<S>::find(std::string_view name) {
  for (auto& e : entries_)
    if (e.name == name) return &e.var;
  return nullptr;
}

template <typename S>
const Var<S>& ParamStore<S>::at(std::string_view name) const {
  const Var<S>* v = find(name);
  if (!v) throw std::out_of_range("unknown parameter: " + std::string(name));
  return *v;
}

template <typename S>
std::vector<Var<S>> ParamStore<S>::with_prefix(std::string_view prefix) const {
  std::vector<Var<S>> out;
  for (const auto& e : entries_)
    if (std::string_view(e.name).substr(0, prefix.size()) == prefix) out.push_back(e.var);
  return out;
}

template <typename S>
void ParamStore<S>::set_trainable(std::string_view prefix, bool trainable) {
  for (auto& e : entries_)
    if (std::string_view(e.name).substr(0, prefix.size()) == prefix) e.var.set_requires_grad(trainable);
}

template <typename S>
void ParamStore<S>::zero_grad() {
  for (auto& e : entries_) e.var.mutable_grad().resize(0, 0);
}

template <typename S>
std::size_t ParamStore<S>::element_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.var.value().size());
  return n;
}

void TransformerConfig::validate(std::string_view where) const {
  auto fail = [&](const std::string& what) { throw std::invalid_argument(std::string(where) + ": " + what); };
  if (n_layers < 1) fail("n_layers must be >= 1");
  if (n_heads < 1) fail("n_heads must be >= 1");
  if (d_model < 1 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if ((d_model / n_heads) % 2 != 0) fail("head dimension must be even for rotary embeddings");
  if (d_ffn < 1) fail("d_ffn must be >= 1");
  if (window < 1 || window % 2 == 0) fail("window must be odd and >= 1");
}

template <typename S>
Linear<S> make_linear(ParamStore<S>& store, const std::string& name, int in, int out, Rng& rng, Init weight_init) {
  Linear<S> l;
  l.weight = store.add(name + ".weight", in, out, weight_init, rng);
  l.bias = store.add(name + ".bias", 1, out, Init::Zeros, rng);
  return l;
}

template <typename S>
LayerNormParams<S> make_layer_norm(ParamStore<S>& store, const std::string& name, int dim, Rng& rng) {
  LayerNormParams<S> ln;
  ln.gain = store.add(name + ".gain", 1, dim, Init::Ones, rng);
  ln.bias = store.add(name + ".bias", 1, dim, Init::Zeros, rng);
  return ln;
}

template <typename S>
SwiGLU<S> make_swiglu(ParamStore<S>& store, const std::string& name, int dim, int hidden, Rng& rng, Init down_init) {
  SwiGLU<S> f;
  f.gate = make_linear(store, name + ".gate", dim, hidden, rng);
  f.up = make_linear(store, name + ".up", dim, hidden, rng);
  f.down = make_linear(store, name + ".down", hidden, dim, rng, down_init);
  return f;
}

template <typename S>
Var<S> SelfAttention<S>::operator()(const Var<S>& x, std::int64_t first_position) const {
  const Eigen::Index d = x.cols();
  Var<S> qkv_all = qkv(x);
  Var<S> q = rope(slice_cols(qkv_all, 0, d), n_heads, first_position);
  Var<S> k = rope(slice_cols(qkv_all, d, d), n_heads, first_position);
  Var<S> v = slice_cols(qkv_all, 2 * d, d);
  return out(local_attention(q, k, v, n_heads, window, /*causal=*/false));
}

template <typename S>
std::vector<Modulation<S>> AdaLNZero<S>::operator()(const Var<S>& cond) const {
  Var<S> p = proj(silu(cond));
  std::vector<Modulation<S>> mods;
  for (int s = 0; s < n_sites; ++s) {
    const Eigen::Index base = static_cast<Eigen::Index>(3 * s) * dim;
    mods.push_back({slice_cols(p, base, dim), slice_cols(p, base + dim, dim), slice_cols(p, base + 2 * dim, dim)});
  }
  return mods;
}

template <typename S>
AdaLNZero<S> make_adaln_zero(ParamStore<S>& store, const std::string& name, int cond_dim, int dim, int n_sites,
                             Rng& rng) {
  AdaLNZero<S> a;
  a.proj = make_linear(store, name + ".proj", cond_dim, 3 * n_sites * dim, rng, Init::Zeros);
  a.dim = dim;
  a.n_sites = n_sites;
  return a;
}

template <typename S>
Var<S> modulate(const Var<S>& normed, const Modulation<S>& m) {
  return add_row(mul_row(normed, add_scalar(m.scale, S(1))), m.shift);
}

template <typename S>
Var<S> TransformerBlock<S>::operator()(const Var<S>& x, std::int64_t first_position, const Var<S>* cond) const {
  if (adaln) {
    if (!cond) throw std::invalid_argument("conditioned transformer block called without conditioning");
    auto mods = (*adaln)(*cond);
    Var<S> a = attn(modulate(layer_norm(x, S(1e-5)), mods[0]), first_position);
    Var<S> h = add(x, mul_row(a, mods[0].gate));
    Var<S> f = ffn(modulate(layer_norm(h, S(1e-5)), mods[1]));
    return add(h, mul_row(f, mods[1].gate));
  }
  Var<S> h = add(x, attn((*norm1)(x), first_position));
  return add(h, ffn((*norm2)(h)));
}

template <typename S>
Var<S> Transformer<S>::operator()(const Var<S>& x, std::int64_t first_position, const Var<S>* cond) const {
  Var<S> h = x;
  for (const auto& b : blocks) h = b(h, first_position, cond);
  return final_norm(h);
}

template <typename S>
Transformer<S> make_transformer(ParamStore<S>& store, const std::string& name, const TransformerConfig& cfg, Rng& rng,
                                int cond_dim) {
  cfg.validate(name);
  Transformer<S> t;
  t.cfg = cfg;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = name + ".layers." + std::to_string(l);
    TransformerBlock<S> b;
    if (cond_dim <= 0) {
      b.norm1 = make_layer_norm(store, p + ".norm1", cfg.d_model, rng);
      b.norm2 = make_layer_norm(store, p + ".norm2", cfg.d_model, rng);
    }
    b.attn.qkv = make_linear(store, p + ".attn.qkv", cfg.d_model, 3 * cfg.d_model, rng);
    // Conditioned blocks are already identities through their zero gate.
    const Init out_init = cond_dim > 0 ? Init::TruncNormal : Init::Zeros;
    b.attn.out = make_linear(store, p + ".attn.out", cfg.d_model, cfg.d_model, rng, out_init);
    b.attn.n_heads = cfg.n_heads;
    b.attn.window = cfg.window;
    b.ffn = make_swiglu(store, p + ".ffn", cfg.d_model, cfg.d_ffn, rng, out_init);
    if (cond_dim > 0) b.adaln = make_adaln_zero(store, p + ".adaln", cond_dim, cfg.d_model, 2, rng);
    t.blocks.push_back(std::move(b));
  }
  t.final_norm = make_layer_norm(store, name + ".final_norm", cfg.d_model, rng);
  return t;
}

template <typename S>
Conv1d<S> make_conv1d(ParamStore<S>& store, const std::string& name, int cin, int cout, int kernel, int stride,
                      Rng& rng, Init weight_init) {
  Conv1d<S> c;
  c.weight = store.add(name + ".weight", static_cast<Eigen::Index>(kernel) * cin, cout, weight_init, rng);
  c.bias = store.add(name + ".bias", 1, cout, Init::Zeros, rng);
  c.stride = stride;
  return c;
}

template <typename S>
ConvTranspose1d<S> make_conv_transpose1d(ParamStore<S>& store, const std::string& name, int cin, int cout, int kernel,
                                         int stride, Rng& rng) {
  ConvTranspose1d<S> c;
  c.weight = store.add(name + ".weight", cin, static_cast<Eigen::Index>(kernel) * cout, Init::TruncNormal, rng);
  c.bias = store.add(name + ".bias", 1, cout, Init::Zeros, rng);
  c.stride = stride;
  return c;
}

template <typename S>
Var<S> ConvNeXtBlock<S>::operator()(const Var<S>& x) const {
  Var<S> h = depthwise_conv1d(x, dw_weight, dw_bias);
  h = proj(gelu(expand(norm(h))));
  return add(x, h);
}

template <typename S>
ConvNeXtBlock<S> make_convnext_block(ParamStore<S>& store, const std::string& name, int channels, int kernel,
                                     int expansion, Rng& rng) {
  ConvNeXtBlock<S> b;
  b.dw_weight = store.add(name + ".dw.weight", kernel, channels, Init::TruncNormal, rng);
  b.dw_bias = store.add(name + ".dw.bias", 1, channels, Init::Zeros, rng);
  b.norm = make_layer_norm(store, name + ".norm", channels, rng);
  b.expand = make_linear(store, name + ".expand", channels, expansion * channels, rng);
  b.proj = make_linear(store, name + ".proj", expansion * channels, channels, rng, Init::Zeros);
  return b;
}

#define DISCO_INSTANTIATE_NN(S)                                                                                    \
  template class ParamStore<S>;                                                                                    \
  template Linear<S> make_linear(ParamStore<S>&, const std::string&, int, int, Rng&, Init);                        \
  template LayerNormParams<S> make_layer_norm(ParamStore<S>&, const std::string&, int, Rng&);                      \
  template SwiGLU<S> make_swiglu(ParamStore<S>&, const std::string&, int, int, Rng&, Init);                        \
  template struct SelfAttention<S>;                                                                                \
  template struct AdaLNZero<S>;                                                                                    \
  template AdaLNZero<S> make_adaln_zero(ParamStore<S>&, const std::string&, int, int, int, Rng&);                  \
  template Var<S> modulate(const Var<S>&, const Modulation<S>&);                                                   \
  template struct TransformerBlock<S>;                                                                             \
  template struct Transformer<S>;                                                                                  \
  template Transformer<S> make_transformer(ParamStore<S>&, const std::string&, const TransformerConfig&, Rng&, int); \
  template Conv1d<S> make_conv1d(ParamStore<S>&, const std::string&, int, int, int, int, Rng&, Init);              \
  template ConvTranspose1d<S> make_conv_transpose1d(ParamStore<S>&, const std::string&, int, int, int, int, Rng&);  \
  template struct ConvNeXtBlock<S>;                                                                                \
  template ConvNeXtBlock<S> make_convnext_block(ParamStore<S>&, const std::string&, int, int, int, Rng&);

DISCO_INSTANTIATE_NN(float)
DISCO_INSTANTIATE_NN(double)

#undef DISCO_INSTANTIATE_NN

}  // namespace disco
