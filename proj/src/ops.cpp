#include "disco/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace disco {

namespace {
thread_local bool g_surrogate = false;

template <typename S>
using NodeP = std::shared_ptr<Node<S>>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

template <typename S>
void require_same(const Var<S>& a, const Var<S>& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": shape mismatch [" + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
              "] vs [" + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + "]");
}

template <typename S>
void require_row(const Var<S>& x, const Var<S>& row, const char* op) {
  require(row.rows() == 1 && row.cols() == x.cols(), std::string(op) + ": row vector must be [1, " +
                                                         std::to_string(x.cols()) + "]");
}

using detail::make_node;

int conv_left_pad(int k, int stride) { return k > stride ? (k - stride) / 2 : 0; }

}  // namespace

SurrogateScope::SurrogateScope() : previous_(g_surrogate) { g_surrogate = true; }
SurrogateScope::~SurrogateScope() { g_surrogate = previous_; }
bool surrogate_mode() { return g_surrogate; }

// ---------------------------------------------------------------- arithmetic

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  require_same(a, b, "add");
  auto an = a.node(), bn = b.node();
  return make_node<S>("add", a.value() + b.value(), {an, bn}, [an, bn](const Mat<S>& g) {
    an->accumulate(g);
    bn->accumulate(g);
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  require_same(a, b, "sub");
  auto an = a.node(), bn = b.node();
  return make_node<S>("sub", a.value() - b.value(), {an, bn}, [an, bn](const Mat<S>& g) {
    an->accumulate(g);
    if (bn->requires_grad) bn->accumulate(-g);
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  require_same(a, b, "mul");
  auto an = a.node(), bn = b.node();
  Mat<S> y = a.value().cwiseProduct(b.value());
  return make_node<S>("mul", std::move(y), {an, bn}, [an, bn](const Mat<S>& g) {
    if (an->requires_grad) an->accumulate(g.cwiseProduct(bn->value));
    if (bn->requires_grad) bn->accumulate(g.cwiseProduct(an->value));
  });
}

template <typename S>
Var<S> add_row(const Var<S>& x, const Var<S>& row) {
  require_row(x, row, "add_row");
  auto xn = x.node(), rn = row.node();
  Mat<S> y = x.value().rowwise() + row.value().row(0);
  return make_node<S>("add_row", std::move(y), {xn, rn}, [xn, rn](const Mat<S>& g) {
    xn->accumulate(g);
    if (rn->requires_grad) rn->accumulate(g.colwise().sum());
  });
}

template <typename S>
Var<S> mul_row(const Var<S>& x, const Var<S>& row) {
  require_row(x, row, "mul_row");
  auto xn = x.node(), rn = row.node();
  Mat<S> y = x.value().array().rowwise() * row.value().row(0).array();
  return make_node<S>("mul_row", std::move(y), {xn, rn}, [xn, rn](const Mat<S>& g) {
    if (xn->requires_grad) {
      Mat<S> gx = g.array().rowwise() * rn->value.row(0).array();
      xn->accumulate(gx);
    }
    if (rn->requires_grad) rn->accumulate(g.cwiseProduct(xn->value).colwise().sum());
  });
}

template <typename S>
Var<S> scale(const Var<S>& x, S factor) {
  auto xn = x.node();
  return make_node<S>("scale", x.value() * factor, {xn}, [xn, factor](const Mat<S>& g) {
    xn->accumulate(g * factor);
  });
}

template <typename S>
Var<S> add_scalar(const Var<S>& x, S offset) {
  auto xn = x.node();
  Mat<S> y = x.value().array() + offset;
  return make_node<S>("add_scalar", std::move(y), {xn}, [xn](const Mat<S>& g) { xn->accumulate(g); });
}

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                                    std::to_string(b.rows()) + " differ");
  auto an = a.node(), bn = b.node();
  Mat<S> y = a.value() * b.value();
  return make_node<S>("matmul", std::move(y), {an, bn}, [an, bn](const Mat<S>& g) {
    if (an->requires_grad) an->accumulate(g * bn->value.transpose());
    if (bn->requires_grad) bn->accumulate(an->value.transpose() * g);
  });
}

template <typename S>
Var<S> affine(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  require(x.cols() == weight.rows(), "affine: input has " + std::to_string(x.cols()) +
                                         " features but weight expects " + std::to_string(weight.rows()));
  require(bias.rows() == 1 && bias.cols() == weight.cols(), "affine: bias must be [1, out]");
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  Mat<S> y = x.value() * weight.value();
  y.rowwise() += bias.value().row(0);
  return make_node<S>("affine", std::move(y), {xn, wn, bn}, [xn, wn, bn](const Mat<S>& g) {
    if (xn->requires_grad) xn->accumulate(g * wn->value.transpose());
    if (wn->requires_grad) wn->accumulate(xn->value.transpose() * g);
    if (bn->requires_grad) bn->accumulate(g.colwise().sum());
  });
}

// --------------------------------------------------------------- activations

template <typename S>
Var<S> tanh(const Var<S>& x) {
  auto xn = x.node();
  Mat<S> y = x.value().array().tanh();
  Mat<S> d = (S(1) - y.array().square()).matrix();
  return make_node<S>("tanh", std::move(y), {xn}, [xn, d = std::move(d)](const Mat<S>& g) {
    xn->accumulate(g.cwiseProduct(d));
  });
}

template <typename S>
Var<S> sigmoid(const Var<S>& x) {
  auto xn = x.node();
  Mat<S> y = (S(1) / (S(1) + (-x.value().array()).exp())).matrix();
  Mat<S> d = (y.array() * (S(1) - y.array())).matrix();
  return make_node<S>("sigmoid", std::move(y), {xn}, [xn, d = std::move(d)](const Mat<S>& g) {
    xn->accumulate(g.cwiseProduct(d));
  });
}

template <typename S>
Var<S> silu(const Var<S>& x) {
  auto xn = x.node();
  auto sig = (S(1) / (S(1) + (-x.value().array()).exp())).eval();
  Mat<S> y = (x.value().array() * sig).matrix();
  Mat<S> d = (sig * (S(1) + x.value().array() * (S(1) - sig))).matrix();
  return make_node<S>("silu", std::move(y), {xn}, [xn, d = std::move(d)](const Mat<S>& g) {
    xn->accumulate(g.cwiseProduct(d));
  });
}

template <typename S>
Var<S> gelu(const Var<S>& x) {
  auto xn = x.node();
  const S c = S(0.7978845608028654);  // sqrt(2/pi)
  const S a = S(0.044715);
  auto xa = x.value().array();
  auto inner = (c * (xa + a * xa.cube())).eval();
  auto th = inner.tanh().eval();
  Mat<S> y = (S(0.5) * xa * (S(1) + th)).matrix();
  Mat<S> d = (S(0.5) * (S(1) + th) +
              S(0.5) * xa * (S(1) - th.square()) * c * (S(1) + S(3) * a * xa.square()))
                 .matrix();
  return make_node<S>("gelu", std::move(y), {xn}, [xn, d = std::move(d)](const Mat<S>& g) {
    xn->accumulate(g.cwiseProduct(d));
  });
}

template <typename S>
Var<S> leaky_relu(const Var<S>& x, S slope) {
  auto xn = x.node();
  Mat<S> d = (x.value().array() > S(0)).select(Mat<S>::Ones(x.rows(), x.cols()),
                                                 Mat<S>::Constant(x.rows(), x.cols(), slope));
  Mat<S> y = x.value().cwiseProduct(d);
  return make_node<S>("leaky_relu", std::move(y), {xn}, [xn, d = std::move(d)](const Mat<S>& g) {
    xn->accumulate(g.cwiseProduct(d));
  });
}

template <typename S>
Var<S> square(const Var<S>& x) {
  auto xn = x.node();
  Mat<S> y = x.value().array().square();
  return make_node<S>("square", std::move(y), {xn}, [xn](const Mat<S>& g) {
    xn->accumulate(S(2) * g.cwiseProduct(xn->value));
  });
}

// ------------------------------------------------------------- normalization

template <typename S>
Var<S> layer_norm(const Var<S>& x, S eps) {
  require(x.cols() >= 1, "layer_norm: need at least one feature");
  auto xn = x.node();
  Eigen::Matrix<S, Eigen::Dynamic, 1> mu = x.value().rowwise().mean();
  Mat<S> xc = x.value().colwise() - mu;
  Eigen::Matrix<S, Eigen::Dynamic, 1> var = xc.array().square().rowwise().mean();
  Eigen::Matrix<S, Eigen::Dynamic, 1> rstd = (var.array() + eps).rsqrt();
  Mat<S> y = xc.array().colwise() * rstd.array();
  Mat<S> yhat = y;
  return make_node<S>("layer_norm", std::move(y), {xn},
                      [xn, yhat = std::move(yhat), rstd = std::move(rstd)](const Mat<S>& g) {
                        // dx = rstd * (g - mean(g) - yhat * mean(g * yhat))
                        Eigen::Matrix<S, Eigen::Dynamic, 1> gm = g.rowwise().mean();
                        Eigen::Matrix<S, Eigen::Dynamic, 1> gym = g.cwiseProduct(yhat).rowwise().mean();
                        Mat<S> dx = g;
                        dx.colwise() -= gm;
                        dx -= (yhat.array().colwise() * gym.array()).matrix();
                        dx = dx.array().colwise() * rstd.array();
                        xn->accumulate(dx);
                      });
}

template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gain, const Var<S>& bias, S eps) {
  return add_row(mul_row(layer_norm(x, eps), gain), bias);
}

// ---------------------------------------------------------------------- rope

template <typename S>
Var<S> rope(const Var<S>& x, int n_heads, std::span<const std::int64_t> positions, double base) {
  require(n_heads >= 1 && x.cols() % n_heads == 0, "rope: columns not divisible by heads");
  const int dh = static_cast<int>(x.cols()) / n_heads;
  require(dh % 2 == 0, "rope: head dimension must be even, got " + std::to_string(dh));
  require(static_cast<Eigen::Index>(positions.size()) == x.rows(), "rope: one position per row required");
  const Eigen::Index t_len = x.rows();
  const int half = dh / 2;
  Mat<S> cosv(t_len, half), sinv(t_len, half);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::pow(base, -2.0 * i / dh);
      const double ang = static_cast<double>(positions[t]) * freq;
      cosv(t, i) = static_cast<S>(std::cos(ang));
      sinv(t, i) = static_cast<S>(std::sin(ang));
    }
  }
  // Pairs are (2i, 2i+1) within each head.
  auto rotate = [=](const Mat<S>& in, const Mat<S>& c, const Mat<S>& s, bool inverse) {
    Mat<S> out(in.rows(), in.cols());
    for (Eigen::Index t = 0; t < in.rows(); ++t) {
      for (int h = 0; h < n_heads; ++h) {
        const Eigen::Index off = static_cast<Eigen::Index>(h) * dh;
        for (int i = 0; i < half; ++i) {
          const S a = in(t, off + 2 * i), b = in(t, off + 2 * i + 1);
          const S cc = c(t, i), ss = inverse ? -s(t, i) : s(t, i);
          out(t, off + 2 * i) = a * cc - b * ss;
          out(t, off + 2 * i + 1) = a * ss + b * cc;
        }
      }
    }
    return out;
  };
  auto xn = x.node();
  Mat<S> y = rotate(x.value(), cosv, sinv, false);
  return make_node<S>("rope", std::move(y), {xn},
                      [xn, rotate, cosv = std::move(cosv), sinv = std::move(sinv)](const Mat<S>& g) {
                        xn->accumulate(rotate(g, cosv, sinv, true));
                      });
}

template <typename S>
Var<S> rope(const Var<S>& x, int n_heads, std::int64_t first_position, double base) {
  std::vector<std::int64_t> pos(static_cast<std::size_t>(x.rows()));
  std::iota(pos.begin(), pos.end(), first_position);
  return rope(x, n_heads, std::span<const std::int64_t>(pos), base);
}

// ----------------------------------------------------------------- attention

template <typename S>
Var<S> local_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, int n_heads, int window, bool causal,
                       Mat<S>* weights) {
  if (window < 1) throw std::invalid_argument("local_attention: window must be >= 1");
  require_same(q, k, "local_attention(q,k)");
  require_same(q, v, "local_attention(q,v)");
  require(q.rows() >= 1, "local_attention: empty sequence");
  require(n_heads >= 1 && q.cols() % n_heads == 0, "local_attention: columns not divisible by heads");
  const Eigen::Index t_len = q.rows();
  const Eigen::Index width = q.cols();
  const Eigen::Index dh = width / n_heads;
  const Eigen::Index half = (window - 1) / 2;
  const Eigen::Index span = 2 * half + 1;
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));

  std::vector<Eigen::Index> lo(t_len), hi(t_len);
  for (Eigen::Index i = 0; i < t_len; ++i) {
    lo[i] = std::max<Eigen::Index>(0, i - half);
    hi[i] = std::min<Eigen::Index>(t_len - 1, i + half);
    if (causal) hi[i] = i;
  }
  std::vector<S> probs(static_cast<std::size_t>(n_heads * t_len * span), S(0));
  Mat<S> out = Mat<S>::Zero(t_len, width);
  const S* qd = q.value().data();
  const S* kd = k.value().data();
  const S* vd = v.value().data();
  std::vector<S> scores(static_cast<std::size_t>(span));
  for (int h = 0; h < n_heads; ++h) {
    const Eigen::Index off = h * dh;
    for (Eigen::Index i = 0; i < t_len; ++i) {
      const S* qi = qd + i * width + off;
      S mx = -std::numeric_limits<S>::infinity();
      const Eigen::Index n = hi[i] - lo[i] + 1;
      for (Eigen::Index jj = 0; jj < n; ++jj) {
        const S* kj = kd + (lo[i] + jj) * width + off;
        S dot = 0;
        for (Eigen::Index c = 0; c < dh; ++c) dot += qi[c] * kj[c];
        scores[jj] = dot * inv_sqrt;
        mx = std::max(mx, scores[jj]);
      }
      S z = 0;
      for (Eigen::Index jj = 0; jj < n; ++jj) {
        scores[jj] = std::exp(scores[jj] - mx);
        z += scores[jj];
      }
      S* pi = probs.data() + (h * t_len + i) * span;
      S* oi = out.data() + i * width + off;
      for (Eigen::Index jj = 0; jj < n; ++jj) {
        const S p = scores[jj] / z;
        pi[jj] = p;
        const S* vj = vd + (lo[i] + jj) * width + off;
        for (Eigen::Index c = 0; c < dh; ++c) oi[c] += p * vj[c];
      }
    }
  }
  if (weights) {
    weights->setZero(n_heads * t_len, t_len);
    for (int h = 0; h < n_heads; ++h)
      for (Eigen::Index i = 0; i < t_len; ++i)
        for (Eigen::Index j = lo[i]; j <= hi[i]; ++j)
          (*weights)(h * t_len + i, j) = probs[(h * t_len + i) * span + (j - lo[i])];
  }
  auto qn = q.node(), kn = k.node(), vn = v.node();
  return make_node<S>(
      "local_attention", std::move(out), {qn, kn, vn},
      [qn, kn, vn, n_heads, t_len, width, dh, span, inv_sqrt, lo = std::move(lo), hi = std::move(hi),
       probs = std::move(probs)](const Mat<S>& g) {
        Mat<S> dq = Mat<S>::Zero(t_len, width), dk = Mat<S>::Zero(t_len, width), dv = Mat<S>::Zero(t_len, width);
        const S* qd = qn->value.data();
        const S* kd = kn->value.data();
        const S* vd = vn->value.data();
        std::vector<S> dp(static_cast<std::size_t>(span));
        for (int h = 0; h < n_heads; ++h) {
          const Eigen::Index off = h * dh;
          for (Eigen::Index i = 0; i < t_len; ++i) {
            const S* pi = probs.data() + (h * t_len + i) * span;
            const S* gi = g.data() + i * width + off;
            const Eigen::Index n = hi[i] - lo[i] + 1;
            S pdp = 0;
            for (Eigen::Index jj = 0; jj < n; ++jj) {
              const Eigen::Index j = lo[i] + jj;
              const S* vj = vd + j * width + off;
              S* dvj = dv.data() + j * width + off;
              S dot = 0;
              for (Eigen::Index c = 0; c < dh; ++c) {
                dot += gi[c] * vj[c];
                dvj[c] += pi[jj] * gi[c];
              }
              dp[jj] = dot;
              pdp += pi[jj] * dot;
            }
            const S* qi = qd + i * width + off;
            S* dqi = dq.data() + i * width + off;
            for (Eigen::Index jj = 0; jj < n; ++jj) {
              const Eigen::Index j = lo[i] + jj;
              const S ds = pi[jj] * (dp[jj] - pdp) * inv_sqrt;
              const S* kj = kd + j * width + off;
              S* dkj = dk.data() + j * width + off;
              for (Eigen::Index c = 0; c < dh; ++c) {
                dqi[c] += ds * kj[c];
                dkj[c] += ds * qi[c];
              }
            }
          }
        }
        qn->accumulate(dq);
        kn->accumulate(dk);
        vn->accumulate(dv);
      });
}

// ------------------------------------------------------------- convolutions

template <typename S>
Var<S> conv1d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride, Padding padding) {
  require(stride >= 1, "conv1d: stride must be >= 1");
  const Eigen::Index cin = x.cols();
  require(cin >= 1 && weight.rows() % cin == 0, "conv1d: weight rows must be k * Cin");
  const int k = static_cast<int>(weight.rows() / cin);
  require(k >= 1, "conv1d: kernel size must be >= 1");
  const Eigen::Index cout = weight.cols();
  require(bias.rows() == 1 && bias.cols() == cout, "conv1d: bias must be [1, Cout]");
  const Eigen::Index t_in = x.rows();
  Eigen::Index t_out;
  int pad_left;
  if (padding == Padding::Same) {
    t_out = (t_in + stride - 1) / stride;
    pad_left = conv_left_pad(k, stride);
  } else {
    if (k > t_in)
      throw ShapeError("conv1d: kernel " + std::to_string(k) + " longer than input " + std::to_string(t_in));
    t_out = (t_in - k) / stride + 1;
    pad_left = 0;
  }
  Mat<S> cols = Mat<S>::Zero(t_out, k * cin);
  for (Eigen::Index t = 0; t < t_out; ++t) {
    for (int kk = 0; kk < k; ++kk) {
      const Eigen::Index src = t * stride - pad_left + kk;
      if (src < 0 || src >= t_in) continue;
      cols.row(t).segment(kk * cin, cin) = x.value().row(src);
    }
  }
  Mat<S> y = cols * weight.value();
  y.rowwise() += bias.value().row(0);
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return make_node<S>("conv1d", std::move(y), {xn, wn, bn},
                      [xn, wn, bn, cols = std::move(cols), k, cin, stride, pad_left, t_in](const Mat<S>& g) {
                        if (wn->requires_grad) wn->accumulate(cols.transpose() * g);
                        if (bn->requires_grad) bn->accumulate(g.colwise().sum());
                        if (xn->requires_grad) {
                          Mat<S> dcols = g * wn->value.transpose();
                          Mat<S> dx = Mat<S>::Zero(t_in, cin);
                          for (Eigen::Index t = 0; t < dcols.rows(); ++t)
                            for (int kk = 0; kk < k; ++kk) {
                              const Eigen::Index src = t * stride - pad_left + kk;
                              if (src < 0 || src >= t_in) continue;
                              dx.row(src) += dcols.row(t).segment(kk * cin, cin);
                            }
                          xn->accumulate(dx);
                        }
                      });
}

template <typename S>
Var<S> conv_transpose1d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride) {
  require(stride >= 1, "conv_transpose1d: stride must be >= 1");
  const Eigen::Index cin = x.cols();
  require(weight.rows() == cin, "conv_transpose1d: weight rows must equal Cin");
  const Eigen::Index cout = bias.cols();
  require(bias.rows() == 1 && cout >= 1 && weight.cols() % cout == 0, "conv_transpose1d: weight cols must be k * Cout");
  const int k = static_cast<int>(weight.cols() / cout);
  const Eigen::Index t_in = x.rows();
  const Eigen::Index t_out = t_in * stride;
  const int crop = conv_left_pad(k, stride);
  Mat<S> z = x.value() * weight.value();  // [T, k*Cout]
  Mat<S> y = Mat<S>::Zero(t_out, cout);
  for (Eigen::Index t = 0; t < t_in; ++t)
    for (int kk = 0; kk < k; ++kk) {
      const Eigen::Index dst = t * stride + kk - crop;
      if (dst < 0 || dst >= t_out) continue;
      y.row(dst) += z.row(t).segment(kk * cout, cout);
    }
  y.rowwise() += bias.value().row(0);
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return make_node<S>("conv_transpose1d", std::move(y), {xn, wn, bn},
                      [xn, wn, bn, k, cout, stride, crop, t_in, t_out](const Mat<S>& g) {
                        Mat<S> dz = Mat<S>::Zero(t_in, k * cout);
                        for (Eigen::Index t = 0; t < t_in; ++t)
                          for (int kk = 0; kk < k; ++kk) {
                            const Eigen::Index dst = t * stride + kk - crop;
                            if (dst < 0 || dst >= t_out) continue;
                            dz.row(t).segment(kk * cout, cout) = g.row(dst);
                          }
                        if (bn->requires_grad) bn->accumulate(g.colwise().sum());
                        if (wn->requires_grad) wn->accumulate(xn->value.transpose() * dz);
                        if (xn->requires_grad) xn->accumulate(dz * wn->value.transpose());
                      });
}

template <typename S>
Var<S> depthwise_conv1d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  const Eigen::Index c = x.cols();
  require(weight.cols() == c && bias.cols() == c && bias.rows() == 1, "depthwise_conv1d: channel mismatch");
  const int k = static_cast<int>(weight.rows());
  require(k >= 1, "depthwise_conv1d: empty kernel");
  const int pad = conv_left_pad(k, 1);
  const Eigen::Index t_len = x.rows();
  Mat<S> y(t_len, c);
  y.rowwise() = bias.value().row(0);
  for (Eigen::Index t = 0; t < t_len; ++t)
    for (int kk = 0; kk < k; ++kk) {
      const Eigen::Index src = t - pad + kk;
      if (src < 0 || src >= t_len) continue;
      y.row(t).array() += x.value().row(src).array() * weight.value().row(kk).array();
    }
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return make_node<S>("depthwise_conv1d", std::move(y), {xn, wn, bn}, [xn, wn, bn, k, pad, t_len, c](const Mat<S>& g) {
    Mat<S> dx = Mat<S>::Zero(t_len, c), dw = Mat<S>::Zero(k, c);
    for (Eigen::Index t = 0; t < t_len; ++t)
      for (int kk = 0; kk < k; ++kk) {
        const Eigen::Index src = t - pad + kk;
        if (src < 0 || src >= t_len) continue;
        dx.row(src).array() += g.row(t).array() * wn->value.row(kk).array();
        dw.row(kk).array() += g.row(t).array() * xn->value.row(src).array();
      }
    xn->accumulate(dx);
    wn->accumulate(dw);
    if (bn->requires_grad) bn->accumulate(g.colwise().sum());
  });
}

template <typename S>
Var<S> conv2d(const Var<S>& x, int height, int width, const Var<S>& weight, const Var<S>& bias, int kh, int kw) {
  const Eigen::Index cin = x.cols();
  require(x.rows() == static_cast<Eigen::Index>(height) * width, "conv2d: rows must equal height*width");
  require(weight.rows() == static_cast<Eigen::Index>(kh) * kw * cin, "conv2d: weight rows must be kh*kw*Cin");
  const Eigen::Index cout = weight.cols();
  require(bias.rows() == 1 && bias.cols() == cout, "conv2d: bias must be [1, Cout]");
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  const Eigen::Index n = x.rows();
  Mat<S> cols = Mat<S>::Zero(n, kh * kw * cin);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const Eigen::Index row = static_cast<Eigen::Index>(r) * width + c;
      for (int a = 0; a < kh; ++a) {
        const int rr = r - ph + a;
        if (rr < 0 || rr >= height) continue;
        for (int b = 0; b < kw; ++b) {
          const int cc = c - pw + b;
          if (cc < 0 || cc >= width) continue;
          cols.row(row).segment((a * kw + b) * cin, cin) = x.value().row(static_cast<Eigen::Index>(rr) * width + cc);
        }
      }
    }
  Mat<S> y = cols * weight.value();
  y.rowwise() += bias.value().row(0);
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return make_node<S>("conv2d", std::move(y), {xn, wn, bn},
                      [xn, wn, bn, cols = std::move(cols), height, width, kh, kw, ph, pw, cin, n](const Mat<S>& g) {
                        if (wn->requires_grad) wn->accumulate(cols.transpose() * g);
                        if (bn->requires_grad) bn->accumulate(g.colwise().sum());
                        if (!xn->requires_grad) return;
                        Mat<S> dcols = g * wn->value.transpose();
                        Mat<S> dx = Mat<S>::Zero(n, cin);
                        for (int r = 0; r < height; ++r)
                          for (int c = 0; c < width; ++c) {
                            const Eigen::Index row = static_cast<Eigen::Index>(r) * width + c;
                            for (int a = 0; a < kh; ++a) {
                              const int rr = r - ph + a;
                              if (rr < 0 || rr >= height) continue;
                              for (int b = 0; b < kw; ++b) {
                                const int cc = c - pw + b;
                                if (cc < 0 || cc >= width) continue;
                                dx.row(static_cast<Eigen::Index>(rr) * width + cc) +=
                                    dcols.row(row).segment((a * kw + b) * cin, cin);
                              }
                            }
                          }
                        xn->accumulate(dx);
                      });
}

// ------------------------------------------------------------ shape plumbing

template <typename S>
Var<S> slice_cols(const Var<S>& x, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.cols(), "slice_cols: out of range");
  auto xn = x.node();
  Mat<S> y = x.value().middleCols(start, count);
  return make_node<S>("slice_cols", std::move(y), {xn}, [xn, start, count](const Mat<S>& g) {
    Mat<S> dx = Mat<S>::Zero(xn->value.rows(), xn->value.cols());
    dx.middleCols(start, count) = g;
    xn->accumulate(dx);
  });
}

template <typename S>
Var<S> slice_rows(const Var<S>& x, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.rows(), "slice_rows: out of range");
  auto xn = x.node();
  Mat<S> y = x.value().middleRows(start, count);
  return make_node<S>("slice_rows", std::move(y), {xn}, [xn, start, count](const Mat<S>& g) {
    Mat<S> dx = Mat<S>::Zero(xn->value.rows(), xn->value.cols());
    dx.middleRows(start, count) = g;
    xn->accumulate(dx);
  });
}

template <typename S>
Var<S> reshape(const Var<S>& x, Eigen::Index rows, Eigen::Index cols) {
  require(rows >= 0 && cols >= 0 && rows * cols == x.value().size(), "reshape: element count changes");
  auto xn = x.node();
  Mat<S> y = Eigen::Map<const Mat<S>>(x.value().data(), rows, cols);
  return make_node<S>("reshape", std::move(y), {xn}, [xn](const Mat<S>& g) {
    xn->accumulate(Eigen::Map<const Mat<S>>(g.data(), xn->value.rows(), xn->value.cols()));
  });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    require(p.rows() == parts[0].rows(), "concat_cols: row mismatch");
    total += p.cols();
  }
  Mat<S> y(parts[0].rows(), total);
  std::vector<NodeP<S>> nodes;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    y.middleCols(off, p.cols()) = p.value();
    nodes.push_back(p.node());
    offsets.push_back(off);
    off += p.cols();
  }
  auto parents = nodes;
  return make_node<S>("concat_cols", std::move(y), std::move(parents), [nodes, offsets](const Mat<S>& g) {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i]->requires_grad) nodes[i]->accumulate(g.middleCols(offsets[i], nodes[i]->value.cols()));
  });
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    require(p.cols() == parts[0].cols(), "concat_rows: column mismatch");
    total += p.rows();
  }
  Mat<S> y(total, parts[0].cols());
  std::vector<NodeP<S>> nodes;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    y.middleRows(off, p.rows()) = p.value();
    nodes.push_back(p.node());
    offsets.push_back(off);
    off += p.rows();
  }
  auto parents = nodes;
  return make_node<S>("concat_rows", std::move(y), std::move(parents), [nodes, offsets](const Mat<S>& g) {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i]->requires_grad) nodes[i]->accumulate(g.middleRows(offsets[i], nodes[i]->value.rows()));
  });
}

template <typename S>
Var<S> mean_rows(const Var<S>& x) {
  require(x.rows() >= 1, "mean_rows: empty input");
  auto xn = x.node();
  Mat<S> y = x.value().colwise().mean();
  return make_node<S>("mean_rows", std::move(y), {xn}, [xn](const Mat<S>& g) {
    const Eigen::Index t = xn->value.rows();
    Mat<S> dx = g.replicate(t, 1) / static_cast<S>(t);
    xn->accumulate(dx);
  });
}

template <typename S>
Var<S> broadcast_rows(const Var<S>& row, Eigen::Index rows) {
  require(row.rows() == 1, "broadcast_rows: expects a row vector");
  auto rn = row.node();
  Mat<S> y = row.value().replicate(rows, 1);
  return make_node<S>("broadcast_rows", std::move(y), {rn},
                      [rn](const Mat<S>& g) { rn->accumulate(g.colwise().sum()); });
}

template <typename S>
Var<S> softmax_time(const Var<S>& x) {
  require(x.rows() >= 1, "softmax_time: empty input");
  auto xn = x.node();
  RowVec<S> mx = x.value().colwise().maxCoeff();
  Mat<S> e = (x.value().rowwise() - mx).array().exp();
  RowVec<S> z = e.colwise().sum();
  Mat<S> p = e.array().rowwise() / z.array();
  Mat<S> pc = p;
  return make_node<S>("softmax_time", std::move(p), {xn}, [xn, pc = std::move(pc)](const Mat<S>& g) {
    RowVec<S> dot = g.cwiseProduct(pc).colwise().sum();
    Mat<S> dx = pc.array() * (g.rowwise() - dot).array();
    xn->accumulate(dx);
  });
}

template <typename S>
Var<S> resample_linear(const Var<S>& x, Eigen::Index out_rows) {
  require(x.rows() >= 1 && out_rows >= 1, "resample_linear: empty input or output");
  const Eigen::Index t_in = x.rows();
  std::vector<Eigen::Index> i0(out_rows), i1(out_rows);
  std::vector<S> frac(out_rows);
  const double ratio = static_cast<double>(t_in) / static_cast<double>(out_rows);
  for (Eigen::Index u = 0; u < out_rows; ++u) {
    double p = (u + 0.5) * ratio - 0.5;
    p = std::clamp(p, 0.0, static_cast<double>(t_in - 1));
    const auto a = static_cast<Eigen::Index>(std::floor(p));
    i0[u] = a;
    i1[u] = std::min(a + 1, t_in - 1);
    frac[u] = static_cast<S>(p - static_cast<double>(a));
  }
  Mat<S> y(out_rows, x.cols());
  for (Eigen::Index u = 0; u < out_rows; ++u)
    y.row(u) = (S(1) - frac[u]) * x.value().row(i0[u]) + frac[u] * x.value().row(i1[u]);
  auto xn = x.node();
  return make_node<S>("resample_linear", std::move(y), {xn}, [xn, i0, i1, frac](const Mat<S>& g) {
    Mat<S> dx = Mat<S>::Zero(xn->value.rows(), xn->value.cols());
    for (std::size_t u = 0; u < i0.size(); ++u) {
      const auto r = static_cast<Eigen::Index>(u);
      dx.row(i0[u]) += (S(1) - frac[u]) * g.row(r);
      dx.row(i1[u]) += frac[u] * g.row(r);
    }
    xn->accumulate(dx);
  });
}

// ---------------------------------------------------------------- reductions

template <typename S>
Var<S> sum(const Var<S>& x) {
  auto xn = x.node();
  Mat<S> y(1, 1);
  y(0, 0) = x.value().sum();
  return make_node<S>("sum", std::move(y), {xn}, [xn](const Mat<S>& g) {
    xn->accumulate(Mat<S>::Constant(xn->value.rows(), xn->value.cols(), g(0, 0)));
  });
}

template <typename S>
Var<S> mean(const Var<S>& x) {
  require(x.value().size() > 0, "mean: empty input");
  return scale(sum(x), S(1) / static_cast<S>(x.value().size()));
}

template <typename S>
Var<S> l1_loss(const Var<S>& a, const Var<S>& b) {
  require_same(a, b, "l1_loss");
  require(a.value().size() > 0, "l1_loss: empty input");
  auto an = a.node(), bn = b.node();
  Mat<S> diff = a.value() - b.value();
  const S n = static_cast<S>(diff.size());
  Mat<S> y(1, 1);
  y(0, 0) = diff.cwiseAbs().sum() / n;
  Mat<S> sgn = diff.unaryExpr([](S v) { return v > 0 ? S(1) : (v < 0 ? S(-1) : S(0)); }) / n;
  return make_node<S>("l1_loss", std::move(y), {an, bn}, [an, bn, sgn = std::move(sgn)](const Mat<S>& g) {
    if (an->requires_grad) an->accumulate(sgn * g(0, 0));
    if (bn->requires_grad) bn->accumulate(-sgn * g(0, 0));
  });
}

template <typename S>
Var<S> mse_loss(const Var<S>& a, const Var<S>& b) {
  require_same(a, b, "mse_loss");
  require(a.value().size() > 0, "mse_loss: empty input");
  auto an = a.node(), bn = b.node();
  Mat<S> diff = a.value() - b.value();
  const S n = static_cast<S>(diff.size());
  Mat<S> y(1, 1);
  y(0, 0) = diff.squaredNorm() / n;
  Mat<S> d = diff * (S(2) / n);
  return make_node<S>("mse_loss", std::move(y), {an, bn}, [an, bn, d = std::move(d)](const Mat<S>& g) {
    if (an->requires_grad) an->accumulate(d * g(0, 0));
    if (bn->requires_grad) bn->accumulate(-d * g(0, 0));
  });
}

template <typename S>
Var<S> weighted_stats(const Var<S>& x, const Var<S>& w, S eps) {
  require_same(x, w, "weighted_stats");
  require(x.rows() >= 1, "weighted_stats: empty input");
  const Eigen::Index c = x.cols();
  RowVec<S> mu = x.value().cwiseProduct(w.value()).colwise().sum();
  Mat<S> xc = x.value().rowwise() - mu;
  RowVec<S> var = xc.array().square().cwiseProduct(w.value().array()).colwise().sum();
  var = var.cwiseMax(S(0));
  RowVec<S> root = (var.array() + eps).sqrt();
  const S root_eps = std::sqrt(eps);
  Mat<S> y(1, 2 * c);
  y.leftCols(c) = mu;
  y.rightCols(c) = (root.array() - root_eps).matrix();
  // S_c = sum_t w (x - mu), zero when the weights sum to one.
  RowVec<S> s_term = xc.cwiseProduct(w.value()).colwise().sum();
  auto xn = x.node(), wn = w.node();
  return make_node<S>("weighted_stats", std::move(y), {xn, wn},
                      [xn, wn, c, xc = std::move(xc), root = std::move(root), s_term = std::move(s_term)](
                          const Mat<S>& g) {
                        RowVec<S> dmu = g.leftCols(c);
                        RowVec<S> dvar = (g.rightCols(c).array() / (S(2) * root.array())).matrix();
                        const Mat<S>& wv = wn->value;
                        const Mat<S>& xv = xn->value;
                        if (xn->requires_grad) {
                          Mat<S> dx = wv.array().rowwise() * dmu.array();
                          Mat<S> inner = S(2) * (xc.array().rowwise() - s_term.array());
                          dx += ((wv.array() * inner.array()).rowwise() * dvar.array()).matrix();
                          xn->accumulate(dx);
                        }
                        if (wn->requires_grad) {
                          Mat<S> dw = xv.array().rowwise() * dmu.array();
                          Mat<S> inner = xc.array().square() - S(2) * (xv.array().rowwise() * s_term.array());
                          dw += (inner.array().rowwise() * dvar.array()).matrix();
                          wn->accumulate(dw);
                        }
                      });
}

// --------------------------------------------------------------- quantizers

template <typename S>
Var<S> fsq_bound(const Var<S>& x, std::span<const int> levels) {
  require(static_cast<Eigen::Index>(levels.size()) == x.cols(), "fsq_bound: one level count per column");
  RowVec<S> half(x.cols());
  for (std::size_t i = 0; i < levels.size(); ++i) half[static_cast<Eigen::Index>(i)] = S(levels[i] - 1) / S(2);
  Mat<S> th = x.value().array().tanh();
  Mat<S> y = th.array().rowwise() * half.array();
  Mat<S> d = (S(1) - th.array().square()).rowwise() * half.array();
  auto xn = x.node();
  return make_node<S>("fsq_bound", std::move(y), {xn}, [xn, d = std::move(d)](const Mat<S>& g) {
    xn->accumulate(g.cwiseProduct(d));
  });
}

template <typename S>
Var<S> fsq_ste(const Var<S>& x, std::span<const int> levels) {
  require(static_cast<Eigen::Index>(levels.size()) == x.cols(), "fsq_ste: one level count per column");
  Mat<S> th = x.value().array().tanh();
  Mat<S> y(x.rows(), x.cols());
  if (surrogate_mode()) {
    y = th;
  } else {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const S half = S(levels[static_cast<std::size_t>(c)] - 1) / S(2);
      const S top = S(levels[static_cast<std::size_t>(c)] - 1);
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const S code = std::clamp(std::round(half * th(r, c) + half), S(0), top);
        y(r, c) = (code - half) / half;
      }
    }
  }
  Mat<S> d = S(1) - th.array().square();
  auto xn = x.node();
  return make_node<S>("fsq_ste", std::move(y), {xn}, [xn, d = std::move(d)](const Mat<S>& g) {
    xn->accumulate(g.cwiseProduct(d));
  });
}

template <typename S>
Var<S> straight_through(const Var<S>& x, const Mat<S>& quantized) {
  require(quantized.rows() == x.rows() && quantized.cols() == x.cols(), "straight_through: shape mismatch");
  auto xn = x.node();
  Mat<S> y = surrogate_mode() ? x.value() : quantized;
  return make_node<S>("straight_through", std::move(y), {xn}, [xn](const Mat<S>& g) { xn->accumulate(g); });
}

template <typename S>
Var<S> hard_round(const Var<S>& x) {
  auto xn = x.node();
  Mat<S> y = x.value().array().round();
  return make_node<S>("hard_round", std::move(y), {xn}, [](const Mat<S>&) {}, /*differentiable=*/false);
}

template <typename S>
Var<S> detach(const Var<S>& x) {
  return Var<S>::constant(x.value());
}

// ---------------------------------------------------- explicit instantiation

#define DISCO_INSTANTIATE_OPS(S)                                                                             \
  template Var<S> add(const Var<S>&, const Var<S>&);                                                         \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                                         \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                                         \
  template Var<S> add_row(const Var<S>&, const Var<S>&);                                                     \
  template Var<S> mul_row(const Var<S>&, const Var<S>&);                                                     \
  template Var<S> scale(const Var<S>&, S);                                                                   \
  template Var<S> add_scalar(const Var<S>&, S);                                                              \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                                      \
  template Var<S> affine(const Var<S>&, const Var<S>&, const Var<S>&);                                       \
  template Var<S> tanh(const Var<S>&);                                                                       \
  template Var<S> sigmoid(const Var<S>&);                                                                    \
  template Var<S> silu(const Var<S>&);                                                                       \
  template Var<S> gelu(const Var<S>&);                                                                       \
  template Var<S> leaky_relu(const Var<S>&, S);                                                              \
  template Var<S> square(const Var<S>&);                                                                     \
  template Var<S> layer_norm(const Var<S>&, S);                                                              \
  template Var<S> layer_norm(const Var<S>&, const Var<S>&, const Var<S>&, S);                                \
  template Var<S> rope(const Var<S>&, int, std::span<const std::int64_t>, double);                           \
  template Var<S> rope(const Var<S>&, int, std::int64_t, double);                                            \
  template Var<S> local_attention(const Var<S>&, const Var<S>&, const Var<S>&, int, int, bool, Mat<S>*);      \
  template Var<S> conv1d(const Var<S>&, const Var<S>&, const Var<S>&, int, Padding);                         \
  template Var<S> conv_transpose1d(const Var<S>&, const Var<S>&, const Var<S>&, int);                        \
  template Var<S> depthwise_conv1d(const Var<S>&, const Var<S>&, const Var<S>&);                             \
  template Var<S> conv2d(const Var<S>&, int, int, const Var<S>&, const Var<S>&, int, int);                   \
  template Var<S> slice_cols(const Var<S>&, Eigen::Index, Eigen::Index);                                     \
  template Var<S> slice_rows(const Var<S>&, Eigen::Index, Eigen::Index);                                     \
  template Var<S> reshape(const Var<S>&, Eigen::Index, Eigen::Index);                                        \
  template Var<S> concat_cols(const std::vector<Var<S>>&);                                                   \
  template Var<S> concat_rows(const std::vector<Var<S>>&);                                                   \
  template Var<S> mean_rows(const Var<S>&);                                                                  \
  template Var<S> broadcast_rows(const Var<S>&, Eigen::Index);                                               \
  template Var<S> softmax_time(const Var<S>&);                                                               \
  template Var<S> resample_linear(const Var<S>&, Eigen::Index);                                              \
  template Var<S> sum(const Var<S>&);                                                                        \
  template Var<S> mean(const Var<S>&);                                                                       \
  template Var<S> l1_loss(const Var<S>&, const Var<S>&);                                                     \
  template Var<S> mse_loss(const Var<S>&, const Var<S>&);                                                    \
  template Var<S> weighted_stats(const Var<S>&, const Var<S>&, S);                                           \
  template Var<S> fsq_bound(const Var<S>&, std::span<const int>);                                            \
  template Var<S> fsq_ste(const Var<S>&, std::span<const int>);                                              \
  template Var<S> straight_through(const Var<S>&, const Mat<S>&);                                            \
  template Var<S> hard_round(const Var<S>&);                                                                 \
  template Var<S> detach(const Var<S>&);

DISCO_INSTANTIATE_OPS(float)
DISCO_INSTANTIATE_OPS(double)

#undef DISCO_INSTANTIATE_OPS

}  // namespace disco
