#include "disco/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace disco {

namespace {

double plogp_sum(const Eigen::Ref<const Eigen::VectorXd>& counts, double total) {
  double h = 0;
  for (Eigen::Index i = 0; i < counts.size(); ++i)
    if (counts[i] > 0) {
      const double p = counts[i] / total;
      h -= p * std::log(p);
    }
  return h;
}

double frame_cosine(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double dtw_distance(const MatD& p, const MatD& q) {
  const Eigen::Index n = p.rows(), m = q.rows();
  Eigen::VectorXd pn = p.rowwise().norm(), qn = q.rowwise().norm();
  MatD sim = p * q.transpose();
  // Accumulated cost and the length of the path that achieved it.
  MatD acc(n, m);
  Eigen::MatrixXi len(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const double den = pn[i] * qn[j];
      const double c = 1.0 - (den > 0 ? std::clamp(sim(i, j) / den, -1.0, 1.0) : 0.0);
      if (i == 0 && j == 0) {
        acc(i, j) = c;
        len(i, j) = 1;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      int best_len = 0;
      auto consider = [&](Eigen::Index a, Eigen::Index b) {
        if (acc(a, b) < best || (acc(a, b) == best && len(a, b) > best_len)) {
          best = acc(a, b);
          best_len = len(a, b);
        }
      };
      if (i > 0 && j > 0) consider(i - 1, j - 1);
      if (i > 0) consider(i - 1, j);
      if (j > 0) consider(i, j - 1);
      acc(i, j) = best + c;
      len(i, j) = best_len + 1;
    }
  return acc(n - 1, m - 1) / len(n - 1, m - 1);
}

double quantile(std::vector<double>& sorted, double q) {
  const double pos = q * double(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - double(lo)) * (sorted[hi] - sorted[lo]);
}

double median_of(std::vector<double>& v) {
  const std::size_t h = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h), v.end());
  const double upper = v[h];
  if (v.size() % 2) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h));
  return 0.5 * (lower + upper);
}

}  // namespace

JointCounts joint_counts(std::span<const int> row_labels, std::span<const std::int64_t> col_labels, int n_rows,
                         std::int64_t n_cols) {
  if (row_labels.size() != col_labels.size()) throw std::invalid_argument("joint_counts: label streams differ in length");
  JointCounts jc{CountMatrix::Zero(n_rows, n_cols)};
  for (std::size_t i = 0; i < row_labels.size(); ++i) {
    if (row_labels[i] < 0 || row_labels[i] >= n_rows || col_labels[i] < 0 || col_labels[i] >= n_cols)
      throw std::out_of_range("joint_counts: label out of range at position " + std::to_string(i));
    ++jc.counts(row_labels[i], col_labels[i]);
  }
  return jc;
}

std::vector<std::int64_t> token_histogram(std::span<const std::int64_t> tokens, std::int64_t n) {
  std::vector<std::int64_t> h(static_cast<std::size_t>(n), 0);
  for (auto t : tokens) {
    if (t < 0 || t >= n) throw std::out_of_range("token_histogram: token " + std::to_string(t) + " out of range");
    ++h[static_cast<std::size_t>(t)];
  }
  return h;
}

double normalized_entropy(std::span<const std::int64_t> histogram, std::int64_t n) {
  if (n < 2) throw std::invalid_argument("normalized_entropy: codebook size must be >= 2");
  // Equal counts are grouped so that a uniform histogram gives exactly log n.
  std::map<std::int64_t, std::int64_t> multiplicity;
  std::int64_t total = 0;
  for (auto c : histogram) {
    if (c < 0) throw std::invalid_argument("normalized_entropy: negative count");
    total += c;
    if (c > 0) ++multiplicity[c];
  }
  if (total <= 0) throw std::invalid_argument("normalized_entropy: empty histogram");
  double h = 0;
  for (const auto& [c, m] : multiplicity) h += double(m * c) / double(total) * std::log(double(total) / double(c));
  return h / std::log(double(n));
}

InformationStats information(const JointCounts& jc) {
  if ((jc.counts.array() < 0).any()) throw std::invalid_argument("information: negative count");
  const double total = double(jc.total());
  if (total <= 0) throw std::invalid_argument("information: empty count table");
  const MatD c = jc.counts.cast<double>();
  const Eigen::VectorXd rows = c.rowwise().sum();
  const Eigen::VectorXd cols = c.colwise().sum().transpose();
  InformationStats s;
  s.h_rows = plogp_sum(rows, total);
  s.h_cols = plogp_sum(cols, total);
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    for (Eigen::Index j = 0; j < c.cols(); ++j)
      if (c(i, j) > 0) s.mi += c(i, j) / total * std::log(c(i, j) * total / (rows[i] * cols[j]));
  s.mi = std::max(s.mi, 0.0);
  return s;
}

double pnmi(const JointCounts& jc) {
  const InformationStats s = information(jc);
  if (s.h_rows <= 0) throw std::invalid_argument("pnmi: phone labels have zero entropy");
  return std::min(s.pnmi(), 1.0);
}

double nmi(const JointCounts& jc) {
  const InformationStats s = information(jc);
  if (s.h_rows + s.h_cols <= 0) return 0.0;
  return std::min(s.nmi(), 1.0);
}

double sequence_distance(const MatD& p, const MatD& q, AbxDistance kind) {
  if (p.rows() == 0 || q.rows() == 0) throw std::invalid_argument("abx: empty sequence");
  if (p.cols() != q.cols()) throw ShapeError("abx: sequences differ in feature dimension");
  if (kind == AbxDistance::FrameMean) return 1.0 - frame_cosine(p.colwise().mean(), q.colwise().mean());
  return dtw_distance(p, q);
}

double abx_error(std::span<const AbxTriple> triples, AbxDistance kind, int threads) {
  if (triples.empty()) throw std::invalid_argument("abx: no triples");
  std::vector<double> err(triples.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < triples.size(); i += stride) {
      const auto& t = triples[i];
      const double da = sequence_distance(t.x, t.a, kind), db = sequence_distance(t.x, t.b, kind);
      err[i] = da > db ? 1.0 : (da == db ? 0.5 : 0.0);
    }
  };
  std::size_t n = threads > 0 ? std::size_t(threads) : std::max(1u, std::thread::hardware_concurrency());
  n = std::min(n, triples.size());
  if (n <= 1) {
    work(0, 1);
  } else {
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n; ++w)
      pool.emplace_back([&, w] {
        try {
          work(w, n);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  double sum = 0;
  for (double e : err) sum += e;  // fixed order keeps the result independent of scheduling
  return sum / double(triples.size());
}

std::vector<AbxTriple> synthetic_abx_triples(int n, int dims, int len, double separation, std::uint64_t seed) {
  if (n < 0 || dims < 1 || len < 2) throw std::invalid_argument("synthetic_abx_triples: bad shape");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> length(len / 2, len);
  std::vector<AbxTriple> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    // Fresh pair of category prototypes per triple.
    Eigen::RowVectorXd base(dims), dir(dims);
    for (int d = 0; d < dims; ++d) base[d] = g(rng);
    for (int d = 0; d < dims; ++d) dir[d] = g(rng);
    dir.normalize();
    const Eigen::RowVectorXd pa = base + 0.5 * separation * dir * std::sqrt(double(dims));
    const Eigen::RowVectorXd pb = base - 0.5 * separation * dir * std::sqrt(double(dims));
    auto seq = [&](const Eigen::RowVectorXd& proto) {
      MatD s(length(rng), dims);
      for (Eigen::Index t = 0; t < s.rows(); ++t)
        for (int d = 0; d < dims; ++d) s(t, d) = proto[d] + g(rng);
      return s;
    };
    AbxTriple t;
    t.a = seq(pa);
    t.b = seq(pb);
    t.x = seq(pa);
    out.push_back(std::move(t));
  }
  return out;
}

double eer(std::span<const Trial> trials) {
  std::vector<Trial> t(trials.begin(), trials.end());
  std::size_t n_same = 0;
  for (const auto& x : t) {
    if (!std::isfinite(x.score)) throw std::invalid_argument("eer: non-finite score");
    n_same += x.same;
  }
  const std::size_t n_diff = t.size() - n_same;
  if (n_same == 0 || n_diff == 0) throw std::invalid_argument("eer: both same and different trials are required");
  std::sort(t.begin(), t.end(), [](const Trial& a, const Trial& b) { return a.score < b.score; });

  // Operating points from "accept everything" to "reject everything"; a tie
  // group moves across the threshold as one.
  std::vector<double> far{1.0}, frr{0.0};
  std::size_t rejected_same = 0, rejected_diff = 0;
  for (std::size_t i = 0; i < t.size();) {
    std::size_t j = i;
    for (; j < t.size() && t[j].score == t[i].score; ++j) (t[j].same ? rejected_same : rejected_diff)++;
    far.push_back(double(n_diff - rejected_diff) / double(n_diff));
    frr.push_back(double(rejected_same) / double(n_same));
    i = j;
  }
  for (std::size_t k = 0; k + 1 < far.size(); ++k) {
    const double d0 = far[k] - frr[k], d1 = far[k + 1] - frr[k + 1];
    if (d1 > 0) continue;
    if (d1 == 0) return far[k + 1];
    const double a = d0 / (d0 - d1);
    return far[k] + a * (far[k + 1] - far[k]);
  }
  return far.back();  // unreachable: the last point has far - frr = -1
}

double cosine_sim(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  if (a.size() != b.size()) throw ShapeError("cosine_sim: length mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_sim: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

std::optional<F0Agreement> f0_corr_rmse(const PitchTrack& a, const PitchTrack& b, bool normalize) {
  const std::size_t n = std::min(a.f0.size(), b.f0.size());
  std::vector<double> la, lb;
  for (std::size_t i = 0; i < n; ++i)
    if (a.voiced[i] && b.voiced[i] && a.f0[i] > 0 && b.f0[i] > 0) {
      la.push_back(std::log(a.f0[i]));
      lb.push_back(std::log(b.f0[i]));
    }
  if (la.size() < 3) return std::nullopt;
  Eigen::Map<Eigen::VectorXd> x(la.data(), Eigen::Index(la.size())), y(lb.data(), Eigen::Index(lb.size()));
  const Eigen::VectorXd xc = x.array() - x.mean(), yc = y.array() - y.mean();
  const double sx = std::sqrt(xc.squaredNorm() / double(la.size())), sy = std::sqrt(yc.squaredNorm() / double(la.size()));
  if (sx == 0.0 || sy == 0.0) return std::nullopt;
  F0Agreement r;
  r.frames = la.size();
  r.corr = std::clamp(xc.dot(yc) / (double(la.size()) * sx * sy), -1.0, 1.0);
  const Eigen::VectorXd diff = normalize ? Eigen::VectorXd(xc / sx - yc / sy) : Eigen::VectorXd(x - y);
  r.rmse = std::sqrt(diff.squaredNorm() / double(la.size()));
  return r;
}

std::string f0_overlay_csv(const PitchTrack& a, const PitchTrack& b) {
  std::ostringstream os;
  os << "time,f0_a,f0_b\n";
  const std::size_t n = std::max(a.f0.size(), b.f0.size());
  char buf[64];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%.6f", double(i) / a.frame_rate);
    os << buf << ',';
    if (i < a.f0.size() && a.voiced[i]) os << a.f0[i];
    os << ',';
    if (i < b.f0.size() && b.voiced[i]) os << b.f0[i];
    os << '\n';
  }
  return os.str();
}

std::size_t edit_distance(std::span<const std::string> ref, std::span<const std::string> hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

double edit_distance_rate(std::span<const std::string> ref, std::span<const std::string> hyp) {
  if (ref.empty()) throw std::invalid_argument("edit_distance_rate: empty reference");
  return double(edit_distance(ref, hyp)) / double(ref.size());
}

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

std::vector<std::string> split_chars(const std::string& text) {
  std::vector<std::string> out;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) out.emplace_back(1, c);
  return out;
}

MushraEstimate mushra_bootstrap(std::span<const double> scores, int iters, double ci, std::uint64_t seed) {
  if (scores.empty()) throw std::invalid_argument("mushra_bootstrap: no scores");
  if (iters < 1) throw std::invalid_argument("mushra_bootstrap: iters must be >= 1");
  if (!(ci > 0 && ci < 1)) throw std::invalid_argument("mushra_bootstrap: ci must lie in (0, 1)");
  std::vector<double> v(scores.begin(), scores.end());
  MushraEstimate r;
  r.median = median_of(v);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, scores.size() - 1);
  std::vector<double> medians(static_cast<std::size_t>(iters)), sample(scores.size());
  for (auto& m : medians) {
    for (auto& s : sample) s = scores[pick(rng)];
    m = median_of(sample);
  }
  std::sort(medians.begin(), medians.end());
  r.lo = quantile(medians, (1.0 - ci) / 2.0);
  r.hi = quantile(medians, 1.0 - (1.0 - ci) / 2.0);
  return r;
}

Pca pca_project(const MatD& vectors, int n_components) {
  if (n_components < 1 || n_components > vectors.cols())
    throw std::invalid_argument("pca: n_components must lie in [1, dims]");
  if (vectors.rows() < n_components + 1) throw std::invalid_argument("pca: need at least n_components + 1 vectors");
  Pca p;
  p.mean = vectors.colwise().mean();
  const MatD centered = vectors.rowwise() - p.mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / double(vectors.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw NumericError("pca: eigendecomposition failed");
  const Eigen::Index d = cov.rows();
  const double total = std::max(es.eigenvalues().sum(), 0.0);
  p.components.resize(n_components, d);
  p.explained.resize(n_components);
  for (int k = 0; k < n_components; ++k) {
    const Eigen::Index src = d - 1 - k;  // eigenvalues come ascending
    Eigen::RowVectorXd c = es.eigenvectors().col(src).transpose();
    Eigen::Index arg = 0;
    c.cwiseAbs().maxCoeff(&arg);
    if (c[arg] < 0) c = -c;
    p.components.row(k) = c;
    const double ev = std::max(es.eigenvalues()[src], 0.0);
    p.explained[k] = total > 0 ? ev / total : 0.0;
  }
  p.projections = centered * p.components.transpose();
  return p;
}

std::string Report::csv() const {
  std::ostringstream os;
  os << "metric,value\n";
  char buf[40];
  for (const auto& [k, v] : rows) {
    std::snprintf(buf, sizeof buf, "%.6g", v);
    os << k << ',' << buf << '\n';
  }
  return os.str();
}

std::string Report::table() const {
  std::size_t w = 6;
  for (const auto& r : rows) w = std::max(w, r.first.size());
  std::ostringstream os;
  char buf[64];
  for (const auto& [k, v] : rows) {
    std::snprintf(buf, sizeof buf, "%.3f", v);
    os << k << std::string(w - k.size() + 2, ' ') << buf << '\n';
  }
  return os.str();
}

}  // namespace disco
