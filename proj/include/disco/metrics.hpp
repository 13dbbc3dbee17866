#pragma once

#include "disco/pitch.hpp"
#include "disco/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace disco {

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Co-occurrence counts, rows = reference labels (phones, speakers), cols = tokens.
struct JointCounts {
  CountMatrix counts;
  std::int64_t total() const { return counts.sum(); }
};

/// Counts pairs (row_labels[i], col_labels[i]); labels must lie in [0, n_rows) and [0, n_cols).
JointCounts joint_counts(std::span<const int> row_labels, std::span<const std::int64_t> col_labels, int n_rows,
                         std::int64_t n_cols);

/// Token histogram over a codebook of size n.
std::vector<std::int64_t> token_histogram(std::span<const std::int64_t> tokens, std::int64_t n);

/// Entropy of the histogram in units of log n. Zero counts contribute nothing.
double normalized_entropy(std::span<const std::int64_t> histogram, std::int64_t n);

struct InformationStats {
  double mi = 0;      // nats
  double h_rows = 0;  // nats
  double h_cols = 0;
  double pnmi() const { return mi / h_rows; }                     // I / H(rows)
  double nmi() const { return 2.0 * mi / (h_rows + h_cols); }     // arithmetic normalisation
};

InformationStats information(const JointCounts& jc);

/// I(rows; cols) / H(rows). Throws when the row marginal has zero entropy.
double pnmi(const JointCounts& jc);

/// 2 I / (H(rows) + H(cols)); 0 when both entropies vanish.
double nmi(const JointCounts& jc);

enum class AbxDistance { FrameMean, Dtw };

struct AbxTriple {
  MatD a, b, x;  // [frames, dims]; x belongs to a's category
};

/// 1 - cosine between frame means, or the mean cosine distance along the
/// cheapest DTW path (steps right, down, diagonal).
double sequence_distance(const MatD& p, const MatD& q, AbxDistance kind);

/// Fraction of triples with d(x, a) > d(x, b); exact ties count half.
/// threads <= 0 uses the hardware concurrency.
double abx_error(std::span<const AbxTriple> triples, AbxDistance kind = AbxDistance::Dtw, int threads = 0);

/// Two categories with Gaussian prototypes `separation` apart (0 gives
/// indistinguishable categories). Sequence lengths vary in [len/2, len].
std::vector<AbxTriple> synthetic_abx_triples(int n, int dims, int len, double separation, std::uint64_t seed);

struct Trial {
  double score;  // higher means "same"
  bool same;
};

/// Equal error rate from the piecewise-linear FAR/FRR curve over distinct score
/// thresholds. Throws when either class is missing.
double eer(std::span<const Trial> trials);

double cosine_sim(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b);

struct F0Agreement {
  double corr = 0;
  double rmse = 0;
  std::size_t frames = 0;
};

/// Pearson correlation and RMSE of log F0 over frames voiced in both tracks.
/// With normalize each track is standardised first. Empty when fewer than 3
/// shared voiced frames or a track has no variance.
std::optional<F0Agreement> f0_corr_rmse(const PitchTrack& a, const PitchTrack& b, bool normalize);

/// time,f0_a,f0_b rows for overlay plots; unvoiced frames are left blank.
std::string f0_overlay_csv(const PitchTrack& a, const PitchTrack& b);

std::size_t edit_distance(std::span<const std::string> ref, std::span<const std::string> hyp);
/// Levenshtein distance over len(ref). Throws on an empty reference.
double edit_distance_rate(std::span<const std::string> ref, std::span<const std::string> hyp);
std::vector<std::string> split_words(const std::string& text);
std::vector<std::string> split_chars(const std::string& text);  // bytes, spaces dropped

struct MushraEstimate {
  double median = 0;
  double lo = 0;
  double hi = 0;
};

/// Point median plus a percentile interval of resampled medians.
MushraEstimate mushra_bootstrap(std::span<const double> scores, int iters = 1000, double ci = 0.95,
                                std::uint64_t seed = 0);

struct Pca {
  Eigen::RowVectorXd mean;
  MatD components;           // [k, dims], orthonormal rows
  MatD projections;          // [n, k]
  Eigen::VectorXd explained;  // variance ratios, descending
};

/// Covariance eigendecomposition. Each component's largest-magnitude
/// coordinate is made positive so signs are reproducible.
Pca pca_project(const MatD& vectors, int n_components = 2);

/// Named scalar results rendered as CSV or an aligned table.
struct Report {
  std::vector<std::pair<std::string, double>> rows;
  void add(std::string name, double value) { rows.emplace_back(std::move(name), value); }
  std::string csv() const;
  std::string table() const;
};

}  // namespace disco
