#pragma once

// Deterministic numerical primitives: streaming covariance, symmetric
// eigendecomposition, regularized least squares and k-means.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <random>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "ffcnn/error.hpp"

namespace ffcnn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Random numbers

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Per-purpose child seed: splitmix64(root ^ splitmix64(purpose << 32 | index)).
inline std::uint64_t derive_seed(std::uint64_t root, std::uint32_t purpose, std::uint32_t index) {
  return splitmix64(root ^ splitmix64((static_cast<std::uint64_t>(purpose) << 32) | index));
}

/// mt19937_64 with distribution code of our own, so streams do not depend on
/// the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    const auto v = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return std::min(v, n - 1);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Covariance

/// One-pass mean/scatter accumulator over sample rows. Batches are combined
/// with the pairwise update of Chan, Golub and LeVeque, so the result does not
/// depend on batch order beyond rounding.
class CovarianceAccumulator {
 public:
  explicit CovarianceAccumulator(Index dim) : dim_(dim), mean_(VectorXd::Zero(dim)),
                                              scatter_(MatrixXd::Zero(dim, dim)) {
    require(dim > 0, ErrorKind::config, "covariance dim must be positive, got ", dim);
  }

  Index dim() const { return dim_; }
  std::int64_t count() const { return count_; }
  const VectorXd& mean() const { return mean_; }
  const MatrixXd& scatter() const { return scatter_; }

  /// Adds every row of `batch` as one sample.
  void accumulate(const Eigen::Ref<const MatrixXd>& batch) {
    require(batch.cols() == dim_, ErrorKind::config, "covariance batch has ", batch.cols(),
            " columns, expected ", dim_);
    if (batch.rows() == 0) return;
    const VectorXd batch_mean = batch.colwise().mean().transpose();
    const MatrixXd centered = batch.rowwise() - batch_mean.transpose();
    MatrixXd batch_scatter = MatrixXd::Zero(dim_, dim_);
    batch_scatter.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
    batch_scatter.triangularView<Eigen::StrictlyUpper>() = batch_scatter.transpose();
    combine(batch.rows(), batch_mean, batch_scatter);
  }

  void merge(const CovarianceAccumulator& other) {
    require(other.dim_ == dim_, ErrorKind::config, "cannot merge accumulators of dims ", dim_,
            " and ", other.dim_);
    if (other.count_ == 0) return;
    combine(other.count_, other.mean_, other.scatter_);
  }

  /// Population covariance (divisor = count).
  MatrixXd covariance() const {
    require(count_ > 0, ErrorKind::numeric, "covariance of an empty accumulator");
    return scatter_ / static_cast<double>(count_);
  }

 private:
  void combine(std::int64_t n_b, const VectorXd& mean_b, const MatrixXd& scatter_b) {
    const double n_a = static_cast<double>(count_);
    const double nb = static_cast<double>(n_b);
    const double n = n_a + nb;
    const VectorXd delta = mean_b - mean_;
    mean_ += delta * (nb / n);
    scatter_ += scatter_b;
    scatter_.selfadjointView<Eigen::Lower>().rankUpdate(delta, n_a * nb / n);
    scatter_.triangularView<Eigen::StrictlyUpper>() = scatter_.transpose();
    count_ += n_b;
  }

  Index dim_;
  std::int64_t count_ = 0;
  VectorXd mean_;
  MatrixXd scatter_;
};

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition

struct EigenDecomposition {
  VectorXd values;   // descending
  MatrixXd vectors;  // column i pairs with values(i)
};

/// Flips `v` so its largest-magnitude entry (first one on ties) is positive.
inline void fix_sign(Eigen::Ref<VectorXd> v) {
  Index best = 0;
  double best_abs = -1.0;
  for (Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) > best_abs) {
      best_abs = std::abs(v(i));
      best = i;
    }
  }
  if (v(best) < 0.0) v = -v;
}

inline EigenDecomposition eig_sym(const MatrixXd& a) {
  require(a.rows() == a.cols(), ErrorKind::config, "eig_sym needs a square matrix, got ",
          a.rows(), "x", a.cols());
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  require(asym <= 1e-10 * scale, ErrorKind::numeric, "eig_sym input is not symmetric (max |A-A^T| = ",
          asym, ")");

  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(a, Eigen::ComputeEigenvectors);
  require(solver.info() == Eigen::Success, ErrorKind::numeric, "symmetric eigensolver failed");
  const Index n = a.rows();
  EigenDecomposition out{VectorXd(n), MatrixXd(n, n)};
  for (Index i = 0; i < n; ++i) {
    out.values(i) = solver.eigenvalues()(n - 1 - i);
    out.vectors.col(i) = solver.eigenvectors().col(n - 1 - i);
    fix_sign(out.vectors.col(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Least squares

struct LsqDiagnostics {
  Index rank = 0;
  bool rank_deficient = false;
  double ridge = 0.0;
};

struct LsqSolution {
  MatrixXd weights;  // (n + 1) x c, last row is the bias
  LsqDiagnostics diagnostics;
};

/// Default ridge: 1e-8 * trace(X^T X) / (n + 1).
inline double default_ridge(const MatrixXd& gram) {
  return 1e-8 * gram.trace() / static_cast<double>(gram.rows());
}

/// Minimizes ||XW - Y||^2 + ridge ||W||^2 given the normal-equation terms
/// gram = X^T X and cross = X^T Y. With ridge == 0 the minimum-norm solution
/// is returned and rank deficiency is reported.
inline LsqSolution solve_normal_equations(const MatrixXd& gram, const MatrixXd& cross,
                                          double ridge) {
  require(ridge >= 0.0 && std::isfinite(ridge), ErrorKind::config, "ridge must be >= 0, got ",
          ridge);
  require(gram.rows() == gram.cols() && gram.rows() == cross.rows(), ErrorKind::config,
          "normal equations shape mismatch: gram ", gram.rows(), "x", gram.cols(), ", rhs ",
          cross.rows(), "x", cross.cols());
  const Index p = gram.rows();
  LsqSolution out;
  out.diagnostics.ridge = ridge;
  if (ridge > 0.0) {
    MatrixXd reg = gram;
    reg.diagonal().array() += ridge;
    Eigen::LLT<MatrixXd> llt(reg);
    require(llt.info() == Eigen::Success, ErrorKind::numeric,
            "regularized normal equations are not positive definite");
    out.weights = llt.solve(cross);
    out.diagnostics.rank = p;
  } else {
    const EigenDecomposition eig = eig_sym(gram);
    const double top = std::max(eig.values(0), 0.0);
    const double cutoff = top * 1e-12 * static_cast<double>(p);
    VectorXd inv = VectorXd::Zero(p);
    Index rank = 0;
    for (Index i = 0; i < p; ++i) {
      if (eig.values(i) > cutoff && eig.values(i) > 0.0) {
        inv(i) = 1.0 / eig.values(i);
        ++rank;
      }
    }
    out.weights = eig.vectors * inv.asDiagonal() * (eig.vectors.transpose() * cross);
    out.diagnostics.rank = rank;
    out.diagnostics.rank_deficient = rank < p;
    if (rank < p) log::warn("least squares is rank deficient (rank ", rank, " of ", p,
                            "); returning the minimum-norm solution");
  }
  require(out.weights.allFinite(), ErrorKind::numeric, "least-squares weights are not finite");
  return out;
}

/// X must carry the all-ones bias column last.
inline LsqSolution lsq_solve(const MatrixXd& x, const MatrixXd& y, double ridge) {
  require(x.rows() >= 1, ErrorKind::config, "lsq_solve needs at least one sample");
  require(x.rows() == y.rows(), ErrorKind::config, "lsq_solve row mismatch: X has ", x.rows(),
          ", Y has ", y.rows());
  require((x.col(x.cols() - 1).array() == 1.0).all(), ErrorKind::config,
          "lsq_solve expects the last column of X to be the all-ones bias column");
  const MatrixXd gram = x.transpose() * x;
  return solve_normal_equations(gram, x.transpose() * y, ridge);
}

// ---------------------------------------------------------------------------
// k-means

enum class KMeansInit { kmeanspp, random };

inline std::string_view to_string(KMeansInit init) {
  return init == KMeansInit::kmeanspp ? "kmeanspp" : "random";
}

inline KMeansInit parse_kmeans_init(std::string_view s) {
  if (s == "kmeanspp" || s == "kmeans++") return KMeansInit::kmeanspp;
  if (s == "random") return KMeansInit::random;
  throw Error(ErrorKind::config, detail::concat("unknown k-means init '", s, "'"));
}

struct KMeansOptions {
  KMeansInit init = KMeansInit::kmeanspp;
  std::uint64_t seed = 0;
  int max_iter = 300;
  double tol = 1e-6;  // relative to the RMS spread of the data
};

struct KMeansResult {
  MatrixXd centroids;            // Q x dim
  std::vector<int> assignments;  // one per sample
  double inertia = 0.0;
  int iterations = 0;
  std::vector<double> inertia_history;  // after every assignment step
};

namespace detail {

struct RowHash {
  const MatrixXd* m;
  std::size_t operator()(Index r) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (Index c = 0; c < m->cols(); ++c) {
      double v = (*m)(r, c);
      if (v == 0.0) v = 0.0;  // fold -0.0
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = (h ^ bits) * 1099511628211ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

struct RowEq {
  const MatrixXd* m;
  bool operator()(Index a, Index b) const { return m->row(a) == m->row(b); }
};

}  // namespace detail

/// Number of distinct rows, counting stops once `limit` is reached.
inline Index count_distinct_rows(const MatrixXd& samples, Index limit) {
  std::unordered_set<Index, detail::RowHash, detail::RowEq> seen(
      16, detail::RowHash{&samples}, detail::RowEq{&samples});
  for (Index r = 0; r < samples.rows() && static_cast<Index>(seen.size()) < limit; ++r)
    seen.insert(r);
  return static_cast<Index>(seen.size());
}

namespace detail {

// Squared distances samples x centroids via the |x|^2 - 2 x.c + |c|^2 expansion.
inline MatrixXd squared_distances(const MatrixXd& samples, const VectorXd& sample_norms,
                                  const MatrixXd& centroids) {
  MatrixXd d = -2.0 * samples * centroids.transpose();
  d.colwise() += sample_norms;
  d.rowwise() += centroids.rowwise().squaredNorm().transpose();
  return d.cwiseMax(0.0);
}

// Nearest-centroid assignment (ties to the smallest index) followed by empty
// cluster repair. Returns the inertia of the final assignment.
inline double assign_and_repair(const MatrixXd& samples, const VectorXd& sample_norms,
                                MatrixXd& centroids, std::vector<int>& assignments) {
  const Index n = samples.rows();
  const Index q = centroids.rows();
  const MatrixXd d = squared_distances(samples, sample_norms, centroids);
  VectorXd cost(n);
  std::vector<Index> sizes(static_cast<std::size_t>(q), 0);
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    d.row(i).minCoeff(&best);
    assignments[static_cast<std::size_t>(i)] = static_cast<int>(best);
    cost(i) = d(i, best);
    ++sizes[static_cast<std::size_t>(best)];
  }
  for (Index j = 0; j < q; ++j) {
    if (sizes[static_cast<std::size_t>(j)] > 0) continue;
    // Reseed from the sample farthest from its centroid, taken from a
    // cluster that can spare it.
    Index far = -1;
    for (Index i = 0; i < n; ++i) {
      if (sizes[static_cast<std::size_t>(assignments[static_cast<std::size_t>(i)])] < 2) continue;
      if (far < 0 || cost(i) > cost(far)) far = i;
    }
    require(far >= 0, ErrorKind::numeric, "k-means could not repair an empty cluster");
    --sizes[static_cast<std::size_t>(assignments[static_cast<std::size_t>(far)])];
    assignments[static_cast<std::size_t>(far)] = static_cast<int>(j);
    ++sizes[static_cast<std::size_t>(j)];
    centroids.row(j) = samples.row(far);
    cost(far) = 0.0;
  }
  return cost.sum();
}

inline MatrixXd init_centroids(const MatrixXd& samples, Index q, KMeansInit init, Rng& rng) {
  const Index n = samples.rows();
  MatrixXd centroids(q, samples.cols());
  if (init == KMeansInit::random) {
    // Forgy: distinct samples in random order.
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
    Index filled = 0;
    for (Index idx : order) {
      bool duplicate = false;
      for (Index j = 0; j < filled && !duplicate; ++j)
        duplicate = centroids.row(j) == samples.row(idx);
      if (duplicate) continue;
      centroids.row(filled++) = samples.row(idx);
      if (filled == q) break;
    }
    return centroids;
  }
  // k-means++: D^2 weighting.
  centroids.row(0) = samples.row(static_cast<Index>(rng.below(static_cast<std::size_t>(n))));
  VectorXd closest = (samples.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (Index j = 1; j < q; ++j) {
    // total > 0 because the data holds at least q distinct rows.
    const double target = rng.uniform() * closest.sum();
    double acc = 0.0;
    Index pick = -1;
    Index last_positive = -1;
    for (Index i = 0; i < n; ++i) {
      if (closest(i) <= 0.0) continue;
      last_positive = i;
      acc += closest(i);
      if (acc > target) {
        pick = i;
        break;
      }
    }
    if (pick < 0) pick = last_positive;
    centroids.row(j) = samples.row(pick);
    closest = closest.cwiseMin((samples.rowwise() - centroids.row(j)).rowwise().squaredNorm());
  }
  return centroids;
}

}  // namespace detail

/// Lloyd's algorithm. Stops when no centroid moves more than tol times the
/// RMS spread of the samples, or after max_iter updates.
inline KMeansResult kmeans(const MatrixXd& samples, Index q, const KMeansOptions& opts = {}) {
  require(q >= 1, ErrorKind::config, "k-means cluster count must be positive, got ", q);
  require(opts.max_iter >= 1 && opts.tol > 0.0, ErrorKind::config,
          "k-means needs max_iter >= 1 and tol > 0");
  require(samples.rows() >= 1 && samples.cols() >= 1, ErrorKind::config,
          "k-means needs a non-empty sample matrix");
  const Index distinct = count_distinct_rows(samples, q);
  require(distinct >= q, ErrorKind::data, "k-means asked for ", q, " clusters but the data has only ",
          distinct, " distinct samples");

  const Index n = samples.rows();
  const VectorXd norms = samples.rowwise().squaredNorm();
  const Eigen::RowVectorXd grand_mean = samples.colwise().mean();
  double spread = std::sqrt((samples.rowwise() - grand_mean).rowwise().squaredNorm().mean());
  if (!(spread > 0.0)) spread = 1.0;
  const double threshold = opts.tol * spread;

  Rng rng(opts.seed);
  KMeansResult res;
  res.centroids = detail::init_centroids(samples, q, opts.init, rng);
  res.assignments.assign(static_cast<std::size_t>(n), 0);
  res.inertia = detail::assign_and_repair(samples, norms, res.centroids, res.assignments);
  res.inertia_history.push_back(res.inertia);

  for (int it = 1; it <= opts.max_iter; ++it) {
    MatrixXd updated = MatrixXd::Zero(q, samples.cols());
    VectorXd counts = VectorXd::Zero(q);
    for (Index i = 0; i < n; ++i) {
      const auto c = static_cast<Index>(res.assignments[static_cast<std::size_t>(i)]);
      updated.row(c) += samples.row(i);
      counts(c) += 1.0;
    }
    for (Index j = 0; j < q; ++j) updated.row(j) /= counts(j);  // repair keeps counts > 0
    const double shift = (updated - res.centroids).rowwise().norm().maxCoeff();
    res.centroids = std::move(updated);
    res.inertia = detail::assign_and_repair(samples, norms, res.centroids, res.assignments);
    res.inertia_history.push_back(res.inertia);
    res.iterations = it;
    if (shift <= threshold) break;
  }
  return res;
}

}  // namespace ffcnn
