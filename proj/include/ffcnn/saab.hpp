#pragma once

// Saab transform (subspace approximation with adjusted bias) for one
// convolutional layer.
//
// A layer with K kernels over N-dimensional patches uses one constant DC
// kernel (1,...,1)/sqrt(N) and K-1 AC kernels: the leading principal
// components of the patches with their DC part projected out. Every kernel
// shares one bias b >= max training-patch norm, which keeps all training
// responses non-negative so the trailing ReLU is the identity on them.

#include <cmath>

#include "ffcnn/numkit.hpp"

namespace ffcnn {

struct SaabLayer {
  Index input_dim = 0;    // N
  Index num_kernels = 0;  // K, DC kernel included
  MatrixXd kernels;       // K x N; row 0 is the DC kernel
  VectorXd energies;      // K-1 AC variances, descending
  double bias = 0.0;
  double max_training_norm = 0.0;
  bool use_bias = false;

  auto dc_kernel() const { return kernels.row(0); }
  auto ac_kernels() const { return kernels.bottomRows(num_kernels - 1); }
};

/// Streaming statistics of raw patches: covariance plus the largest norm seen.
class PatchStatistics {
 public:
  explicit PatchStatistics(Index dim) : cov_(dim) {}

  void add(const Eigen::Ref<const MatrixXd>& patches) {
    cov_.accumulate(patches);
    if (patches.rows() > 0) max_norm_ = std::max(max_norm_, patches.rowwise().norm().maxCoeff());
  }
  void merge(const PatchStatistics& other) {
    cov_.merge(other.cov_);
    max_norm_ = std::max(max_norm_, other.max_norm_);
  }

  Index dim() const { return cov_.dim(); }
  std::int64_t count() const { return cov_.count(); }
  double max_norm() const { return max_norm_; }
  const CovarianceAccumulator& covariance() const { return cov_; }

 private:
  CovarianceAccumulator cov_;
  double max_norm_ = 0.0;
};

/// Orthonormal basis of the complement of the constant vector (Helmert
/// contrasts). Column j has j+1 leading entries 1 followed by -(j+1).
inline MatrixXd helmert_basis(Index n) {
  MatrixXd basis = MatrixXd::Zero(n, n - 1);
  for (Index j = 0; j < n - 1; ++j) {
    const double m = static_cast<double>(j + 1);
    const double scale = 1.0 / std::sqrt(m * (m + 1.0));
    basis.col(j).head(j + 1).setConstant(scale);
    basis(j + 1, j) = -m * scale;
  }
  return basis;
}

inline double bias_lower_bound(const MatrixXd& patches) {
  require(patches.rows() >= 1, ErrorKind::config, "bias bound needs at least one patch");
  return patches.rowwise().norm().maxCoeff();
}

inline SaabLayer fit_saab(const PatchStatistics& stats, Index num_kernels, bool use_bias,
                          double delta_rel = 1e-4) {
  const Index n = stats.dim();
  require(num_kernels >= 1, ErrorKind::config, "Saab kernel count must be positive");
  require(num_kernels <= n, ErrorKind::config, "Saab kernel count ", num_kernels,
          " exceeds patch dimension ", n);
  require(stats.count() >= num_kernels, ErrorKind::data, "Saab fit needs at least ", num_kernels,
          " patches, got ", stats.count());
  require(delta_rel > 0.0, ErrorKind::config, "bias margin delta_rel must be positive");

  SaabLayer layer;
  layer.input_dim = n;
  layer.num_kernels = num_kernels;
  layer.use_bias = use_bias;
  layer.max_training_norm = stats.max_norm();
  layer.bias = use_bias ? (1.0 + delta_rel) * stats.max_norm() : 0.0;
  layer.kernels.resize(num_kernels, n);
  layer.kernels.row(0).setConstant(1.0 / std::sqrt(static_cast<double>(n)));
  layer.energies = VectorXd::Zero(num_kernels - 1);
  if (num_kernels == 1) return layer;

  // The covariance of x_AC = P x (P projects out the DC direction) restricted
  // to the AC subspace is B^T C B for an orthonormal AC basis B.
  const MatrixXd basis = helmert_basis(n);
  const MatrixXd cov = stats.covariance().covariance();
  MatrixXd ac_cov = basis.transpose() * cov * basis;
  ac_cov = 0.5 * (ac_cov + ac_cov.transpose()).eval();

  const double total = cov.trace();
  const bool degenerate = !(ac_cov.trace() > 1e-12 * total) || total <= 0.0;
  if (degenerate) {
    log::warn("Saab fit: AC energy is zero (patches are constant up to a shift); "
              "using a fixed orthonormal AC basis");
    for (Index k = 1; k < num_kernels; ++k) {
      VectorXd v = basis.col(k - 1);
      fix_sign(v);
      layer.kernels.row(k) = v.transpose();
    }
    return layer;
  }

  const EigenDecomposition eig = eig_sym(ac_cov);
  for (Index k = 1; k < num_kernels; ++k) {
    VectorXd v = basis * eig.vectors.col(k - 1);
    v.normalize();
    fix_sign(v);
    layer.kernels.row(k) = v.transpose();
    layer.energies(k - 1) = std::max(eig.values(k - 1), 0.0);
  }
  return layer;
}

inline SaabLayer fit_saab(const MatrixXd& patches, Index num_kernels, bool use_bias,
                          double delta_rel = 1e-4) {
  PatchStatistics stats(patches.cols());
  stats.add(patches);
  return fit_saab(stats, num_kernels, use_bias, delta_rel);
}

/// Affine responses a_k^T x + b before the ReLU, one row per patch.
inline MatrixXd saab_preactivation(const SaabLayer& layer, const Eigen::Ref<const MatrixXd>& patches) {
  require(patches.cols() == layer.input_dim, ErrorKind::config, "Saab input has dim ",
          patches.cols(), ", layer expects ", layer.input_dim);
  MatrixXd y = patches * layer.kernels.transpose();
  y.array() += layer.bias;
  return y;
}

/// Row-wise Saab responses with the trailing ReLU.
inline MatrixXd apply_saab_rows(const SaabLayer& layer, const Eigen::Ref<const MatrixXd>& patches) {
  return saab_preactivation(layer, patches).cwiseMax(0.0);
}

inline VectorXd apply_saab(const SaabLayer& layer, const VectorXd& patch) {
  require(patch.size() == layer.input_dim, ErrorKind::config, "Saab input has dim ", patch.size(),
          ", layer expects ", layer.input_dim);
  VectorXd y = layer.kernels * patch;
  y.array() += layer.bias;
  return y.cwiseMax(0.0);
}

}  // namespace ffcnn
