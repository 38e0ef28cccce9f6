#pragma once

// Fully-connected decision subnet built as a cascade of least-squares
// regressors. Hidden stages regress onto one-hot pseudo-labels formed from
// (class, within-class k-means cluster) pairs; the last stage regresses onto
// the class one-hot vectors.

#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "ffcnn/numkit.hpp"

namespace ffcnn {

struct PseudoLabelScheme {
  std::vector<int> clusters_per_class;
  KMeansInit init = KMeansInit::kmeanspp;
  std::uint64_t seed = 0;

  int num_classes() const { return static_cast<int>(clusters_per_class.size()); }
  int total() const { return std::accumulate(clusters_per_class.begin(), clusters_per_class.end(), 0); }

  /// Offset of each class in the pseudo-label range.
  std::vector<int> offsets() const {
    std::vector<int> off(clusters_per_class.size(), 0);
    for (std::size_t c = 1; c < off.size(); ++c) off[c] = off[c - 1] + clusters_per_class[c - 1];
    return off;
  }

  /// `width` clusters spread over the classes as evenly as possible; the
  /// remainder goes to the lowest class indices.
  static PseudoLabelScheme even(int num_classes, int width, KMeansInit init, std::uint64_t seed) {
    require(num_classes >= 1 && width >= num_classes, ErrorKind::config, "cannot split width ",
            width, " over ", num_classes, " classes");
    PseudoLabelScheme s{std::vector<int>(static_cast<std::size_t>(num_classes), width / num_classes),
                        init, seed};
    for (int c = 0; c < width % num_classes; ++c) ++s.clusters_per_class[static_cast<std::size_t>(c)];
    return s;
  }

  friend bool operator==(const PseudoLabelScheme&, const PseudoLabelScheme&) = default;
};

inline void validate(const PseudoLabelScheme& s) {
  require(!s.clusters_per_class.empty(), ErrorKind::config, "pseudo-label scheme has no classes");
  for (std::size_t c = 0; c < s.clusters_per_class.size(); ++c)
    require(s.clusters_per_class[c] >= 1, ErrorKind::config, "class ", c,
            " needs at least one cluster, got ", s.clusters_per_class[c]);
}

/// Per-class k-means; pseudo-label = offset(class) + cluster id.
inline std::vector<int> make_pseudo_labels(const MatrixXd& features, std::span<const int> labels,
                                           const PseudoLabelScheme& scheme) {
  validate(scheme);
  require(static_cast<std::size_t>(features.rows()) == labels.size(), ErrorKind::config,
          "pseudo-labels: ", features.rows(), " feature rows but ", labels.size(), " labels");
  const int nc = scheme.num_classes();
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(nc));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < nc, ErrorKind::data, "label ", labels[i], " of sample ", i,
            " outside 0..", nc - 1);
    members[static_cast<std::size_t>(labels[i])].push_back(static_cast<Index>(i));
  }
  const std::vector<int> offsets = scheme.offsets();
  std::vector<int> pseudo(labels.size(), 0);
  for (int c = 0; c < nc; ++c) {
    const auto& rows = members[static_cast<std::size_t>(c)];
    const int q = scheme.clusters_per_class[static_cast<std::size_t>(c)];
    require(static_cast<int>(rows.size()) >= q, ErrorKind::data, "class ", c, " has ", rows.size(),
            " samples, fewer than its ", q, " clusters");
    MatrixXd sub(static_cast<Index>(rows.size()), features.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) sub.row(static_cast<Index>(i)) = features.row(rows[i]);
    KMeansResult km;
    try {
      km = kmeans(sub, q, KMeansOptions{scheme.init, derive_seed(scheme.seed, 1, static_cast<std::uint32_t>(c))});
    } catch (const Error& e) {
      throw Error(e.kind(), detail::concat("class ", c, ": ", e.what()));
    }
    for (std::size_t i = 0; i < rows.size(); ++i)
      pseudo[static_cast<std::size_t>(rows[i])] = offsets[static_cast<std::size_t>(c)] + km.assignments[i];
  }
  return pseudo;
}

inline MatrixXd one_hot(std::span<const int> labels, int width) {
  MatrixXd y = MatrixXd::Zero(static_cast<Index>(labels.size()), width);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < width, ErrorKind::data, "label ", labels[i],
            " outside one-hot width ", width);
    y(static_cast<Index>(i), labels[i]) = 1.0;
  }
  return y;
}

struct LsrStage {
  MatrixXd weights;  // (n_in + 1) x n_out, last row is the bias
  std::optional<PseudoLabelScheme> scheme;
  bool rectify = true;
  LsqDiagnostics diagnostics;

  Index n_in() const { return weights.rows() - 1; }
  Index n_out() const { return weights.cols(); }
  Index parameter_count() const { return weights.size(); }

  /// Rows of `inputs` mapped through W^T [x; 1], then ReLU when rectifying.
  MatrixXd forward(const MatrixXd& inputs) const {
    require(inputs.cols() == n_in(), ErrorKind::config, "stage expects ", n_in(),
            " inputs, got ", inputs.cols());
    MatrixXd out = inputs * weights.topRows(n_in());
    out.rowwise() += weights.row(n_in());
    if (rectify) out = out.cwiseMax(0.0);
    return out;
  }
};

/// Least-squares fit of features (augmented with a ones column) onto
/// targets. The ridge defaults to 1e-8 * trace(X^T X) / (n + 1).
inline LsrStage fit_stage(const MatrixXd& features, const MatrixXd& targets, bool rectify,
                          std::optional<double> ridge = std::nullopt) {
  require(features.rows() == targets.rows(), ErrorKind::config, "fit_stage: ", features.rows(),
          " feature rows but ", targets.rows(), " target rows");
  require(features.rows() >= 1, ErrorKind::data, "fit_stage needs at least one sample");
  const Index n = features.cols();
  // Normal equations of [F 1] without materializing the augmented matrix.
  MatrixXd gram(n + 1, n + 1);
  gram.topLeftCorner(n, n).setZero();
  gram.topLeftCorner(n, n).selfadjointView<Eigen::Lower>().rankUpdate(features.transpose());
  gram.topLeftCorner(n, n).triangularView<Eigen::StrictlyUpper>() =
      gram.topLeftCorner(n, n).transpose();
  const Eigen::RowVectorXd col_sums = features.colwise().sum();
  gram.block(n, 0, 1, n) = col_sums;
  gram.block(0, n, n, 1) = col_sums.transpose();
  gram(n, n) = static_cast<double>(features.rows());
  MatrixXd cross(n + 1, targets.cols());
  cross.topRows(n) = features.transpose() * targets;
  cross.row(n) = targets.colwise().sum();

  LsqSolution sol = solve_normal_equations(gram, cross, ridge.value_or(default_ridge(gram)));
  return LsrStage{std::move(sol.weights), std::nullopt, rectify, sol.diagnostics};
}

struct FcClassifier {
  std::vector<LsrStage> stages;
  int class_count = 0;

  /// Outputs of every stage for the given input rows.
  std::vector<MatrixXd> stage_outputs(const MatrixXd& features) const {
    std::vector<MatrixXd> outs;
    const MatrixXd* in = &features;
    for (const LsrStage& s : stages) {
      outs.push_back(s.forward(*in));
      in = &outs.back();
    }
    return outs;
  }

  MatrixXd scores(const MatrixXd& features) const { return stage_outputs(features).back(); }
};

struct ClassifierFitOptions {
  std::vector<int> widths{120, 84, 10};
  std::vector<PseudoLabelScheme> schemes;  // one per hidden stage
  std::optional<double> ridge;
};

inline FcClassifier fit_classifier(const MatrixXd& features, std::span<const int> labels,
                                   const ClassifierFitOptions& opts) {
  require(!opts.widths.empty(), ErrorKind::config, "classifier needs at least one stage width");
  require(opts.schemes.size() + 1 == opts.widths.size(), ErrorKind::config, "got ", opts.schemes.size(),
          " pseudo-label schemes for ", opts.widths.size() - 1, " hidden stages");
  const int class_count = opts.widths.back();
  for (std::size_t i = 0; i < labels.size(); ++i)
    require(labels[i] >= 0 && labels[i] < class_count, ErrorKind::data, "label ", labels[i],
            " of sample ", i, " outside 0..", class_count - 1);
  for (std::size_t s = 0; s < opts.schemes.size(); ++s) {
    validate(opts.schemes[s]);
    require(opts.schemes[s].total() == opts.widths[s], ErrorKind::config, "stage ", s, " width ",
            opts.widths[s], " does not match its scheme total ", opts.schemes[s].total());
    require(opts.schemes[s].num_classes() == class_count, ErrorKind::config, "stage ", s,
            " scheme covers ", opts.schemes[s].num_classes(), " classes, expected ", class_count);
  }

  FcClassifier clf;
  clf.class_count = class_count;
  MatrixXd current = features;
  for (std::size_t s = 0; s < opts.widths.size(); ++s) {
    const bool hidden = s + 1 < opts.widths.size();
    LsrStage stage;
    if (hidden) {
      const std::vector<int> pseudo = make_pseudo_labels(current, labels, opts.schemes[s]);
      stage = fit_stage(current, one_hot(pseudo, opts.widths[s]), true, opts.ridge);
      stage.scheme = opts.schemes[s];
    } else {
      stage = fit_stage(current, one_hot(labels, class_count), false, opts.ridge);
    }
    log::info("fc stage ", s, ": ", stage.n_in(), " -> ", stage.n_out(), " (", stage.parameter_count(),
              " parameters)");
    if (hidden) current = stage.forward(current);
    clf.stages.push_back(std::move(stage));
  }
  return clf;
}

struct Prediction {
  int label = 0;
  VectorXd scores;
};

inline int argmax_first(const Eigen::Ref<const VectorXd>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return static_cast<int>(best);
}

inline Prediction predict(const FcClassifier& clf, const VectorXd& feature) {
  require(!clf.stages.empty(), ErrorKind::config, "classifier has no stages");
  require(feature.size() == clf.stages.front().n_in(), ErrorKind::config, "feature width ",
          feature.size(), " does not match classifier input ", clf.stages.front().n_in());
  VectorXd scores = clf.scores(feature.transpose()).row(0).transpose();
  return {argmax_first(scores), std::move(scores)};
}

inline std::vector<int> predict_labels(const FcClassifier& clf, const MatrixXd& features) {
  require(!clf.stages.empty() && features.cols() == clf.stages.front().n_in(), ErrorKind::config,
          "feature width ", features.cols(), " does not match classifier input");
  const MatrixXd s = clf.scores(features);
  std::vector<int> out(static_cast<std::size_t>(s.rows()));
  for (Index i = 0; i < s.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax_first(s.row(i).transpose());
  return out;
}

}  // namespace ffcnn
