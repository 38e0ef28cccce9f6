#pragma once

// Per-dimension discriminability: each dimension is split into intervals by
// 1-D k-means, every interval votes for its majority class, and correctly
// voted samples contribute -log(interval purity).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ffcnn/convnet.hpp"
#include "ffcnn/datasets.hpp"
#include "ffcnn/fclsr.hpp"

namespace ffcnn {

struct CrossEntropyProfile {
  std::string space_name;
  std::vector<double> values;  // one per dimension, in dimension order
  int q = 0;
  std::int64_t sample_count = 0;
  int class_count = 0;
  std::vector<Index> fallback_dims;  // dims profiled with fewer than q intervals

  double mean() const {
    return values.empty() ? 0.0 : std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  }
  double min() const { return values.empty() ? 0.0 : *std::min_element(values.begin(), values.end()); }
  double max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }

  /// Dimension indices sorted by ascending cross-entropy (stable).
  std::vector<Index> rank_order() const {
    std::vector<Index> order(values.size());
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      return values[static_cast<std::size_t>(a)] < values[static_cast<std::size_t>(b)];
    });
    return order;
  }
};

/// Partition of sorted 1-D data into contiguous k-means intervals.
struct IntervalPartition {
  std::vector<double> centroids;
  std::vector<int> interval_of;  // per input sample
};

/// Lloyd iterations on 1-D data, initialized at evenly spaced quantiles of
/// the distinct values. Intervals that empty out are dropped, so fewer than
/// q may remain. Requires q <= number of distinct values.
inline IntervalPartition kmeans_1d(std::span<const double> x, int q, int max_iter = 300) {
  require(q >= 1, ErrorKind::config, "interval count must be positive, got ", q);
  require(!x.empty(), ErrorKind::config, "cannot partition an empty sample");
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });

  std::vector<double> distinct;
  std::vector<double> weight;
  std::vector<std::size_t> group_of(x.size());
  for (std::size_t i : order) {
    if (distinct.empty() || x[i] != distinct.back()) {
      distinct.push_back(x[i]);
      weight.push_back(0.0);
    }
    weight.back() += 1.0;
    group_of[i] = distinct.size() - 1;
  }
  const std::size_t d = distinct.size();
  require(static_cast<std::size_t>(q) <= d, ErrorKind::config, "interval count ", q,
          " exceeds the ", d, " distinct values");

  std::vector<double> c(static_cast<std::size_t>(q));
  for (int j = 0; j < q; ++j)
    c[static_cast<std::size_t>(j)] = distinct[static_cast<std::size_t>((j + 0.5) * static_cast<double>(d) / q)];

  std::vector<int> assign(d, -1);
  auto assign_step = [&] {
    bool changed = false;
    std::size_t j = 0;
    for (std::size_t g = 0; g < d; ++g) {
      // Centroids are increasing; advance while the next one is strictly closer.
      while (j + 1 < c.size() && std::abs(distinct[g] - c[j + 1]) < std::abs(distinct[g] - c[j])) ++j;
      if (assign[g] != static_cast<int>(j)) changed = true;
      assign[g] = static_cast<int>(j);
    }
    return changed;
  };
  for (int it = 0; it < max_iter && assign_step(); ++it) {
    std::vector<double> sum(c.size(), 0.0), w(c.size(), 0.0);
    for (std::size_t g = 0; g < d; ++g) {
      sum[static_cast<std::size_t>(assign[g])] += distinct[g] * weight[g];
      w[static_cast<std::size_t>(assign[g])] += weight[g];
    }
    std::vector<double> next;
    for (std::size_t k = 0; k < c.size(); ++k)
      if (w[k] > 0.0) next.push_back(sum[k] / w[k]);
    if (next.size() != c.size()) std::fill(assign.begin(), assign.end(), -1);
    c = std::move(next);
  }
  assign_step();

  IntervalPartition part{std::move(c), std::vector<int>(x.size())};
  for (std::size_t i = 0; i < x.size(); ++i) part.interval_of[i] = assign[group_of[i]];
  return part;
}

/// Normalized cross-entropy of one dimension: (1/N) * sum over correctly
/// voted samples of -log(majority fraction of the sample's interval).
/// Majority ties go to the smallest class index.
inline double dimension_cross_entropy(std::span<const double> samples, std::span<const int> labels,
                                      int q, std::uint64_t /*seed*/ = 0) {
  require(samples.size() == labels.size(), ErrorKind::config, "cross-entropy: ", samples.size(),
          " samples but ", labels.size(), " labels");
  const IntervalPartition part = kmeans_1d(samples, q);
  int classes = 0;
  for (int l : labels) {
    require(l >= 0, ErrorKind::data, "negative class label ", l);
    classes = std::max(classes, l + 1);
  }
  const std::size_t m = part.centroids.size();
  std::vector<std::int64_t> counts(m * static_cast<std::size_t>(classes), 0);
  std::vector<std::int64_t> sizes(m, 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto k = static_cast<std::size_t>(part.interval_of[i]);
    ++counts[k * static_cast<std::size_t>(classes) + static_cast<std::size_t>(labels[i])];
    ++sizes[k];
  }
  double loss = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    if (sizes[k] == 0) continue;
    const auto* row = counts.data() + k * static_cast<std::size_t>(classes);
    const std::int64_t majority = *std::max_element(row, row + classes);
    const double p = static_cast<double>(majority) / static_cast<double>(sizes[k]);
    loss -= static_cast<double>(majority) * std::log(p);
  }
  return loss / static_cast<double>(samples.size());
}

inline std::size_t count_distinct(std::span<const double> x, std::size_t limit) {
  std::vector<double> v(x.begin(), x.end());
  std::sort(v.begin(), v.end());
  const auto n = static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
  return std::min(n, limit);
}

/// Profiles every column of `activations`. Columns with fewer than q
/// distinct values fall back to one interval per distinct value.
inline CrossEntropyProfile profile_space(std::string name, const MatrixXd& activations,
                                         std::span<const int> labels, int q, std::uint64_t seed = 0) {
  require(static_cast<std::size_t>(activations.rows()) == labels.size(), ErrorKind::config,
          "profile '", name, "': ", activations.rows(), " rows but ", labels.size(), " labels");
  require(q >= 1, ErrorKind::config, "interval count must be positive, got ", q);
  CrossEntropyProfile prof;
  prof.space_name = std::move(name);
  prof.q = q;
  prof.sample_count = activations.rows();
  for (int l : labels) prof.class_count = std::max(prof.class_count, l + 1);
  prof.values.reserve(static_cast<std::size_t>(activations.cols()));
  std::vector<double> column(static_cast<std::size_t>(activations.rows()));
  for (Index d = 0; d < activations.cols(); ++d) {
    for (Index i = 0; i < activations.rows(); ++i) column[static_cast<std::size_t>(i)] = activations(i, d);
    const auto distinct = static_cast<int>(count_distinct(column, static_cast<std::size_t>(q)));
    if (distinct < q) prof.fallback_dims.push_back(d);
    prof.values.push_back(dimension_cross_entropy(column, labels, std::min(q, distinct), seed));
  }
  if (!prof.fallback_dims.empty())
    log::warn("profile '", prof.space_name, "': ", prof.fallback_dims.size(),
              " dimensions have fewer than ", q, " distinct values; used one interval per value");
  return prof;
}

struct ProfileOptions {
  int q_hidden = 32;  // conv and hidden FC spaces
  int q_output = 16;  // class-score space
  std::uint64_t seed = 0;
};

/// Profiles the feature space fed to the FC subnet, every hidden FC space
/// and the output space.
inline std::vector<CrossEntropyProfile> profile_report(const FeatureExtractor& ex, const FcClassifier& clf,
                                                       const LabeledImageSet& data,
                                                       const ProfileOptions& opts = {}) {
  const MatrixXd features = extract_features(ex, data.images);
  std::vector<CrossEntropyProfile> out;
  out.push_back(profile_space("conv" + std::to_string(ex.layers.size()), features, data.labels,
                              opts.q_hidden, opts.seed));
  const std::vector<MatrixXd> stages = clf.stage_outputs(features);
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const bool last = s + 1 == stages.size();
    out.push_back(profile_space(last ? "output" : "fc" + std::to_string(s + 1), stages[s], data.labels,
                                last ? opts.q_output : opts.q_hidden, opts.seed));
  }
  return out;
}

/// `dim_index,cross_entropy` rows in rank order (lowest first).
inline void write_profile_csv(const CrossEntropyProfile& prof, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::data, "cannot write ", path.string());
  out << "dim_index,cross_entropy\n";
  char buf[64];
  for (Index d : prof.rank_order()) {
    std::snprintf(buf, sizeof buf, "%.17g", prof.values[static_cast<std::size_t>(d)]);
    out << d << ',' << buf << '\n';
  }
}

inline nlohmann::json profile_summary(const std::vector<CrossEntropyProfile>& profiles) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : profiles)
    arr.push_back({{"space", p.space_name},
                   {"mean", p.mean()},
                   {"min", p.min()},
                   {"max", p.max()},
                   {"Q", p.q},
                   {"n_samples", p.sample_count}});
  return arr;
}

}  // namespace ffcnn
