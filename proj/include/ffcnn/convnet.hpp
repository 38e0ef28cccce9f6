#pragma once

// Convolutional feature extractor: sliding-window patch extraction, Saab
// filtering with ReLU, and max pooling, cascaded layer by layer.

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

#include "ffcnn/saab.hpp"
#include "ffcnn/tensor.hpp"

namespace ffcnn {

struct Window {
  int height = 5;
  int width = 5;
  friend bool operator==(const Window&, const Window&) = default;
};

struct PoolSpec {
  int size = 2;
  int stride = 2;
  friend bool operator==(const PoolSpec&, const PoolSpec&) = default;
};

struct ConvLayerSpec {
  Window window{};
  int stride = 1;
  int num_kernels = 1;
  // Unset means the default rule: bias on every layer but the last.
  std::optional<bool> use_bias;
  std::optional<PoolSpec> pool = PoolSpec{};
  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

/// Valid sliding windows in row-major (row, col) order; each patch is
/// flattened as (row, col, channel) with channel fastest.
inline MatrixXd extract_patches(const Tensor3& image, Window window, int stride) {
  require(stride >= 1, ErrorKind::config, "patch stride must be >= 1, got ", stride);
  require(window.height >= 1 && window.width >= 1, ErrorKind::config, "window dims must be positive");
  require(window.height <= image.height() && window.width <= image.width(), ErrorKind::config,
          "window ", window.height, "x", window.width, " larger than image ", image.height(), "x",
          image.width());
  const int out_h = (image.height() - window.height) / stride + 1;
  const int out_w = (image.width() - window.width) / stride + 1;
  const int c = image.channels();
  const Index row_len = static_cast<Index>(window.width) * c;
  MatrixXd patches(static_cast<Index>(out_h) * out_w, row_len * window.height);
  Index p = 0;
  for (int r = 0; r < out_h; ++r) {
    for (int col = 0; col < out_w; ++col, ++p) {
      for (int dr = 0; dr < window.height; ++dr) {
        const double* src = image.data() + image.offset(r * stride + dr, col * stride, 0);
        for (Index k = 0; k < row_len; ++k) patches(p, dr * row_len + k) = src[k];
      }
    }
  }
  return patches;
}

/// Per-channel max over size x size blocks; trailing rows/cols that do not
/// fill a block are dropped.
inline Tensor3 max_pool(const Tensor3& t, int size, int stride) {
  require(size >= 1 && stride >= 1, ErrorKind::config, "pool size and stride must be >= 1");
  require(size <= t.height() && size <= t.width(), ErrorKind::config, "pool size ", size,
          " exceeds tensor ", t.height(), "x", t.width());
  const int out_h = (t.height() - size) / stride + 1;
  const int out_w = (t.width() - size) / stride + 1;
  Tensor3 out(out_h, out_w, t.channels());
  for (int r = 0; r < out_h; ++r)
    for (int c = 0; c < out_w; ++c)
      for (int ch = 0; ch < t.channels(); ++ch) {
        double m = t(r * stride, c * stride, ch);
        for (int dr = 0; dr < size; ++dr)
          for (int dc = 0; dc < size; ++dc) m = std::max(m, t(r * stride + dr, c * stride + dc, ch));
        out(r, c, ch) = m;
      }
  return out;
}

inline Shape3 conv_output_shape(const Shape3& in, const ConvLayerSpec& spec) {
  return {(in.height - spec.window.height) / spec.stride + 1,
          (in.width - spec.window.width) / spec.stride + 1, spec.num_kernels};
}

inline Shape3 layer_output_shape(const Shape3& in, const ConvLayerSpec& spec) {
  Shape3 s = conv_output_shape(in, spec);
  if (spec.pool) {
    s.height = (s.height - spec.pool->size) / spec.pool->stride + 1;
    s.width = (s.width - spec.pool->size) / spec.pool->stride + 1;
  }
  return s;
}

/// Shape after every layer (conv + pool), checking that each spec fits.
inline std::vector<Shape3> shape_chain(const Shape3& input, std::span<const ConvLayerSpec> specs) {
  std::vector<Shape3> shapes{input};
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const Shape3& in = shapes.back();
    const ConvLayerSpec& s = specs[i];
    require(s.stride >= 1 && s.num_kernels >= 1, ErrorKind::config, "layer ", i,
            ": stride and kernel count must be >= 1");
    require(s.window.height >= 1 && s.window.width >= 1 && s.window.height <= in.height &&
                s.window.width <= in.width,
            ErrorKind::config, "layer ", i, ": window ", s.window.height, "x", s.window.width,
            " does not fit input ", in.height, "x", in.width);
    const Shape3 conv = conv_output_shape(in, s);
    if (s.pool)
      require(s.pool->size >= 1 && s.pool->stride >= 1 && s.pool->size <= conv.height &&
                  s.pool->size <= conv.width,
              ErrorKind::config, "layer ", i, ": pool size ", s.pool->size, " does not fit ",
              conv.height, "x", conv.width);
    shapes.push_back(layer_output_shape(in, s));
  }
  return shapes;
}

/// Two-layer LeNet-5 front end (6 and 16 kernels).
inline std::vector<ConvLayerSpec> lenet5_specs() {
  return {ConvLayerSpec{{5, 5}, 1, 6, std::nullopt, PoolSpec{}},
          ConvLayerSpec{{5, 5}, 1, 16, std::nullopt, PoolSpec{}}};
}

/// Widened variant for 3-channel input (32 and 64 kernels).
inline std::vector<ConvLayerSpec> modified_lenet5_specs() {
  return {ConvLayerSpec{{5, 5}, 1, 32, std::nullopt, PoolSpec{}},
          ConvLayerSpec{{5, 5}, 1, 64, std::nullopt, PoolSpec{}}};
}

struct FittedConvLayer {
  ConvLayerSpec spec;  // use_bias always resolved
  Shape3 input_shape;
  SaabLayer saab;
};

struct FeatureExtractor {
  Shape3 input_shape;
  std::vector<FittedConvLayer> layers;
  bool drop_dc_at_output = true;

  Shape3 output_shape() const {
    return layers.empty() ? input_shape : layer_output_shape(layers.back().input_shape, layers.back().spec);
  }
  Index feature_dim() const {
    const Shape3 s = output_shape();
    const int ch = drop_dc_at_output ? s.channels - 1 : s.channels;
    return static_cast<Index>(s.height) * s.width * ch;
  }
};

/// Conv (Saab + ReLU) followed by the optional pooling of one layer.
inline Tensor3 layer_forward(const FittedConvLayer& layer, const Tensor3& input) {
  require(input.shape() == layer.input_shape, ErrorKind::config, "layer input shape mismatch");
  const MatrixXd patches = extract_patches(input, layer.spec.window, layer.spec.stride);
  const MatrixXd responses = apply_saab_rows(layer.saab, patches);
  const Shape3 conv = conv_output_shape(layer.input_shape, layer.spec);
  Tensor3 out(conv);
  // responses is (H*W) x K column-major; the tensor is channel-fastest.
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      out.data(), responses.rows(), responses.cols()) = responses;
  if (layer.spec.pool) return max_pool(out, layer.spec.pool->size, layer.spec.pool->stride);
  return out;
}

/// Runs the first `num_layers` layers (all when negative).
inline Tensor3 forward(const FeatureExtractor& ex, const Tensor3& image, int num_layers = -1) {
  require(image.shape() == ex.input_shape, ErrorKind::config, "image shape ", image.height(), "x",
          image.width(), "x", image.channels(), " does not match extractor input ",
          ex.input_shape.height, "x", ex.input_shape.width, "x", ex.input_shape.channels);
  const std::size_t n = num_layers < 0 ? ex.layers.size() : static_cast<std::size_t>(num_layers);
  Tensor3 t = image;
  for (std::size_t i = 0; i < n; ++i) t = layer_forward(ex.layers[i], t);
  return t;
}

inline VectorXd extract_features(const FeatureExtractor& ex, const Tensor3& image) {
  const Tensor3 out = forward(ex, image);
  if (!ex.drop_dc_at_output) return Eigen::Map<const VectorXd>(out.data(), static_cast<Index>(out.size()));
  VectorXd f(ex.feature_dim());
  Index k = 0;
  for (int r = 0; r < out.height(); ++r)
    for (int c = 0; c < out.width(); ++c)
      for (int ch = 1; ch < out.channels(); ++ch) f(k++) = out(r, c, ch);
  return f;
}

/// One feature row per image.
inline MatrixXd extract_features(const FeatureExtractor& ex, std::span<const Tensor3> images) {
  MatrixXd f(static_cast<Index>(images.size()), ex.feature_dim());
  for (std::size_t i = 0; i < images.size(); ++i)
    f.row(static_cast<Index>(i)) = extract_features(ex, images[i]).transpose();
  return f;
}

struct ExtractorFitOptions {
  std::optional<std::size_t> sample_cap;  // images used for patch statistics
  std::uint64_t seed = 0;
  double delta_rel = 1e-4;
  bool drop_dc_at_output = true;
};

/// Indices of the images used for patch statistics, ascending.
inline std::vector<std::size_t> select_fit_images(std::size_t count, std::optional<std::size_t> cap,
                                                  std::uint64_t seed) {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  if (!cap || *cap >= count) return idx;
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(*cap);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Fits layers in order; layer l sees patches of the pooled output of layer l-1.
inline FeatureExtractor fit_extractor(std::span<const Tensor3> images,
                                      const std::vector<ConvLayerSpec>& specs,
                                      const ExtractorFitOptions& opts = {}) {
  require(!specs.empty(), ErrorKind::config, "extractor needs at least one layer spec");
  require(!images.empty(), ErrorKind::data, "extractor needs at least one training image");
  require(!opts.sample_cap || *opts.sample_cap >= 1, ErrorKind::config, "sample cap must be >= 1");

  FeatureExtractor ex;
  ex.input_shape = images.front().shape();
  ex.drop_dc_at_output = opts.drop_dc_at_output;
  const std::vector<Shape3> shapes = shape_chain(ex.input_shape, specs);
  const std::vector<std::size_t> chosen = select_fit_images(images.size(), opts.sample_cap, opts.seed);
  constexpr Index kFlushRows = 8192;

  for (std::size_t l = 0; l < specs.size(); ++l) {
    ConvLayerSpec spec = specs[l];
    if (!spec.use_bias) spec.use_bias = l + 1 < specs.size();
    const Index dim = static_cast<Index>(spec.window.height) * spec.window.width * shapes[l].channels;

    PatchStatistics stats(dim);
    MatrixXd pending;
    std::vector<MatrixXd> chunk;
    Index chunk_rows = 0;
    auto flush = [&] {
      if (chunk_rows == 0) return;
      pending.resize(chunk_rows, dim);
      Index at = 0;
      for (const MatrixXd& m : chunk) {
        pending.middleRows(at, m.rows()) = m;
        at += m.rows();
      }
      stats.add(pending);
      chunk.clear();
      chunk_rows = 0;
    };
    for (std::size_t i : chosen) {
      require(images[i].shape() == ex.input_shape, ErrorKind::data, "training image ", i,
              " has a different shape than image 0");
      const Tensor3 input = forward(ex, images[i], static_cast<int>(l));
      chunk.push_back(extract_patches(input, spec.window, spec.stride));
      chunk_rows += chunk.back().rows();
      if (chunk_rows >= kFlushRows) flush();
    }
    flush();

    FittedConvLayer fitted{spec, shapes[l], fit_saab(stats, spec.num_kernels, *spec.use_bias, opts.delta_rel)};
    log::info("conv layer ", l, ": ", stats.count(), " patches of dim ", dim, ", K=", spec.num_kernels,
              ", bias=", fitted.saab.bias);
    ex.layers.push_back(std::move(fitted));
  }
  return ex;
}

}  // namespace ffcnn
