#include <gtest/gtest.h>

#include <random>

#include "ffcnn/convnet.hpp"
#include "log_capture.hpp"
#include "oracles.hpp"

namespace ffcnn {
namespace {

Tensor3 random_image(Shape3 s, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor3 t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = u(gen);
  return t;
}

std::vector<Tensor3> random_images(std::size_t n, Shape3 s, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<Tensor3> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_image(s, gen));
  return out;
}

TEST(Patches, LeNetFirstLayerCount) {
  const Tensor3 img(32, 32, 1, 0.5);
  const MatrixXd p = extract_patches(img, {5, 5}, 1);
  EXPECT_EQ(p.rows(), 784);
  EXPECT_EQ(p.cols(), 25);
}

TEST(Patches, SingleWindowIsFlattenedImage) {
  std::mt19937_64 gen(1);
  const Tensor3 img = random_image({5, 5, 2}, gen);
  const MatrixXd p = extract_patches(img, {5, 5}, 1);
  ASSERT_EQ(p.rows(), 1);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(p(0, static_cast<Index>(i)), img.data()[i]);
}

TEST(Patches, SixBySixGivesFourRowMajorWindows) {
  Tensor3 img(6, 6, 1);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) img(r, c, 0) = 10 * r + c;
  const MatrixXd p = extract_patches(img, {5, 5}, 1);
  ASSERT_EQ(p.rows(), 4);
  // Top-left corners of windows A, B, C, D: (0,0), (0,1), (1,0), (1,1).
  EXPECT_EQ(p(0, 0), 0);
  EXPECT_EQ(p(1, 0), 1);
  EXPECT_EQ(p(2, 0), 10);
  EXPECT_EQ(p(3, 0), 11);
  EXPECT_EQ(p(3, 24), 55);
  EXPECT_EQ(p(0, 5), 10);  // second window row starts after five columns
}

TEST(Patches, ChannelFastestFlattening) {
  Tensor3 img(2, 2, 3);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      for (int ch = 0; ch < 3; ++ch) img(r, c, ch) = 100 * r + 10 * c + ch;
  const MatrixXd p = extract_patches(img, {2, 2}, 1);
  const std::vector<double> expected{0, 1, 2, 10, 11, 12, 100, 101, 102, 110, 111, 112};
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(p(0, static_cast<Index>(i)), expected[i]);
}

TEST(Patches, StrideAndErrors) {
  const Tensor3 img(9, 9, 1);
  EXPECT_EQ(extract_patches(img, {3, 3}, 3).rows(), 9);
  EXPECT_THROW(extract_patches(img, {10, 3}, 1), Error);
  EXPECT_THROW(extract_patches(img, {3, 3}, 0), Error);
}

TEST(MaxPool, BlockMaximum) {
  Tensor3 t(2, 2, 1);
  t(0, 0, 0) = 1;
  t(0, 1, 0) = 7;
  t(1, 0, 0) = 3;
  t(1, 1, 0) = 5;
  const Tensor3 out = max_pool(t, 2, 2);
  EXPECT_EQ(out.shape(), (Shape3{1, 1, 1}));
  EXPECT_EQ(out(0, 0, 0), 7);
}

TEST(MaxPool, ConstantStaysConstantAndShapesHalve) {
  const Tensor3 out = max_pool(Tensor3(28, 28, 6, 2.5), 2, 2);
  EXPECT_EQ(out.shape(), (Shape3{14, 14, 6}));
  for (double v : out.values()) EXPECT_EQ(v, 2.5);
  EXPECT_EQ(max_pool(Tensor3(5, 5, 1), 2, 2).shape(), (Shape3{2, 2, 1}));
  EXPECT_THROW(max_pool(Tensor3(1, 1, 1), 2, 2), Error);
}

TEST(MaxPool, DominatesBlockAverageAndPoolsChannelsIndependently) {
  std::mt19937_64 gen(2);
  const Tensor3 t = random_image({8, 8, 3}, gen);
  const Tensor3 out = max_pool(t, 2, 2);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        double sum = 0, mx = 0;
        for (int dr = 0; dr < 2; ++dr)
          for (int dc = 0; dc < 2; ++dc) {
            sum += t(2 * r + dr, 2 * c + dc, ch);
            mx = std::max(mx, t(2 * r + dr, 2 * c + dc, ch));
          }
        EXPECT_GE(out(r, c, ch), sum / 4);
        EXPECT_EQ(out(r, c, ch), mx);
      }
}

TEST(Shapes, LeNetChain) {
  const auto specs = lenet5_specs();
  const auto s = shape_chain({32, 32, 1}, specs);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(conv_output_shape(s[0], specs[0]), (Shape3{28, 28, 6}));
  EXPECT_EQ(s[1], (Shape3{14, 14, 6}));
  EXPECT_EQ(conv_output_shape(s[1], specs[1]), (Shape3{10, 10, 16}));
  EXPECT_EQ(s[2], (Shape3{5, 5, 16}));
}

TEST(Shapes, ModifiedLeNetChain) {
  const auto specs = modified_lenet5_specs();
  const auto s = shape_chain({32, 32, 3}, specs);
  EXPECT_EQ(conv_output_shape(s[0], specs[0]), (Shape3{28, 28, 32}));
  EXPECT_EQ(s[1], (Shape3{14, 14, 32}));
  EXPECT_EQ(conv_output_shape(s[1], specs[1]), (Shape3{10, 10, 64}));
  EXPECT_EQ(s[2], (Shape3{5, 5, 64}));
}

TEST(Shapes, RejectsLayersThatDoNotFit) {
  std::vector<ConvLayerSpec> specs{ConvLayerSpec{{5, 5}, 1, 4, std::nullopt, PoolSpec{}},
                                    ConvLayerSpec{{15, 15}, 1, 4, std::nullopt, std::nullopt}};
  EXPECT_THROW(shape_chain({32, 32, 1}, specs), Error);
  specs[1] = ConvLayerSpec{{5, 5}, 0, 4, std::nullopt, std::nullopt};
  EXPECT_THROW(shape_chain({32, 32, 1}, specs), Error);
}

class SmallExtractor : public ::testing::Test {
 protected:
  void SetUp() override { images = random_images(12, {32, 32, 1}, 3); }
  std::vector<Tensor3> images;
  testing::LogCapture logs;
};

TEST_F(SmallExtractor, FeatureLengthsAndBiasRule) {
  const FeatureExtractor ex = fit_extractor(images, lenet5_specs());
  ASSERT_EQ(ex.layers.size(), 2u);
  EXPECT_EQ(ex.feature_dim(), 375);
  EXPECT_EQ(extract_features(ex, images[0]).size(), 375);
  EXPECT_TRUE(*ex.layers[0].spec.use_bias);
  EXPECT_FALSE(*ex.layers[1].spec.use_bias);
  EXPECT_EQ(ex.layers[1].saab.bias, 0.0);
  EXPECT_EQ(ex.layers[0].saab.input_dim, 25);
  EXPECT_EQ(ex.layers[1].saab.input_dim, 150);

  FeatureExtractor keep = ex;
  keep.drop_dc_at_output = false;
  EXPECT_EQ(keep.feature_dim(), 400);
  const VectorXd all = extract_features(keep, images[0]);
  const VectorXd dropped = extract_features(ex, images[0]);
  EXPECT_EQ(all.size(), 400);
  // Dropped features are the non-DC channels at every location.
  EXPECT_EQ(dropped(0), all(1));
  EXPECT_EQ(dropped(15), all(17));
}

TEST_F(SmallExtractor, ThreeChannelFeatureLength) {
  const auto rgb = random_images(8, {32, 32, 3}, 4);
  const FeatureExtractor ex = fit_extractor(rgb, modified_lenet5_specs());
  EXPECT_EQ(ex.feature_dim(), 1575);
  EXPECT_EQ(extract_features(ex, rgb[0]).size(), 1575);
  EXPECT_EQ(ex.layers[1].saab.input_dim, 5 * 5 * 32);
}

TEST_F(SmallExtractor, ZeroImageGivesBiasAtFirstLayer) {
  const FeatureExtractor ex = fit_extractor(images, lenet5_specs());
  const Tensor3 out = layer_forward(ex.layers[0], Tensor3(32, 32, 1));
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, ex.layers[0].saab.bias);
}

TEST_F(SmallExtractor, TrainingResponsesAreNeverNegativeBeforeRelu) {
  const FeatureExtractor ex = fit_extractor(images, lenet5_specs());
  for (const Tensor3& img : images) {
    const MatrixXd pre = saab_preactivation(ex.layers[0].saab, extract_patches(img, {5, 5}, 1));
    EXPECT_EQ((pre.array() < 0.0).count(), 0);
  }
}

TEST_F(SmallExtractor, IntensityShiftOnlyTouchesDcAtFirstLayer) {
  const FeatureExtractor ex = fit_extractor(images, lenet5_specs());
  Tensor3 shifted = images[0];
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted.data()[i] += 0.2;
  const MatrixXd p0 = extract_patches(images[0], {5, 5}, 1);
  const MatrixXd p1 = extract_patches(shifted, {5, 5}, 1);
  const MatrixXd y0 = apply_saab_rows(ex.layers[0].saab, p0);
  const MatrixXd y1 = apply_saab_rows(ex.layers[0].saab, p1);
  EXPECT_LE((y0.rightCols(5) - y1.rightCols(5)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_GT((y0.col(0) - y1.col(0)).cwiseAbs().minCoeff(), 0.9);  // 0.2 * sqrt(25)
}

TEST_F(SmallExtractor, DcOnlySingleLayerGivesWindowMeansPlusBias) {
  std::vector<ConvLayerSpec> specs{ConvLayerSpec{{5, 5}, 1, 1, true, std::nullopt}};
  FeatureExtractor ex = fit_extractor(images, specs, {std::nullopt, 0, 1e-4, false});
  const VectorXd f = extract_features(ex, images[0]);
  const MatrixXd p = extract_patches(images[0], {5, 5}, 1);
  ASSERT_EQ(f.size(), 784);
  for (Index i = 0; i < 784; ++i) EXPECT_NEAR(f(i), p.row(i).mean() * 5.0 + ex.layers[0].saab.bias, 1e-12);
}

TEST_F(SmallExtractor, RejectsWrongImageShape) {
  const FeatureExtractor ex = fit_extractor(images, lenet5_specs());
  EXPECT_THROW(extract_features(ex, Tensor3(28, 28, 1)), Error);
  EXPECT_THROW(fit_extractor(images, {}), Error);
  EXPECT_THROW(fit_extractor(std::vector<Tensor3>{}, lenet5_specs()), Error);
}

TEST_F(SmallExtractor, DeterministicForFixedSeed) {
  const ExtractorFitOptions opts{5, 99, 1e-4, true};
  const FeatureExtractor a = fit_extractor(images, lenet5_specs(), opts);
  const FeatureExtractor b = fit_extractor(images, lenet5_specs(), opts);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(a.layers[l].saab.kernels, b.layers[l].saab.kernels);
    EXPECT_EQ(a.layers[l].saab.bias, b.layers[l].saab.bias);
  }
  EXPECT_EQ(extract_features(a, images[3]), extract_features(b, images[3]));
}

TEST(SelectFitImages, CapSamplesDistinctSortedIndices) {
  const auto all = select_fit_images(10, std::nullopt, 1);
  EXPECT_EQ(all.size(), 10u);
  const auto some = select_fit_images(100, 20, 5);
  EXPECT_EQ(some.size(), 20u);
  EXPECT_TRUE(std::is_sorted(some.begin(), some.end()));
  EXPECT_EQ(std::adjacent_find(some.begin(), some.end()), some.end());
  EXPECT_EQ(some, select_fit_images(100, 20, 5));
  EXPECT_NE(some, select_fit_images(100, 20, 6));
  EXPECT_EQ(select_fit_images(5, 50, 1).size(), 5u);
}

}  // namespace
}  // namespace ffcnn
