#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ffcnn/datasets.hpp"
#include "log_capture.hpp"

namespace ffcnn {
namespace {

namespace fs = std::filesystem;
using Bytes = std::vector<unsigned char>;

void put_be32(Bytes& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

void write_file(const fs::path& p, const Bytes& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// Pixel (i, r, c) = (i * 7 + r * 3 + c) mod 256: a gradient that differs per image.
unsigned char gradient(std::uint32_t i, std::uint32_t r, std::uint32_t c) {
  return static_cast<unsigned char>((i * 7 + r * 3 + c) % 256);
}

Bytes idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols) {
  Bytes b;
  put_be32(b, 0x803);
  put_be32(b, n);
  put_be32(b, rows);
  put_be32(b, cols);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) b.push_back(gradient(i, r, c));
  return b;
}

Bytes idx_labels(std::uint32_t n) {
  Bytes b;
  put_be32(b, 0x801);
  put_be32(b, n);
  for (std::uint32_t i = 0; i < n; ++i) b.push_back(static_cast<unsigned char>(i % 10));
  return b;
}

class DatasetFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("ffcnn_ds_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string error_of(const std::function<void()>& f, ErrorKind expected = ErrorKind::data) {
    try {
      f();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), expected);
      return e.what();
    }
    ADD_FAILURE() << "no error thrown";
    return {};
  }

  fs::path dir;
  testing::LogCapture logs;
};

TEST_F(DatasetFiles, IdxGradientRoundTripWithPadding) {
  write_file(dir / "train-images-idx3-ubyte", idx_images(5, 28, 28));
  write_file(dir / "train-labels-idx1-ubyte", idx_labels(5));
  const LabeledImageSet set = load_mnist(dir, Split::train);
  ASSERT_EQ(set.size(), 5u);
  EXPECT_EQ(set.shape, (Shape3{32, 32, 1}));
  for (std::uint32_t i = 0; i < 5; ++i) {
    const Tensor3& t = set.images[i];
    EXPECT_EQ(t.shape(), set.shape);
    EXPECT_EQ(set.labels[i], static_cast<int>(i % 10));
    for (std::uint32_t r = 0; r < 28; ++r)
      for (std::uint32_t c = 0; c < 28; ++c)
        ASSERT_EQ(t(static_cast<int>(r) + 2, static_cast<int>(c) + 2, 0), gradient(i, r, c) / 255.0);
    for (int k = 0; k < 32; ++k) {
      EXPECT_EQ(t(0, k, 0), 0.0);
      EXPECT_EQ(t(31, k, 0), 0.0);
      EXPECT_EQ(t(k, 1, 0), 0.0);
      EXPECT_EQ(t(k, 30, 0), 0.0);
    }
  }
  ASSERT_FALSE(logs.infos.empty());
  EXPECT_NE(logs.infos.back().find("fnv1a64="), std::string::npos);
}

TEST_F(DatasetFiles, TestSplitUsesT10kFiles) {
  write_file(dir / "t10k-images-idx3-ubyte", idx_images(3, 28, 28));
  write_file(dir / "t10k-labels-idx1-ubyte", idx_labels(3));
  EXPECT_EQ(load_mnist(dir, Split::test).size(), 3u);
  error_of([&] { load_mnist(dir, Split::train); });
}

TEST_F(DatasetFiles, AllZeroImageStaysZero) {
  Bytes img;
  put_be32(img, 0x803);
  put_be32(img, 1);
  put_be32(img, 28);
  put_be32(img, 28);
  img.resize(img.size() + 28 * 28, 0);
  write_file(dir / "i", img);
  write_file(dir / "l", idx_labels(1));
  const auto set = decode_idx(dir / "i", dir / "l", 2, "zeros");
  for (double v : set.images[0].values()) EXPECT_EQ(v, 0.0);
}

TEST_F(DatasetFiles, IdxBadMagic) {
  Bytes img = idx_images(2, 4, 4);
  img[3] = 0x01;
  write_file(dir / "i", img);
  write_file(dir / "l", idx_labels(2));
  const std::string msg = error_of([&] { decode_idx(dir / "i", dir / "l", 0, "x"); });
  EXPECT_NE(msg.find("magic"), std::string::npos);
  EXPECT_NE(msg.find("offset 0"), std::string::npos);

  write_file(dir / "i", idx_images(2, 4, 4));
  Bytes lab = idx_labels(2);
  lab[3] = 0x03;
  write_file(dir / "l", lab);
  EXPECT_NE(error_of([&] { decode_idx(dir / "i", dir / "l", 0, "x"); }).find("magic"), std::string::npos);
}

TEST_F(DatasetFiles, IdxTruncatedPayload) {
  Bytes img = idx_images(3, 4, 4);
  img.resize(img.size() - 5);
  write_file(dir / "i", img);
  write_file(dir / "l", idx_labels(3));
  const std::string msg = error_of([&] { decode_idx(dir / "i", dir / "l", 0, "x"); });
  EXPECT_NE(msg.find("truncated at offset " + std::to_string(img.size())), std::string::npos);

  write_file(dir / "i", Bytes{0, 0, 8});
  EXPECT_NE(error_of([&] { decode_idx(dir / "i", dir / "l", 0, "x"); }).find("truncated"), std::string::npos);
}

TEST_F(DatasetFiles, IdxCountMismatchNamesBothCounts) {
  write_file(dir / "i", idx_images(7, 4, 4));
  write_file(dir / "l", idx_labels(5));
  const std::string msg = error_of([&] { decode_idx(dir / "i", dir / "l", 0, "x"); });
  EXPECT_NE(msg.find('7'), std::string::npos);
  EXPECT_NE(msg.find('5'), std::string::npos);
}

TEST_F(DatasetFiles, IdxLabelOutOfRange) {
  write_file(dir / "i", idx_images(2, 4, 4));
  Bytes lab = idx_labels(2);
  lab[9] = 12;
  write_file(dir / "l", lab);
  EXPECT_NE(error_of([&] { decode_idx(dir / "i", dir / "l", 0, "x"); }).find("offset 9"), std::string::npos);
}

Bytes cifar_records(int n) {
  Bytes b;
  for (int i = 0; i < n; ++i) {
    b.push_back(static_cast<unsigned char>((i * 3) % 10));
    for (int ch = 0; ch < 3; ++ch)
      for (int p = 0; p < 1024; ++p) b.push_back(static_cast<unsigned char>((ch * 85 + p + i) % 256));
  }
  return b;
}

TEST_F(DatasetFiles, CifarPlanarRoundTrip) {
  write_file(dir / "test_batch.bin", cifar_records(4));
  const LabeledImageSet set = load_cifar10(dir, Split::test);
  ASSERT_EQ(set.size(), 4u);
  EXPECT_EQ(set.shape, (Shape3{32, 32, 3}));
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(set.labels[static_cast<std::size_t>(i)], (i * 3) % 10);
    for (int ch = 0; ch < 3; ++ch)
      for (int p = 0; p < 1024; ++p)
        ASSERT_EQ(set.images[static_cast<std::size_t>(i)](p / 32, p % 32, ch), ((ch * 85 + p + i) % 256) / 255.0);
  }
}

TEST_F(DatasetFiles, CifarTrainConcatenatesBatchesInOrder) {
  for (int b = 1; b <= 5; ++b) write_file(dir / ("data_batch_" + std::to_string(b) + ".bin"), cifar_records(b));
  const LabeledImageSet set = load_cifar10(dir, Split::train);
  EXPECT_EQ(set.size(), 15u);
  EXPECT_EQ(set.labels[1], 0);  // first record of batch 2
  EXPECT_EQ(set.labels[2], 3);
}

TEST_F(DatasetFiles, CifarFullIntensityIsOne) {
  Bytes b(3073, 255);
  b[0] = 9;
  write_file(dir / "test_batch.bin", b);
  const auto set = load_cifar10(dir, Split::test);
  for (double v : set.images[0].values()) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(set.labels[0], 9);
}

TEST_F(DatasetFiles, CifarRecordSizeMismatch) {
  Bytes b = cifar_records(2);
  b.pop_back();
  write_file(dir / "test_batch.bin", b);
  EXPECT_NE(error_of([&] { load_cifar10(dir, Split::test); }).find("3073"), std::string::npos);
  Bytes bad = cifar_records(1);
  bad[0] = 10;
  write_file(dir / "test_batch.bin", bad);
  error_of([&] { load_cifar10(dir, Split::test); });
}

TEST(Split, Parse) {
  EXPECT_EQ(parse_split("train"), Split::train);
  EXPECT_EQ(parse_split("test"), Split::test);
  EXPECT_THROW(parse_split("val"), Error);
}

}  // namespace
}  // namespace ffcnn
