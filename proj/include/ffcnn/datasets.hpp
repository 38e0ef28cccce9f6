#pragma once

// MNIST (IDX) and CIFAR-10 (binary batch) readers.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "ffcnn/error.hpp"
#include "ffcnn/tensor.hpp"

namespace ffcnn {

enum class Split { train, test };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw Error(ErrorKind::config, detail::concat("unknown split '", s, "' (expected train|test)"));
}

struct LabeledImageSet {
  std::string name;
  Shape3 shape;
  std::vector<Tensor3> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::data, "cannot open ", path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                               const std::filesystem::path& path) {
  require(buf.size() >= offset + 4, ErrorKind::data, path.string(), ": truncated header at offset ",
          offset);
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

inline std::uint64_t fnv1a64(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 1099511628211ULL;
  return h;
}

}  // namespace detail

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Decodes an IDX image/label file pair. Images are zero-padded by `pad`
/// pixels on every side and scaled to [0, 1].
inline LabeledImageSet decode_idx(const std::filesystem::path& images_path,
                                  const std::filesystem::path& labels_path, int pad,
                                  std::string name) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  const std::uint32_t img_magic = detail::read_be32(img, 0, images_path);
  require(img_magic == kIdxImagesMagic, ErrorKind::data, images_path.string(), ": bad magic 0x",
          std::hex, img_magic, " at offset 0 (expected 0x803)");
  const std::uint32_t lab_magic = detail::read_be32(lab, 0, labels_path);
  require(lab_magic == kIdxLabelsMagic, ErrorKind::data, labels_path.string(), ": bad magic 0x",
          std::hex, lab_magic, " at offset 0 (expected 0x801)");
  const std::uint32_t n_img = detail::read_be32(img, 4, images_path);
  const std::uint32_t rows = detail::read_be32(img, 8, images_path);
  const std::uint32_t cols = detail::read_be32(img, 12, images_path);
  const std::uint32_t n_lab = detail::read_be32(lab, 4, labels_path);
  require(n_img == n_lab, ErrorKind::data, "image file holds ", n_img, " images but label file holds ",
          n_lab, " labels");
  require(rows >= 1 && cols >= 1 && rows <= 4096 && cols <= 4096, ErrorKind::data,
          images_path.string(), ": implausible image dims ", rows, "x", cols);
  const std::size_t pixels = std::size_t{rows} * cols;
  const std::size_t need_img = 16 + std::size_t{n_img} * pixels;
  require(img.size() >= need_img, ErrorKind::data, images_path.string(), ": truncated at offset ",
          img.size(), ", expected ", need_img, " bytes for ", n_img, " images");
  require(lab.size() >= 8 + std::size_t{n_lab}, ErrorKind::data, labels_path.string(),
          ": truncated at offset ", lab.size(), ", expected ", 8 + std::size_t{n_lab}, " bytes");

  LabeledImageSet set;
  set.name = std::move(name);
  set.shape = {static_cast<int>(rows) + 2 * pad, static_cast<int>(cols) + 2 * pad, 1};
  set.images.reserve(n_img);
  set.labels.reserve(n_img);
  for (std::uint32_t i = 0; i < n_img; ++i) {
    const unsigned char* src = img.data() + 16 + std::size_t{i} * pixels;
    Tensor3 t(set.shape);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c)
        t(static_cast<int>(r) + pad, static_cast<int>(c) + pad, 0) = src[r * cols + c] / 255.0;
    set.images.push_back(std::move(t));
    const int label = lab[8 + i];
    require(label <= 9, ErrorKind::data, labels_path.string(), ": label ", label, " at offset ", 8 + i);
    set.labels.push_back(label);
  }
  if (n_img > 0)
    log::info(set.name, ": ", n_img, " images, first-image fnv1a64=", std::hex,
              detail::fnv1a64(img.data() + 16, pixels));
  return set;
}

/// MNIST from the four standard IDX files in `dir`; 28x28 digits are padded to 32x32.
inline LabeledImageSet load_mnist(const std::filesystem::path& dir, Split split) {
  const std::string prefix = split == Split::train ? "train" : "t10k";
  return decode_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"), 2,
                    "mnist-" + std::string(to_string(split)));
}

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

/// Appends the records of one CIFAR-10 binary batch (label byte followed by
/// channel-planar R, G, B 32x32 planes).
inline void decode_cifar_batch(const std::filesystem::path& path, LabeledImageSet& set) {
  const auto buf = detail::read_file(path);
  require(!buf.empty() && buf.size() % kCifarRecord == 0, ErrorKind::data, path.string(), ": size ",
          buf.size(), " is not a positive multiple of the ", kCifarRecord, "-byte record");
  const std::size_t plane = kCifarSide * kCifarSide;
  for (std::size_t off = 0; off < buf.size(); off += kCifarRecord) {
    const int label = buf[off];
    require(label <= 9, ErrorKind::data, path.string(), ": label ", label, " at offset ", off);
    Tensor3 t(static_cast<int>(kCifarSide), static_cast<int>(kCifarSide), 3);
    for (int ch = 0; ch < 3; ++ch)
      for (std::size_t p = 0; p < plane; ++p)
        t(static_cast<int>(p / kCifarSide), static_cast<int>(p % kCifarSide), ch) =
            buf[off + 1 + ch * plane + p] / 255.0;
    set.images.push_back(std::move(t));
    set.labels.push_back(label);
  }
}

/// CIFAR-10 from `dir` holding data_batch_1..5.bin and test_batch.bin.
inline LabeledImageSet load_cifar10(const std::filesystem::path& dir, Split split) {
  LabeledImageSet set;
  set.name = "cifar10-" + std::string(to_string(split));
  set.shape = {32, 32, 3};
  if (split == Split::train) {
    for (int b = 1; b <= 5; ++b) decode_cifar_batch(dir / ("data_batch_" + std::to_string(b) + ".bin"), set);
  } else {
    decode_cifar_batch(dir / "test_batch.bin", set);
  }
  log::info(set.name, ": ", set.size(), " images");
  return set;
}

}  // namespace ffcnn
