#pragma once

#include <cstddef>
#include <vector>

#include "ffcnn/error.hpp"

namespace ffcnn {

struct Shape3 {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
           static_cast<std::size_t>(channels);
  }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Dense height x width x channels array, channel index fastest.
class Tensor3 {
 public:
  Tensor3() = default;
  explicit Tensor3(Shape3 shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {
    require(shape.height > 0 && shape.width > 0 && shape.channels > 0, ErrorKind::config,
            "tensor dims must be positive, got ", shape.height, "x", shape.width, "x",
            shape.channels);
  }
  Tensor3(int height, int width, int channels, double fill = 0.0)
      : Tensor3(Shape3{height, width, channels}, fill) {}

  const Shape3& shape() const { return shape_; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }
  std::size_t size() const { return data_.size(); }

  std::size_t offset(int row, int col, int ch) const {
    return (static_cast<std::size_t>(row) * shape_.width + col) * shape_.channels + ch;
  }
  double& operator()(int row, int col, int ch) { return data_[offset(row, col, ch)]; }
  double operator()(int row, int col, int ch) const { return data_[offset(row, col, ch)]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& values() const { return data_; }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  Shape3 shape_{};
  std::vector<double> data_;
};

}  // namespace ffcnn
