#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace coreinterp {

/// Dense row-major matrix used for every 2-D quantity in the toolkit.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Shape of a 4-D activation or interpretation-map tensor, axis order [n, h, w, d].
struct Shape4 {
  std::size_t n = 0, h = 0, w = 0, d = 0;

  std::size_t size() const { return n * h * w * d; }
  std::size_t locations() const { return h * w; }
  bool operator==(const Shape4&) const = default;
};

std::string to_string(const Shape4& s);

/// Row-major [n, h, w, d] tensor. Values are held in double precision; the
/// on-disk interchange type is float32 and converts losslessly in both
/// directions for values that originated as float32.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 shape, double fill = 0.0);
  Tensor4(Shape4 shape, std::vector<double> values);

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  double& at(std::size_t i, std::size_t u, std::size_t v, std::size_t c) {
    return data_[offset(i, u, v, c)];
  }
  double at(std::size_t i, std::size_t u, std::size_t v, std::size_t c) const {
    return data_[offset(i, u, v, c)];
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  /// Contiguous [h*w*d] block of one sample.
  std::span<const double> sample(std::size_t i) const {
    const std::size_t stride = shape_.h * shape_.w * shape_.d;
    return {data_.data() + i * stride, stride};
  }
  std::span<double> sample(std::size_t i) {
    const std::size_t stride = shape_.h * shape_.w * shape_.d;
    return {data_.data() + i * stride, stride};
  }

  /// Copy of the listed samples, in the listed order.
  Tensor4 gather(std::span<const std::size_t> rows) const;

  /// Copy keeping only the listed channels, in the listed order.
  Tensor4 select_channels(std::span<const std::size_t> channels) const;

  /// Throws ValidationError naming `what` if any entry is NaN or infinite.
  void check_finite(const std::string& what) const;

 private:
  std::size_t offset(std::size_t i, std::size_t u, std::size_t v, std::size_t c) const {
    return ((i * shape_.h + u) * shape_.w + v) * shape_.d + c;
  }

  Shape4 shape_{};
  std::vector<double> data_;
};

/// Reshape [n, h, w, d] into [(n*h*w), d]. Row order is sample-major, then
/// spatial row-major: row (i*h + u)*w + v holds location (u, v) of sample i.
Matrix flatten(const Tensor4& t);

/// Inverse of flatten for a known shape.
Tensor4 unflatten(const Matrix& m, Shape4 shape);

/// Element-wise max(x, 0).
Tensor4 clamp_nonnegative(const Tensor4& t);

}  // namespace coreinterp
