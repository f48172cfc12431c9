#include "coreinterp/tensor.hpp"

#include <cmath>
#include <sstream>

#include "coreinterp/errors.hpp"

namespace coreinterp {

std::string to_string(const Shape4& s) {
  std::ostringstream os;
  os << "[" << s.n << ", " << s.h << ", " << s.w << ", " << s.d << "]";
  return os.str();
}

Tensor4::Tensor4(Shape4 shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor4::Tensor4(Shape4 shape, std::vector<double> values)
    : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.size()) {
    throw ValidationError("tensor value count " + std::to_string(data_.size()) +
                          " does not match shape " + to_string(shape_));
  }
}

Tensor4 Tensor4::gather(std::span<const std::size_t> rows) const {
  Shape4 out_shape = shape_;
  out_shape.n = rows.size();
  Tensor4 out(out_shape);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= shape_.n) {
      throw ValidationError("sample index " + std::to_string(rows[k]) + " out of range for " +
                            to_string(shape_));
    }
    auto src = sample(rows[k]);
    std::copy(src.begin(), src.end(), out.sample(k).begin());
  }
  return out;
}

Tensor4 Tensor4::select_channels(std::span<const std::size_t> channels) const {
  for (std::size_t c : channels) {
    if (c >= shape_.d) {
      throw ValidationError("channel index " + std::to_string(c) + " out of range for depth " +
                            std::to_string(shape_.d));
    }
  }
  Shape4 out_shape = shape_;
  out_shape.d = channels.size();
  Tensor4 out(out_shape);
  const std::size_t cells = shape_.n * shape_.h * shape_.w;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (std::size_t k = 0; k < channels.size(); ++k) {
      out.data_[cell * channels.size() + k] = data_[cell * shape_.d + channels[k]];
    }
  }
  return out;
}

void Tensor4::check_finite(const std::string& what) const {
  for (std::size_t k = 0; k < data_.size(); ++k) {
    if (!std::isfinite(data_[k])) {
      throw ValidationError(what + ": non-finite value at flat index " + std::to_string(k));
    }
  }
}

Matrix flatten(const Tensor4& t) {
  const auto& s = t.shape();
  Matrix m(s.n * s.h * s.w, s.d);
  std::copy(t.values().begin(), t.values().end(), m.data());
  return m;
}

Tensor4 unflatten(const Matrix& m, Shape4 shape) {
  if (static_cast<std::size_t>(m.rows()) != shape.n * shape.h * shape.w ||
      static_cast<std::size_t>(m.cols()) != shape.d) {
    throw ValidationError("cannot reshape " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()) + " matrix to " + to_string(shape));
  }
  return Tensor4(shape, std::vector<double>(m.data(), m.data() + m.size()));
}

Tensor4 clamp_nonnegative(const Tensor4& t) {
  Tensor4 out = t;
  for (double& x : out.values()) x = x < 0.0 ? 0.0 : x;
  return out;
}

}  // namespace coreinterp
