#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "coreinterp/tensor.hpp"

namespace testsupport {

using coreinterp::Matrix;
using coreinterp::Shape4;
using coreinterp::Tensor4;
using coreinterp::Vector;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

inline Tensor4 random_tensor(Shape4 s, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor4 t(s);
  // values representable in float32 so disk round-trips are exact
  for (auto& x : t.values()) x = static_cast<float>(u(rng));
  return t;
}

inline Matrix random_orthogonal(std::size_t p, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(gaussian_matrix(p, p, rng)));
  return Matrix(Eigen::MatrixXd(qr.householderQ()));
}

/// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("coreinterp_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testsupport
