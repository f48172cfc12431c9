#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "coreinterp/tensor.hpp"

namespace coreinterp::npy {

/// A little-endian float32, C-order array as stored in an NPY v1.0 file.
struct Array {
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

/// Writes NPY v1.0 with descr '<f4' and fortran_order False.
void write(const std::filesystem::path& path, std::span<const std::size_t> shape,
           std::span<const float> data);

/// Reads an NPY v1.0/v2.0 '<f4' C-order file. Any other dtype or layout is a
/// ValidationError naming the file.
Array read(const std::filesystem::path& path);

void save_tensor(const std::filesystem::path& path, const Tensor4& t);
/// Loads a 4-D array and rejects non-finite entries.
Tensor4 load_tensor(const std::filesystem::path& path);

void save_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix load_matrix(const std::filesystem::path& path);

void save_vector(const std::filesystem::path& path, const Vector& v);
Vector load_vector(const std::filesystem::path& path);

}  // namespace coreinterp::npy
