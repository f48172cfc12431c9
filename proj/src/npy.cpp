#include "coreinterp/npy.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>

#include "coreinterp/errors.hpp"

namespace coreinterp::npy {

static_assert(std::endian::native == std::endian::little,
              "NPY '<f4' I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";

std::string shape_tuple(std::span<const std::size_t> shape) {
  std::string s = "(";
  for (std::size_t k = 0; k < shape.size(); ++k) {
    s += std::to_string(shape[k]);
    if (shape.size() == 1 || k + 1 < shape.size()) s += ",";
    if (k + 1 < shape.size()) s += " ";
  }
  return s + ")";
}

std::size_t element_count(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

}  // namespace

void write(const std::filesystem::path& path, std::span<const std::size_t> shape,
           std::span<const float> data) {
  if (element_count(shape) != data.size()) {
    throw ValidationError("npy write " + path.string() + ": shape does not match data size");
  }
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': " +
                       shape_tuple(shape) + ", }";
  // magic(6) + version(2) + header length(2) + header, padded to 64 bytes.
  const std::size_t preamble = 10;
  std::size_t total = preamble + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
  out.write(kMagic, 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw ValidationError("failed writing " + path.string());
}

Array read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing tensor file " + path.string());
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, kMagic, 6) != 0) {
    throw ValidationError(path.string() + ": not an NPY file");
  }
  unsigned char version[2];
  in.read(reinterpret_cast<char*>(version), 2);
  std::size_t header_len = 0;
  if (version[0] == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    header_len = b[0] | (b[1] << 8);
  } else if (version[0] == 2) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    header_len = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::size_t>(b[3]) << 24);
  } else {
    throw ValidationError(path.string() + ": unsupported NPY version " +
                          std::to_string(version[0]));
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw ValidationError(path.string() + ": truncated NPY header");

  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex fortran_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  std::smatch m;
  if (!std::regex_search(header, m, descr_re) || m[1] != "<f4") {
    throw ValidationError(path.string() + ": expected dtype '<f4'");
  }
  if (!std::regex_search(header, m, fortran_re) || m[1] != "False") {
    throw ValidationError(path.string() + ": fortran_order arrays are not supported");
  }
  if (!std::regex_search(header, m, shape_re)) {
    throw ValidationError(path.string() + ": NPY header has no shape");
  }
  Array arr;
  std::stringstream dims(m[1].str());
  std::string tok;
  while (std::getline(dims, tok, ',')) {
    auto first = tok.find_first_not_of(' ');
    if (first == std::string::npos) continue;
    arr.shape.push_back(static_cast<std::size_t>(std::stoull(tok.substr(first))));
  }
  arr.data.resize(element_count(arr.shape));
  in.read(reinterpret_cast<char*>(arr.data.data()),
          static_cast<std::streamsize>(arr.data.size() * sizeof(float)));
  if (!in) throw ValidationError(path.string() + ": truncated NPY payload");
  return arr;
}

namespace {

std::vector<float> to_float(std::span<const double> values) {
  return {values.begin(), values.end()};
}

void require_finite(const Array& arr, const std::filesystem::path& path) {
  for (std::size_t k = 0; k < arr.data.size(); ++k) {
    if (!std::isfinite(arr.data[k])) {
      throw ValidationError(path.string() + ": non-finite value at flat index " +
                            std::to_string(k));
    }
  }
}

}  // namespace

void save_tensor(const std::filesystem::path& path, const Tensor4& t) {
  const auto& s = t.shape();
  const std::size_t shape[4] = {s.n, s.h, s.w, s.d};
  write(path, shape, to_float(t.values()));
}

Tensor4 load_tensor(const std::filesystem::path& path) {
  Array arr = read(path);
  if (arr.shape.size() != 4) {
    throw ValidationError(path.string() + ": expected a 4-D [n, h, w, d] array");
  }
  require_finite(arr, path);
  Shape4 s{arr.shape[0], arr.shape[1], arr.shape[2], arr.shape[3]};
  if (s.size() == 0) throw ValidationError(path.string() + ": empty tensor");
  return Tensor4(s, std::vector<double>(arr.data.begin(), arr.data.end()));
}

void save_matrix(const std::filesystem::path& path, const Matrix& m) {
  const std::size_t shape[2] = {static_cast<std::size_t>(m.rows()),
                                static_cast<std::size_t>(m.cols())};
  write(path, shape, to_float({m.data(), static_cast<std::size_t>(m.size())}));
}

Matrix load_matrix(const std::filesystem::path& path) {
  Array arr = read(path);
  if (arr.shape.size() != 2) throw ValidationError(path.string() + ": expected a 2-D array");
  require_finite(arr, path);
  Matrix m(arr.shape[0], arr.shape[1]);
  std::copy(arr.data.begin(), arr.data.end(), m.data());
  return m;
}

void save_vector(const std::filesystem::path& path, const Vector& v) {
  const std::size_t shape[1] = {static_cast<std::size_t>(v.size())};
  write(path, shape, to_float({v.data(), static_cast<std::size_t>(v.size())}));
}

Vector load_vector(const std::filesystem::path& path) {
  Array arr = read(path);
  if (arr.shape.size() != 1) throw ValidationError(path.string() + ": expected a 1-D array");
  require_finite(arr, path);
  Vector v(static_cast<Eigen::Index>(arr.data.size()));
  for (std::size_t k = 0; k < arr.data.size(); ++k) v[static_cast<Eigen::Index>(k)] = arr.data[k];
  return v;
}

}  // namespace coreinterp::npy
