#include "coreinterp/viz.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <numeric>

#include <png.h>

#include "coreinterp/errors.hpp"

namespace fs = std::filesystem;

namespace coreinterp::viz {

namespace {

constexpr std::uint8_t kInferno[256][3] = {
#include "colormap_inferno.inc"
};

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image read_png(const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ValidationError("cannot open image " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw ValidationError(path.string() + ": not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("libpng initialization failed");
  }
  Image img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError(path.string() + ": unreadable PNG");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img = Image(png_get_image_width(png, info), png_get_image_height(png, info));
  if (png_get_rowbytes(png, info) != img.width * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError(path.string() + ": unsupported PNG pixel layout");
  }
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixel(0, y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const fs::path& path, const Image& img) {
  if (img.width == 0 || img.height == 0 || img.rgb.size() != img.width * img.height * 3) {
    throw ValidationError("cannot write an empty or malformed image");
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ValidationError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw ValidationError("libpng initialization failed");
  }
  std::vector<png_bytep> rows(img.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ValidationError("failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 9);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = const_cast<png_bytep>(img.pixel(0, y));
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------

Vector score_maps(const Tensor4& maps, std::size_t sample) {
  const auto& s = maps.shape();
  if (sample >= s.n) throw ValidationError("sample index out of range");
  Vector score = Vector::Zero(static_cast<Eigen::Index>(s.d));
  auto block = maps.sample(sample);
  for (std::size_t loc = 0; loc < s.h * s.w; ++loc) {
    for (std::size_t j = 0; j < s.d; ++j) score[static_cast<Eigen::Index>(j)] += block[loc * s.d + j];
  }
  return score;
}

std::vector<std::size_t> top_channels(const Vector& scores, std::size_t k) {
  const auto d = static_cast<std::size_t>(scores.size());
  if (k < 1 || k > d) {
    throw ValidationError("k=" + std::to_string(k) + " outside [1, " + std::to_string(d) + "]");
  }
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[static_cast<Eigen::Index>(a)] > scores[static_cast<Eigen::Index>(b)];
  });
  order.resize(k);
  return order;
}

Matrix max_combine(const Tensor4& maps, std::size_t sample, std::size_t k) {
  const auto& s = maps.shape();
  const auto channels = top_channels(score_maps(maps, sample), k);
  Matrix grid(static_cast<Eigen::Index>(s.h), static_cast<Eigen::Index>(s.w));
  for (std::size_t u = 0; u < s.h; ++u) {
    for (std::size_t v = 0; v < s.w; ++v) {
      double best = maps.at(sample, u, v, channels[0]);
      for (std::size_t c : channels) best = std::max(best, maps.at(sample, u, v, c));
      grid(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) = best;
    }
  }
  return grid;
}

Matrix resize_bilinear(const Matrix& src, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ValidationError("resize target must be non-empty");
  const auto in_h = static_cast<double>(src.rows());
  const auto in_w = static_cast<double>(src.cols());
  Matrix out(static_cast<Eigen::Index>(height), static_cast<Eigen::Index>(width));
  auto coord = [](std::size_t dst, double scale, double limit, Eigen::Index& lo, Eigen::Index& hi,
                  double& frac) {
    double x = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    x = std::clamp(x, 0.0, limit - 1.0);
    lo = static_cast<Eigen::Index>(std::floor(x));
    hi = std::min<Eigen::Index>(lo + 1, static_cast<Eigen::Index>(limit) - 1);
    frac = x - static_cast<double>(lo);
  };
  const double sy = in_h / static_cast<double>(height);
  const double sx = in_w / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    Eigen::Index y0, y1;
    double fy;
    coord(y, sy, in_h, y0, y1, fy);
    for (std::size_t x = 0; x < width; ++x) {
      Eigen::Index x0, x1;
      double fx;
      coord(x, sx, in_w, x0, x1, fx);
      const double top = src(y0, x0) * (1.0 - fx) + src(y0, x1) * fx;
      const double bottom = src(y1, x0) * (1.0 - fx) + src(y1, x1) * fx;
      out(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) = top * (1.0 - fy) + bottom * fy;
    }
  }
  return out;
}

Matrix minmax_normalize(const Matrix& m) {
  const double lo = m.minCoeff();
  const double hi = m.maxCoeff();
  if (!(hi > lo)) return Matrix::Zero(m.rows(), m.cols());
  return ((m.array() - lo) / (hi - lo)).matrix();
}

Heatmap compose_heatmap(const Tensor4& maps, std::size_t sample, std::size_t k, std::size_t height,
                        std::size_t width) {
  Heatmap h;
  h.k = k;
  h.values = minmax_normalize(resize_bilinear(max_combine(maps, sample, k), height, width));
  return h;
}

std::array<std::uint8_t, 3> colormap(double t) {
  const double c = std::clamp(std::isnan(t) ? 0.0 : t, 0.0, 1.0);
  const auto idx = static_cast<std::size_t>(std::lround(c * 255.0));
  return {kInferno[idx][0], kInferno[idx][1], kInferno[idx][2]};
}

Image overlay(const Heatmap& heat, const Image& image) {
  if (static_cast<std::size_t>(heat.values.rows()) != image.height ||
      static_cast<std::size_t>(heat.values.cols()) != image.width) {
    throw ValidationError("heatmap size does not match the image");
  }
  Image out(image.width, image.height);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const double h = std::clamp(heat.values(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)), 0.0, 1.0);
      const auto color = colormap(h);
      const std::uint8_t* src = image.pixel(x, y);
      std::uint8_t* dst = out.pixel(x, y);
      for (int ch = 0; ch < 3; ++ch) {
        const double v = kBlend * src[ch] + (1.0 - kBlend) * h * color[static_cast<std::size_t>(ch)];
        dst[ch] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
      }
    }
  }
  return out;
}

void overlay_file(const Heatmap& heat, const fs::path& image_path, const fs::path& out_path) {
  write_png(out_path, overlay(heat, read_png(image_path)));
}

Image compose_panel(const std::vector<std::vector<Image>>& tiles, std::size_t pad) {
  if (tiles.empty() || tiles.front().empty()) throw ValidationError("empty panel");
  const std::size_t tw = tiles.front().front().width;
  const std::size_t th = tiles.front().front().height;
  std::size_t cols = 0;
  for (const auto& row : tiles) {
    cols = std::max(cols, row.size());
    for (const auto& t : row) {
      if (t.width != tw || t.height != th) throw ValidationError("panel tiles differ in size");
    }
  }
  Image panel(cols * tw + (cols + 1) * pad, tiles.size() * th + (tiles.size() + 1) * pad, 255);
  for (std::size_t r = 0; r < tiles.size(); ++r) {
    for (std::size_t c = 0; c < tiles[r].size(); ++c) {
      const std::size_t ox = pad + c * (tw + pad);
      const std::size_t oy = pad + r * (th + pad);
      for (std::size_t y = 0; y < th; ++y) {
        std::copy_n(tiles[r][c].pixel(0, y), tw * 3, panel.pixel(ox, oy + y));
      }
    }
  }
  return panel;
}

Image test_card(std::size_t width, std::size_t height, std::uint64_t seed) {
  Image img(width, height);
  const std::size_t cell = std::max<std::size_t>(1, std::min(width, height) / 8);
  const std::uint64_t phase = seed % 3;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      std::uint8_t* p = img.pixel(x, y);
      const bool checker = ((x / cell) + (y / cell) + phase) % 2 == 0;
      p[0] = static_cast<std::uint8_t>((255 * x) / std::max<std::size_t>(1, width - 1));
      p[1] = static_cast<std::uint8_t>((255 * y) / std::max<std::size_t>(1, height - 1));
      p[2] = checker ? 200 : 60;
    }
  }
  return img;
}

}  // namespace coreinterp::viz
