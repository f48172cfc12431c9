#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "coreinterp/tensor.hpp"

namespace coreinterp::viz {

/// 8-bit RGB image, row-major, 3 bytes per pixel.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), rgb(w * h * 3, fill) {}
  std::uint8_t* pixel(std::size_t x, std::size_t y) { return rgb.data() + (y * width + x) * 3; }
  const std::uint8_t* pixel(std::size_t x, std::size_t y) const { return rgb.data() + (y * width + x) * 3; }
};

/// Reads an 8-bit (or 16-bit, downscaled) PNG as RGB; alpha is dropped,
/// grayscale expanded. Throws ValidationError when unreadable.
Image read_png(const std::filesystem::path& path);
/// Writes RGB8, zlib level 9, no timestamps: identical inputs give identical bytes.
void write_png(const std::filesystem::path& path, const Image& img);

struct Heatmap {
  Matrix values;  // [height, width] in [0, 1]
  std::string sample_id;
  std::string method;
  std::size_t k = 0;
};

/// score[j] = sum over (u, v) of maps[sample, u, v, j].
Vector score_maps(const Tensor4& maps, std::size_t sample);

/// Channels ordered by descending score, ties to the lower channel index.
std::vector<std::size_t> top_channels(const Vector& scores, std::size_t k);

/// Per-location max over the top-k channels, before any resizing: [h', w'].
Matrix max_combine(const Tensor4& maps, std::size_t sample, std::size_t k);

/// Bilinear resize with pixel-center alignment and edge clamping.
Matrix resize_bilinear(const Matrix& src, std::size_t height, std::size_t width);

/// Scales to [0, 1]; a constant grid becomes all zeros.
Matrix minmax_normalize(const Matrix& m);

/// top-k max-combine, bilinear resize to (height, width), min-max normalize.
Heatmap compose_heatmap(const Tensor4& maps, std::size_t sample, std::size_t k, std::size_t height,
                        std::size_t width);

inline constexpr double kBlend = 0.5;

/// Perceptually ordered colormap ('inferno'); t is clamped to [0, 1].
std::array<std::uint8_t, 3> colormap(double t);

/// out = round(0.5 * image + 0.5 * h * colormap(h)) per channel, so cold
/// pixels show the darkened image and hot pixels the colormap's bright end.
Image overlay(const Heatmap& heat, const Image& image);
void overlay_file(const Heatmap& heat, const std::filesystem::path& image_path,
                  const std::filesystem::path& out_path);

/// Grid of equally sized tiles (rows = data source, columns = samples)
/// separated by `pad` white pixels.
Image compose_panel(const std::vector<std::vector<Image>>& tiles, std::size_t pad = 4);

/// Procedural RGB test card (gradients plus a checker pattern) used when no
/// source images are available.
Image test_card(std::size_t width, std::size_t height, std::uint64_t seed);

}  // namespace coreinterp::viz
