#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dmd/data/depth_map.hpp"

namespace dmd::cli {

/// 8-bit image, `channels` 1 (gray) or 3 (RGB), row-major interleaved.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, 0) {}
  std::uint8_t* at(int r, int c) { return &pixels[(static_cast<std::size_t>(r) * width + c) * channels]; }
};

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

/// round(depth) clamped to [0,255].
Image depth_panel(const DepthMap& d);
/// Normals mapped through (n+1)/2 to RGB.
Image normal_panel(const DepthMap& d, double gain);

/// Places equally sized panels on a rows x cols grid (row-major order).
Image grid(const std::vector<Image>& panels, int rows, int cols);

}  // namespace dmd::cli
