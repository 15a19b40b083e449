#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dmd/core/error.hpp"

namespace dmd {

/// Canonical side length of a preprocessed depth face.
inline constexpr int kFaceSize = 128;

/// H x W depth grid in [0,255] with a validity mask. Masked-out cells hold 0.
struct DepthMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> mask;  // 1 = valid depth

  DepthMap() = default;
  DepthMap(int h, int w, float fill = 0.0f, bool valid = true)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill),
        mask(static_cast<std::size_t>(h) * w, valid ? 1 : 0) {}

  std::size_t size() const { return values.size(); }
  float& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
  float at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
  bool valid(int r, int c) const { return mask[static_cast<std::size_t>(r) * width + c] != 0; }
  std::size_t valid_count() const;

  /// Throws InvalidInput unless dimensions agree, the mask has a valid cell,
  /// and every valid value lies in [0,255].
  void check_invariants() const;

  bool operator==(const DepthMap&) const = default;
};

/// Per-pixel unit surface normals, stored interleaved (nx, ny, nz).
struct NormalMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  const double* at(int r, int c) const { return &values[(static_cast<std::size_t>(r) * width + c) * 3]; }
};

/// Reads a `.dmf` container (magic "DMF1", LE u32 height/width, f32 values, u8 mask).
DepthMap load_depth(const std::filesystem::path& path);
void save_depth(const DepthMap& map, const std::filesystem::path& path);

/// Binary 16-bit PGM (P5, maxval 65535); values scaled by 255/65535, zero samples are holes.
DepthMap import_pgm16(const std::filesystem::path& path);

/// Mask-aware bilinear resample to out_size x out_size followed by min-max
/// normalization of the valid values onto [0,255] (a constant map becomes 127.5).
DepthMap resize_normalize(const DepthMap& raw, int out_size);

/// Central-difference normals normalize(-gain*dd/dx, -gain*dd/dy, 1) with replicated
/// borders; invalid neighbours are replaced by the centre value, invalid pixels get (0,0,1).
NormalMap compute_normal_map(const DepthMap& depth, double gain = 1.0);

/// Differentiable normal computation on a raw [0,255]-scale grid; `out` is 3 planes (CHW).
template <typename T>
void normals_forward(const T* depth, const std::uint8_t* mask, int h, int w, double gain, T* out);
/// Accumulates dL/d(depth) given dL/d(normals) (3 planes, CHW).
template <typename T>
void normals_backward(const T* depth, const std::uint8_t* mask, int h, int w, double gain,
                      const T* grad_normals, T* grad_depth);

}  // namespace dmd
