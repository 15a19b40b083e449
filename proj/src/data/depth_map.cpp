#include "dmd/data/depth_map.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

namespace dmd {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'F', '1'};
constexpr std::size_t kHeaderBytes = 12;

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t read_u32le(const char* p) {
  const auto* b = reinterpret_cast<const unsigned char*>(p);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u32le(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

}  // namespace

std::size_t DepthMap::valid_count() const {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
}

void DepthMap::check_invariants() const {
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (height <= 0 || width <= 0 || values.size() != n || mask.size() != n) {
    throw InvalidInput("depth map: inconsistent dimensions");
  }
  if (valid_count() == 0) throw InvalidInput("depth map: mask is all false");
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i] && !(values[i] >= 0.0f && values[i] <= 255.0f)) {
      throw InvalidInput("depth map: valid value outside [0,255]");
    }
  }
}

DepthMap load_depth(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  if (bytes.size() < kHeaderBytes) throw FormatError(path.string() + ": truncated header");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw FormatError(path.string() + ": bad magic");
  const std::uint32_t h = read_u32le(bytes.data() + 4);
  const std::uint32_t w = read_u32le(bytes.data() + 8);
  if (h == 0 || w == 0 || h > 65536 || w > 65536) throw FormatError(path.string() + ": bad dimensions");
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (bytes.size() != kHeaderBytes + n * 5) {
    throw FormatError(path.string() + ": payload size does not match header dimensions");
  }
  DepthMap map;
  map.height = static_cast<int>(h);
  map.width = static_cast<int>(w);
  map.values.resize(n);
  map.mask.resize(n);
  const char* p = bytes.data() + kHeaderBytes;
  for (std::size_t i = 0; i < n; ++i, p += 4) map.values[i] = std::bit_cast<float>(read_u32le(p));
  for (std::size_t i = 0; i < n; ++i, ++p) {
    const auto m = static_cast<std::uint8_t>(*p);
    if (m > 1) throw FormatError(path.string() + ": mask byte is not 0/1");
    map.mask[i] = m;
  }
  return map;
}

void save_depth(const DepthMap& map, const std::filesystem::path& path) {
  if (map.values.size() != static_cast<std::size_t>(map.height) * map.width || map.mask.size() != map.values.size()) {
    throw InvalidInput("save_depth: inconsistent dimensions");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, 4);
  write_u32le(out, static_cast<std::uint32_t>(map.height));
  write_u32le(out, static_cast<std::uint32_t>(map.width));
  for (float v : map.values) write_u32le(out, std::bit_cast<std::uint32_t>(v));
  for (auto m : map.mask) out.put(static_cast<char>(m ? 1 : 0));
  if (!out) throw DataError("write failed for " + path.string());
}

DepthMap import_pgm16(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) tok += bytes[pos++];
    return tok;
  };
  if (next_token() != "P5") throw FormatError(path.string() + ": not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0) throw FormatError(path.string() + ": bad PGM dimensions");
  if (maxval != 65535) throw FormatError(path.string() + ": expected 16-bit PGM (maxval 65535)");
  ++pos;  // single whitespace after maxval
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() < pos + 2 * n) throw FormatError(path.string() + ": truncated PGM payload");
  DepthMap map(h, w, 0.0f, false);
  constexpr double kGain = 255.0 / 65535.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto hi = static_cast<unsigned char>(bytes[pos + 2 * i]);
    const auto lo = static_cast<unsigned char>(bytes[pos + 2 * i + 1]);
    const unsigned v = (hi << 8) | lo;
    map.values[i] = static_cast<float>(v * kGain);
    map.mask[i] = v > 0 ? 1 : 0;
  }
  return map;
}

DepthMap resize_normalize(const DepthMap& raw, int out_size) {
  if (out_size <= 0) throw InvalidInput("resize_normalize: out_size must be positive");
  if (raw.values.size() != static_cast<std::size_t>(raw.height) * raw.width) {
    throw InvalidInput("resize_normalize: inconsistent dimensions");
  }
  if (raw.valid_count() < 2) throw InvalidInput("resize_normalize: fewer than two valid pixels");

  // Cell-centred bilinear sampling; only valid source pixels contribute and the
  // output cell is valid when at least half the interpolation weight is valid.
  DepthMap out(out_size, out_size, 0.0f, false);
  const double sy = static_cast<double>(raw.height) / out_size;
  const double sx = static_cast<double>(raw.width) / out_size;
  for (int r = 0; r < out_size; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, raw.height - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, raw.height - 1);
    const double ty = fy - y0;
    for (int c = 0; c < out_size; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, raw.width - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, raw.width - 1);
      const double tx = fx - x0;
      const int ys[2] = {y0, y1};
      const int xs[2] = {x0, x1};
      const double wy[2] = {1 - ty, ty};
      const double wx[2] = {1 - tx, tx};
      double acc = 0, wsum = 0;
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          const double wt = wy[a] * wx[b];
          if (wt > 0 && raw.valid(ys[a], xs[b])) {
            acc += wt * raw.at(ys[a], xs[b]);
            wsum += wt;
          }
        }
      }
      if (wsum >= 0.5 - 1e-12) {
        out.at(r, c) = static_cast<float>(acc / wsum);
        out.mask[static_cast<std::size_t>(r) * out_size + c] = 1;
      }
    }
  }
  if (out.valid_count() == 0) throw InvalidInput("resize_normalize: resampled mask is empty");

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!out.mask[i]) continue;
    lo = std::min(lo, static_cast<double>(out.values[i]));
    hi = std::max(hi, static_cast<double>(out.values[i]));
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!out.mask[i]) {
      out.values[i] = 0.0f;
    } else if (hi == lo) {
      out.values[i] = 127.5f;
    } else {
      out.values[i] = static_cast<float>(std::clamp((out.values[i] - lo) / (hi - lo) * 255.0, 0.0, 255.0));
    }
  }
  return out;
}

namespace {

struct Stencil {
  std::size_t left, right, up, down;
};

inline Stencil stencil(const std::uint8_t* mask, int h, int w, int r, int c) {
  const std::size_t centre = static_cast<std::size_t>(r) * w + c;
  auto pick = [&](int rr, int cc) {
    if (rr < 0 || rr >= h || cc < 0 || cc >= w) return centre;
    const std::size_t idx = static_cast<std::size_t>(rr) * w + cc;
    return (mask == nullptr || mask[idx]) ? idx : centre;
  };
  return {pick(r, c - 1), pick(r, c + 1), pick(r - 1, c), pick(r + 1, c)};
}

}  // namespace

template <typename T>
void normals_forward(const T* depth, const std::uint8_t* mask, int h, int w, double gain, T* out) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      if (mask != nullptr && !mask[i]) {
        out[i] = T{0};
        out[plane + i] = T{0};
        out[2 * plane + i] = T{1};
        continue;
      }
      const Stencil s = stencil(mask, h, w, r, c);
      const T vx = static_cast<T>(-gain * (depth[s.right] - depth[s.left]) * 0.5);
      const T vy = static_cast<T>(-gain * (depth[s.down] - depth[s.up]) * 0.5);
      const T norm = std::sqrt(vx * vx + vy * vy + T{1});
      out[i] = vx / norm;
      out[plane + i] = vy / norm;
      out[2 * plane + i] = T{1} / norm;
    }
  }
}

template <typename T>
void normals_backward(const T* depth, const std::uint8_t* mask, int h, int w, double gain,
                      const T* grad_normals, T* grad_depth) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      if (mask != nullptr && !mask[i]) continue;
      const Stencil s = stencil(mask, h, w, r, c);
      const T vx = static_cast<T>(-gain * (depth[s.right] - depth[s.left]) * 0.5);
      const T vy = static_cast<T>(-gain * (depth[s.down] - depth[s.up]) * 0.5);
      const T norm = std::sqrt(vx * vx + vy * vy + T{1});
      const T nx = vx / norm, ny = vy / norm, nz = T{1} / norm;
      const T gx = grad_normals[i], gy = grad_normals[plane + i], gz = grad_normals[2 * plane + i];
      const T dot = nx * gx + ny * gy + nz * gz;
      const T dvx = (gx - nx * dot) / norm;
      const T dvy = (gy - ny * dot) / norm;
      const T kx = static_cast<T>(-gain * 0.5) * dvx;
      const T ky = static_cast<T>(-gain * 0.5) * dvy;
      grad_depth[s.right] += kx;
      grad_depth[s.left] -= kx;
      grad_depth[s.down] += ky;
      grad_depth[s.up] -= ky;
    }
  }
}

template void normals_forward<float>(const float*, const std::uint8_t*, int, int, double, float*);
template void normals_forward<double>(const double*, const std::uint8_t*, int, int, double, double*);
template void normals_backward<float>(const float*, const std::uint8_t*, int, int, double, const float*, float*);
template void normals_backward<double>(const double*, const std::uint8_t*, int, int, double, const double*,
                                       double*);

NormalMap compute_normal_map(const DepthMap& depth, double gain) {
  const std::size_t plane = static_cast<std::size_t>(depth.height) * depth.width;
  std::vector<double> d(depth.values.begin(), depth.values.end());
  std::vector<double> planes(3 * plane);
  normals_forward(d.data(), depth.mask.data(), depth.height, depth.width, gain, planes.data());
  NormalMap out{depth.height, depth.width, std::vector<double>(3 * plane)};
  for (std::size_t i = 0; i < plane; ++i) {
    out.values[3 * i] = planes[i];
    out.values[3 * i + 1] = planes[plane + i];
    out.values[3 * i + 2] = planes[2 * plane + i];
  }
  return out;
}

}  // namespace dmd
