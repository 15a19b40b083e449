#include "dmd/data/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "dmd/core/rng.hpp"

namespace dmd {

std::string_view to_string(Variation v) {
  switch (v) {
    case Variation::kNeutral: return "neutral";
    case Variation::kExpression: return "expression";
    case Variation::kPose: return "pose";
    case Variation::kOcclusion: return "occlusion";
  }
  return "neutral";
}

Variation parse_variation(std::string_view tag) {
  for (Variation v : kAllVariations) {
    if (to_string(v) == tag) return v;
  }
  throw ConfigError("unknown variation tag '" + std::string(tag) + "'");
}

namespace {

// Coefficient ranges, index-aligned with IdentityParams::coeffs.
constexpr std::array<std::array<double, 2>, kIdentityCoeffs> kRanges = {{
    {1.5, 1.9},     // 0  dome half-width
    {1.7, 2.1},     // 1  dome half-height
    {0.6, 1.0},     // 2  dome height
    {-0.12, 0.12},  // 3  dome vertical offset
    {0.30, 0.70},   // 4  nose amplitude
    {0.07, 0.15},   // 5  nose sx
    {0.16, 0.32},   // 6  nose sy
    {-0.08, 0.16},  // 7  nose y
    {0.06, 0.28},   // 8  brow amplitude
    {-0.50, -0.30}, // 9  brow y
    {0.20, 0.40},   // 10 brow half-separation
    {0.10, 0.22},   // 11 brow sx
    {0.06, 0.24},   // 12 eye socket depth
    {-0.28, -0.10}, // 13 eye y
    {0.20, 0.38},   // 14 eye half-separation
    {0.07, 0.15},   // 15 eye size
    {0.04, 0.22},   // 16 cheek amplitude
    {0.05, 0.32},   // 17 cheek y
    {0.34, 0.58},   // 18 cheek half-separation
    {0.14, 0.26},   // 19 cheek size
    {0.06, 0.24},   // 20 chin amplitude
    {0.58, 0.82},   // 21 chin y
    {0.10, 0.24},   // 22 chin sx
    {0.02, 0.12},   // 23 mouth amplitude
}};

struct Bump {
  double amp, cx, cy, sx, sy;
};

struct Face {
  double a, b, h0, cy0;
  std::vector<Bump> bumps;

  double height(double x, double y) const {
    const double u = x / a, v = (y - cy0) / b;
    double z = h0 * std::sqrt(std::max(0.0, 1.0 - u * u - v * v));
    for (const Bump& k : bumps) {
      const double dx = (x - k.cx) / k.sx, dy = (y - k.cy) / k.sy;
      z += k.amp * std::exp(-0.5 * (dx * dx + dy * dy));
    }
    return z;
  }
};

// Bump order: nose, brow L/R, eye L/R, cheek L/R, chin, mouth.
Face build_face(const IdentityParams& p) {
  const auto& c = p.coeffs;
  Face f{c[0], c[1], c[2], c[3], {}};
  f.bumps.push_back({c[4], 0.0, c[7], c[5], c[6]});
  for (double side : {-1.0, 1.0}) f.bumps.push_back({c[8], side * c[10], c[9], c[11], 0.06});
  for (double side : {-1.0, 1.0}) f.bumps.push_back({-c[12], side * c[14], c[13], c[15], c[15] * 0.8});
  for (double side : {-1.0, 1.0}) f.bumps.push_back({c[16], side * c[18], c[17], c[19], c[19]});
  f.bumps.push_back({c[20], 0.0, c[21], c[22], 0.10});
  f.bumps.push_back({c[23], 0.0, 0.45, 0.18, 0.05});
  return f;
}

}  // namespace

IdentityParams identity_params(int id, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1d, static_cast<std::uint64_t>(id)));
  IdentityParams p{id, std::vector<double>(kIdentityCoeffs)};
  for (int i = 0; i < kIdentityCoeffs; ++i) p.coeffs[i] = uniform(rng, kRanges[i][0], kRanges[i][1]);
  return p;
}

DepthMap synth_face(const IdentityParams& id, Variation variation, std::uint64_t seed) {
  if (id.coeffs.size() != static_cast<std::size_t>(kIdentityCoeffs)) {
    throw InvalidInput("synth_face: identity has wrong coefficient count");
  }
  Face face = build_face(id);
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(id.id), static_cast<std::uint64_t>(variation)));

  // Inverse in-plane warp applied to sampling coordinates.
  double cos_t = 1, sin_t = 0, scale = 1, tx = 0, ty = 0;
  switch (variation) {
    case Variation::kNeutral:
    case Variation::kOcclusion: break;
    case Variation::kExpression:
      for (std::size_t k = 1; k < face.bumps.size(); ++k) face.bumps[k].amp *= uniform(rng, 0.75, 1.25);
      break;
    case Variation::kPose: {
      const double theta = uniform(rng, -10.0, 10.0) * std::numbers::pi / 180.0;
      cos_t = std::cos(theta);
      sin_t = std::sin(theta);
      scale = uniform(rng, 0.95, 1.05);
      tx = uniform(rng, -0.05, 0.05);
      ty = uniform(rng, -0.05, 0.05);
      break;
    }
  }

  DepthMap raw(kFaceSize, kFaceSize);
  for (int r = 0; r < kFaceSize; ++r) {
    const double y = (2.0 * r + 1.0) / kFaceSize - 1.0;
    for (int c = 0; c < kFaceSize; ++c) {
      const double x = (2.0 * c + 1.0) / kFaceSize - 1.0;
      const double px = x - tx, py = y - ty;
      const double sx = (cos_t * px + sin_t * py) / scale;
      const double sy = (-sin_t * px + cos_t * py) / scale;
      raw.at(r, c) = static_cast<float>(face.height(sx, sy));
    }
  }
  DepthMap out = resize_normalize(raw, kFaceSize);

  if (variation == Variation::kOcclusion) {
    const double total = static_cast<double>(kFaceSize) * kFaceSize;
    const double frac = uniform(rng, 0.12, 0.28);
    const double aspect = uniform(rng, 0.6, 1.6);
    int w = static_cast<int>(std::lround(std::sqrt(frac * total * aspect)));
    w = std::clamp(w, 1, kFaceSize);
    int h = static_cast<int>(std::lround(frac * total / w));
    h = std::clamp(h, 1, kFaceSize);
    const int r0 = static_cast<int>(uniform01(rng) * (kFaceSize - h + 1));
    const int c0 = static_cast<int>(uniform01(rng) * (kFaceSize - w + 1));
    for (int r = r0; r < r0 + h; ++r) {
      for (int c = c0; c < c0 + w; ++c) {
        out.at(r, c) = 0.0f;
        out.mask[static_cast<std::size_t>(r) * kFaceSize + c] = 0;
      }
    }
  }
  return out;
}

DepthMap degrade(const DepthMap& clean, const DegradeConfig& cfg, std::uint64_t seed) {
  if (cfg.factor < 1 || clean.height % cfg.factor != 0 || clean.width % cfg.factor != 0) {
    throw ConfigError("degrade: factor " + std::to_string(cfg.factor) + " does not divide the map size");
  }
  if (cfg.sigma < 0 || cfg.quant_step < 0) throw ConfigError("degrade: sigma and quant_step must be >= 0");
  const int f = cfg.factor;
  const int lh = clean.height / f, lw = clean.width / f;

  // Mask-aware box average.
  std::vector<double> low(static_cast<std::size_t>(lh) * lw, 0.0), weight(low.size(), 0.0);
  for (int r = 0; r < clean.height; ++r) {
    for (int c = 0; c < clean.width; ++c) {
      if (!clean.valid(r, c)) continue;
      const std::size_t k = static_cast<std::size_t>(r / f) * lw + c / f;
      low[k] += clean.at(r, c);
      weight[k] += 1.0;
    }
  }
  for (std::size_t k = 0; k < low.size(); ++k) {
    if (weight[k] > 0) low[k] /= weight[k];
    weight[k] /= static_cast<double>(f) * f;
  }

  DepthMap out(clean.height, clean.width, 0.0f, false);
  out.mask = clean.mask;
  Rng rng(seed);
  for (int r = 0; r < clean.height; ++r) {
    const double fy = std::clamp((r + 0.5) / f - 0.5, 0.0, lh - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, lh - 1);
    const double ty = fy - y0;
    for (int c = 0; c < clean.width; ++c) {
      if (!clean.valid(r, c)) continue;
      const double fx = std::clamp((c + 0.5) / f - 0.5, 0.0, lw - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, lw - 1);
      const double tx = fx - x0;
      const int ys[2] = {y0, y1};
      const int xs[2] = {x0, x1};
      const double wy[2] = {1 - ty, ty};
      const double wx[2] = {1 - tx, tx};
      double num = 0, den = 0;
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          const double wt = wy[a] * wx[b];
          if (wt <= 0) continue;
          const std::size_t k = static_cast<std::size_t>(ys[a]) * lw + xs[b];
          num += wt * weight[k] * low[k];
          den += wt * weight[k];
        }
      }
      double v = den > 0 ? num / den : clean.at(r, c);
      if (cfg.sigma > 0) v += cfg.sigma * normal01(rng);
      if (cfg.quant_step > 0) v = std::round(v / cfg.quant_step) * cfg.quant_step;
      out.at(r, c) = static_cast<float>(std::clamp(v, 0.0, 255.0));
    }
  }
  return out;
}

}  // namespace dmd
