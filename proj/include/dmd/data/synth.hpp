#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dmd/data/depth_map.hpp"

namespace dmd {

enum class Variation { kNeutral, kExpression, kPose, kOcclusion };

std::string_view to_string(Variation v);
/// Throws ConfigError for unknown tags.
Variation parse_variation(std::string_view tag);
inline constexpr Variation kAllVariations[] = {Variation::kNeutral, Variation::kExpression, Variation::kPose,
                                               Variation::kOcclusion};

inline constexpr int kIdentityCoeffs = 24;

/// Shape coefficients of one synthetic subject.
struct IdentityParams {
  int id = 0;
  std::vector<double> coeffs;  // kIdentityCoeffs entries
};

/// Same (id, seed) always yields the same coefficients.
IdentityParams identity_params(int id, std::uint64_t seed);

/// Renders a preprocessed 128x128 face: ellipsoidal dome plus identity-specific
/// Gaussian bumps (nose, brows, eye sockets, cheeks, chin, mouth), perturbed per variation.
DepthMap synth_face(const IdentityParams& id, Variation variation, std::uint64_t seed);

struct DegradeConfig {
  int factor = 4;
  double sigma = 6.0;
  double quant_step = 4.0;
};

/// Box-downsample by `factor`, bilinear re-upsample, add N(0, sigma^2) noise,
/// quantize to `quant_step` (0 disables) and clamp to [0,255]. Holes stay holes.
DepthMap degrade(const DepthMap& clean, const DegradeConfig& cfg, std::uint64_t seed);

}  // namespace dmd
