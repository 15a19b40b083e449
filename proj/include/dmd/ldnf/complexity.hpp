#pragma once

#include <string>
#include <vector>

#include "dmd/ldnf/ldnfnet.hpp"

namespace dmd::ldnf {

/// One convolution of a block with its output resolution.
struct LayerDesc {
  std::string label;
  nn::ConvSpec spec;
  int out_h = 0;
  int out_w = 0;
  bool norm = true;
};
using BlockDesc = std::vector<LayerDesc>;

struct Complexity {
  long long params = 0;
  long long madds = 0;
};

/// params = k^2 Cin Cout / g (+ Cout bias) (+ 2 Cout norm affine);
/// madds = weight params * H_out * W_out.
Complexity count_params_madds(const BlockDesc& block);

/// 1x1 (2m -> m), grouped 3x3 (m -> m), 1x1 (m -> 2m), each bias-free with batch-norm.
BlockDesc fusion_block_desc(const RecognizerConfig& cfg = {});
/// Single 3x3 ConvBlock (2m -> 2m) at the same resolution.
BlockDesc plain_fusion_desc(const RecognizerConfig& cfg = {});
BlockDesc describe_block(const std::string& name, const RecognizerConfig& cfg = {});

/// Reference values reported for the two fusion alternatives.
inline constexpr double kPlainParamsRef = 8.29e6;
inline constexpr double kPlainMaddsRef = 539.14e6;
inline constexpr double kFusionParamsRef = 0.99e6;
inline constexpr double kFusionMaddsRef = 65.11e6;

}  // namespace dmd::ldnf
