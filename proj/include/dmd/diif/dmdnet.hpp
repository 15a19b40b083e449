#pragma once

#include <cstdint>
#include <vector>

#include "dmd/data/depth_map.hpp"
#include "dmd/diif/decoder.hpp"
#include "dmd/diif/encoder.hpp"

namespace dmd::diif {

struct DenoiserConfig {
  int image_size = kFaceSize;
  int channels = 64;
  int n_res = 4;
  int blocks_per_stage = 3;
  int n_pe = 64;
  double ff_sigma = 10.0;
  double normal_gain = 1.0;
  HiddenWidths hidden = kHiddenWidths;

  void validate() const;
};

/// Model-range batch: depth v/127.5 - 1 (N x 1 x S x S), unit normals (N x 3 x S x S)
/// and the concatenated validity masks.
template <typename T>
struct ModelInputs {
  Tensor<T> depth;
  Tensor<T> normals;
  std::vector<std::uint8_t> mask;
};

template <typename T>
ModelInputs<T> prepare_inputs(const std::vector<const DepthMap*>& maps, double normal_gain);

/// Encoder, positional encoder and multi-scale decoder assembled end to end.
template <typename T>
class Dmdnet {
 public:
  Dmdnet() = default;
  explicit Dmdnet(const DenoiserConfig& cfg);

  void init(std::uint64_t seed);
  /// Returns N x 1 x S x S predictions in [-1,1].
  Tensor<T> forward(const Tensor<T>& depth, const Tensor<T>& normals, const LevelMask& active = kAllLevels);
  /// Accumulates parameter gradients for dL/d(forward output).
  void backward(const Tensor<T>& grad_out);
  nn::ParamList<T> parameters();
  const DenoiserConfig& config() const { return cfg_; }

  Encoder<T> encoder;
  PositionalEncoder<T> pe;
  DiifDecoder<T> decoder;

 private:
  DenoiserConfig cfg_;
};

/// Denoises one preprocessed map; the mask is kept and masked cells stay 0.
DepthMap denoise(const DepthMap& d, Dmdnet<float>& model);
/// Same as denoise() for several equally sized maps in one forward pass.
std::vector<DepthMap> denoise_batch(const std::vector<const DepthMap*>& maps, Dmdnet<float>& model);

}  // namespace dmd::diif
