#pragma once

#include <array>
#include <vector>

#include "dmd/nn/layers.hpp"

namespace dmd::diif {

inline constexpr int kLevels = 4;

/// EDSR residual block: x + conv(relu(conv(x))), no normalization.
template <typename T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(const std::string& name, int channels);
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  /// The residual branch starts at zero, so a fresh block is the identity.
  void init(Rng& rng) {
    conv1.init(rng);
    conv2.init(rng);
    conv2.weight.value.zero();
  }
  void collect(nn::ParamList<T>& out) { conv1.collect(out); conv2.collect(out); }

  nn::Conv2d<T> conv1, conv2;

 private:
  Tensor<T> hidden_;
};

/// Residual block whose first convolution has stride 2; the skip path is a
/// 1x1 stride-2 projection so both branches halve the resolution.
template <typename T>
class DownResBlock {
 public:
  DownResBlock() = default;
  DownResBlock(const std::string& name, int channels);
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  /// Residual branch zeroed; the linear skip keeps unit gain.
  void init(Rng& rng) {
    conv1.init(rng);
    conv2.init(rng);
    conv2.weight.value.zero();
    skip.init(rng);
    for (auto& w : skip.weight.value.values()) w *= static_cast<T>(0.7071067811865476);
  }
  void collect(nn::ParamList<T>& out) { conv1.collect(out); conv2.collect(out); skip.collect(out); }

  nn::Conv2d<T> conv1, conv2, skip;

 private:
  Tensor<T> hidden_;
};

struct EncoderConfig {
  int channels = 64;
  int n_res = 4;
  int blocks_per_stage = 3;
};

/// Dual-stem convolutional encoder producing a four-level feature pyramid
/// (full, 1/2, 1/4, 1/8 resolution), all levels with `channels` features.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(const EncoderConfig& cfg);

  /// depth: N x 1 x S x S, normals: N x 3 x S x S, both in [-1,1].
  std::vector<Tensor<T>> forward(const Tensor<T>& depth, const Tensor<T>& normals);
  /// Accumulates parameter gradients from per-level gradients.
  void backward(const std::vector<Tensor<T>>& level_grads);

  /// Stem output before the residual stack (sum of both stems).
  Tensor<T> stem_forward(const Tensor<T>& depth, const Tensor<T>& normals);

  void init(Rng& rng);
  void collect(nn::ParamList<T>& out);
  const EncoderConfig& config() const { return cfg_; }

  nn::Conv2d<T> stem_depth, stem_normal;
  std::vector<ResBlock<T>> body;
  std::array<DownResBlock<T>, 3> down;
  std::array<std::vector<ResBlock<T>>, 3> stages;

 private:
  EncoderConfig cfg_;
};

}  // namespace dmd::diif
