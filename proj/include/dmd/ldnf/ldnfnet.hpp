#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "dmd/nn/layers.hpp"

namespace dmd::ldnf {

struct RecognizerConfig {
  int input_size = 128;
  std::array<int, 4> widths = {32, 64, 128, 256};
  int fusion_groups = 32;
  int num_classes = 2;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  int msff_width() const { return widths[0] + widths[1] + widths[2] + widths[3]; }
  int embedding_width() const { return 4 * msff_width(); }
  int final_size() const { return input_size / 16; }
  void validate() const;
};

/// One (label, C x H x W) row of a forward shape trace.
struct ShapeRow {
  std::string label;
  std::array<int, 3> chw;
};
using ShapeTrace = std::vector<ShapeRow>;

/// conv (no bias) -> batch-norm -> ReLU.
template <typename T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& name, const nn::ConvSpec& spec, double momentum, double eps);
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy, bool want_input_grad = true);
  void init(Rng& rng) { conv.init(rng); }
  void collect(nn::ParamList<T>& out) { conv.collect(out); bn.collect(out); }
  void collect_buffers(nn::BufferList<T>& out) { bn.collect_buffers(out); }
  void set_mode(bool training, bool frozen) {
    bn.training = training;
    bn.frozen = frozen;
    conv.frozen = frozen;
  }

  nn::Conv2d<T> conv;
  nn::BatchNorm2d<T> bn;

 private:
  Tensor<T> out_;
};

/// Four ConvBlocks (each followed by a 3x3/2 max-pool) and multi-scale feature
/// fusion: blocks 1-3 are max-pooled from their pre-pool activations down to the
/// block-4 resolution and concatenated with block 4's pooled output.
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const std::string& name, int in_channels, const RecognizerConfig& cfg);
  Tensor<T> forward(const Tensor<T>& x, ShapeTrace* trace = nullptr);
  Tensor<T> backward(const Tensor<T>& dmsff, bool want_input_grad);
  void init(Rng& rng);
  void collect(nn::ParamList<T>& out);
  void collect_buffers(nn::BufferList<T>& out);
  void set_mode(bool training, bool frozen);

  std::array<ConvBlock<T>, 4> blocks;
  std::array<nn::MaxPool2d<T>, 4> pools;
  std::array<nn::MaxPool2d<T>, 3> msff_pools;

 private:
  std::array<int, 4> widths_{};
};

/// Depthwise convolution whose kernel covers the whole map: C x k x k -> C.
template <typename T>
class SavHead {
 public:
  SavHead() = default;
  SavHead(const std::string& name, int channels, int spatial);
  /// Returns the vectors as a C x N matrix.
  nn::Mat<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const nn::Mat<T>& dv);
  void init(Rng& rng) { conv.init(rng); }
  void collect(nn::ParamList<T>& out) { conv.collect(out); }

  nn::Conv2d<T> conv;
};

template <typename T>
struct RecognizerOutputs {
  nn::Mat<T> embedding;  // F_final, (2m + 2m) x N: depth, normal, fusion SAV vectors
  nn::Mat<T> logits_depth;
  nn::Mat<T> logits_normal;
  nn::Mat<T> logits_fusion;
};

/// Three-path depth/normal fusion recognizer.
template <typename T>
class LdnfNet {
 public:
  LdnfNet() = default;
  explicit LdnfNet(const RecognizerConfig& cfg);

  /// depth: N x 1 x S x S, normals: N x 3 x S x S (model range).
  RecognizerOutputs<T> forward(const Tensor<T>& depth, const Tensor<T>& normals, ShapeTrace* trace = nullptr);
  /// Back-propagates gradients w.r.t. the embedding and the three logit sets (any
  /// may be empty). Returns input gradients (depth, normals) when requested.
  std::pair<Tensor<T>, Tensor<T>> backward(const nn::Mat<T>& d_embedding, const nn::Mat<T>& d_logits_depth,
                                           const nn::Mat<T>& d_logits_normal, const nn::Mat<T>& d_logits_fusion,
                                           bool want_input_grad = false);

  Tensor<T> fusion_forward(const Tensor<T>& depth_msff, const Tensor<T>& normal_msff, ShapeTrace* trace = nullptr);

  void init(Rng& rng);
  nn::ParamList<T> parameters();
  nn::BufferList<T> buffers();
  /// training: batch statistics; frozen: no parameter gradients are accumulated.
  void set_mode(bool training, bool frozen = false);
  const RecognizerConfig& config() const { return cfg_; }

  Backbone<T> depth_path, normal_path;
  ConvBlock<T> integrate_depth, integrate_normal;  // ConvBlock 6, one per path
  std::array<ConvBlock<T>, 3> fusion;              // ConvBlocks 7-9
  SavHead<T> sav_depth, sav_normal, sav_fusion;
  nn::Linear<T> head_depth, head_normal, head_fusion;

 private:
  RecognizerConfig cfg_;
  Tensor<T> depth_msff_, normal_msff_;
  nn::Mat<T> sav_d_, sav_n_, final_;
};

/// Mean softmax cross-entropy over columns; writes dL/dlogits when grad != nullptr.
template <typename T>
T cross_entropy(const nn::Mat<T>& logits, const std::vector<int>& labels, nn::Mat<T>* grad);

}  // namespace dmd::ldnf
