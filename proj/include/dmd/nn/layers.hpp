#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "dmd/core/rng.hpp"
#include "dmd/core/tensor.hpp"

namespace dmd::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// A learnable tensor and its accumulated gradient.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, std::vector<int> shape) : name(std::move(n)), value(shape), grad(shape) {}
  void zero_grad() { grad.zero(); }
};

/// Non-learnable persistent state (batch-norm running statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
using ParamList = std::vector<Param<T>*>;
template <typename T>
using BufferList = std::vector<Buffer<T>>;

/// Kaiming fan-in normal: std = sqrt(2 / fan_in).
template <typename T>
void kaiming_normal(Tensor<T>& w, int fan_in, Rng& rng);

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int groups = 1;
  bool bias = true;

  int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
  long long weight_count() const {
    return static_cast<long long>(kernel) * kernel * (in_channels / groups) * out_channels;
  }
};

/// 2-D convolution over NCHW tensors via im2col + GEMM, with channel groups.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, const ConvSpec& spec);

  Tensor<T> forward(const Tensor<T>& x);
  /// Accumulates weight/bias gradients unless `frozen`; returns dL/dx when asked.
  Tensor<T> backward(const Tensor<T>& dy, bool want_input_grad = true);

  void init(Rng& rng);
  void collect(ParamList<T>& out) { out.push_back(&weight); if (spec_.bias) out.push_back(&bias); }
  const ConvSpec& spec() const { return spec_; }

  Param<T> weight;
  Param<T> bias;
  bool frozen = false;

 private:
  ConvSpec spec_;
  Tensor<T> input_;
};

/// Per-channel batch normalization; `training` selects batch vs running statistics.
template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels, double momentum = 0.9, double eps = 1e-5);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);

  void collect(ParamList<T>& out) { out.push_back(&gamma); out.push_back(&beta); }
  void collect_buffers(BufferList<T>& out) {
    out.push_back({running_mean_name_, &running_mean});
    out.push_back({running_var_name_, &running_var});
  }

  Param<T> gamma;
  Param<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  bool training = true;
  bool frozen = false;

 private:
  int channels_ = 0;
  double momentum_ = 0.9;
  double eps_ = 1e-5;
  std::string running_mean_name_;
  std::string running_var_name_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  bool cached_training_ = true;
};

/// Max pooling with implicit -inf padding.
template <typename T>
class MaxPool2d {
 public:
  MaxPool2d() = default;
  MaxPool2d(int kernel, int stride, int pad) : kernel_(kernel), stride_(stride), pad_(pad) {}

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;
  int out_size(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int pad() const { return pad_; }

 private:
  int kernel_ = 3, stride_ = 2, pad_ = 1;
  std::vector<int> in_shape_;
  std::vector<std::int32_t> argmax_;
};

/// Affine map on column batches: Y = W X + b, features along rows.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out);

  Mat<T> forward(const Mat<T>& x) const;
  /// Accumulates dW/db from the given input; returns W^T dy.
  Mat<T> backward(const Mat<T>& dy, const Mat<T>& x, bool want_input_grad = true);

  void init(Rng& rng);
  void collect(ParamList<T>& out) { out.push_back(&weight); out.push_back(&bias); }
  int in_features() const { return in_; }
  int out_features() const { return out_; }
  MatrixMap<T> w() { return MatrixMap<T>(weight.value.data(), out_, in_); }
  ConstMatrixMap<T> w() const { return ConstMatrixMap<T>(weight.value.data(), out_, in_); }
  Eigen::Map<const Vec<T>> b() const { return Eigen::Map<const Vec<T>>(bias.value.data(), out_); }

  Param<T> weight;
  Param<T> bias;
  bool frozen = false;

 private:
  int in_ = 0, out_ = 0;
};

template <typename T>
void relu_inplace(Tensor<T>& x);
/// dy *= (y > 0), where y is the ReLU output.
template <typename T>
void relu_backward_inplace(const Tensor<T>& y, Tensor<T>& dy);

/// Concatenate NCHW tensors along channels.
template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts);
/// Split a channel-concatenated gradient back into pieces of the given widths.
template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, const std::vector<int>& widths);

}  // namespace dmd::nn
