#include "dmd/diif/encoder.hpp"

namespace dmd::diif {

using nn::Conv2d;
using nn::ConvSpec;

template <typename T>
ResBlock<T>::ResBlock(const std::string& name, int channels)
    : conv1(name + ".conv1", ConvSpec{channels, channels, 3, 1, 1}),
      conv2(name + ".conv2", ConvSpec{channels, channels, 3, 1, 1}) {}

template <typename T>
Tensor<T> ResBlock<T>::forward(const Tensor<T>& x) {
  hidden_ = conv1.forward(x);
  nn::relu_inplace(hidden_);
  Tensor<T> y = conv2.forward(hidden_);
  y += x;
  return y;
}

template <typename T>
Tensor<T> ResBlock<T>::backward(const Tensor<T>& dy) {
  Tensor<T> dh = conv2.backward(dy);
  nn::relu_backward_inplace(hidden_, dh);
  Tensor<T> dx = conv1.backward(dh);
  dx += dy;
  return dx;
}

template <typename T>
DownResBlock<T>::DownResBlock(const std::string& name, int channels)
    : conv1(name + ".conv1", ConvSpec{channels, channels, 3, 2, 1}),
      conv2(name + ".conv2", ConvSpec{channels, channels, 3, 1, 1}),
      skip(name + ".skip", ConvSpec{channels, channels, 1, 2, 0}) {}

template <typename T>
Tensor<T> DownResBlock<T>::forward(const Tensor<T>& x) {
  hidden_ = conv1.forward(x);
  nn::relu_inplace(hidden_);
  Tensor<T> y = conv2.forward(hidden_);
  y += skip.forward(x);
  return y;
}

template <typename T>
Tensor<T> DownResBlock<T>::backward(const Tensor<T>& dy) {
  Tensor<T> dh = conv2.backward(dy);
  nn::relu_backward_inplace(hidden_, dh);
  Tensor<T> dx = conv1.backward(dh);
  dx += skip.backward(dy);
  return dx;
}

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& cfg)
    : stem_depth("enc.stem_depth", ConvSpec{1, cfg.channels, 3, 1, 1}),
      stem_normal("enc.stem_normal", ConvSpec{3, cfg.channels, 3, 1, 1}),
      cfg_(cfg) {
  if (cfg.channels < 1 || cfg.n_res < 0 || cfg.blocks_per_stage < 0) {
    throw InvalidInput("encoder: bad configuration");
  }
  for (int i = 0; i < cfg.n_res; ++i) body.emplace_back("enc.body." + std::to_string(i), cfg.channels);
  for (int s = 0; s < 3; ++s) {
    const std::string prefix = "enc.stage" + std::to_string(s + 1);
    down[s] = DownResBlock<T>(prefix + ".down", cfg.channels);
    for (int i = 0; i < cfg.blocks_per_stage; ++i) {
      stages[s].emplace_back(prefix + ".res." + std::to_string(i), cfg.channels);
    }
  }
}

template <typename T>
void Encoder<T>::init(Rng& rng) {
  stem_depth.init(rng);
  stem_normal.init(rng);
  for (auto& b : body) b.init(rng);
  for (int s = 0; s < 3; ++s) {
    down[s].init(rng);
    for (auto& b : stages[s]) b.init(rng);
  }
}

template <typename T>
void Encoder<T>::collect(nn::ParamList<T>& out) {
  stem_depth.collect(out);
  stem_normal.collect(out);
  for (auto& b : body) b.collect(out);
  for (int s = 0; s < 3; ++s) {
    down[s].collect(out);
    for (auto& b : stages[s]) b.collect(out);
  }
}

template <typename T>
Tensor<T> Encoder<T>::stem_forward(const Tensor<T>& depth, const Tensor<T>& normals) {
  if (depth.rank() != 4 || normals.rank() != 4 || depth.dim(1) != 1 || normals.dim(1) != 3 ||
      depth.dim(0) != normals.dim(0) || depth.dim(2) != normals.dim(2) || depth.dim(3) != normals.dim(3)) {
    throw InvalidInput("encoder: expected depth N x 1 x S x S and normals N x 3 x S x S");
  }
  if (depth.dim(2) != depth.dim(3) || depth.dim(2) % 8 != 0) {
    throw InvalidInput("encoder: input must be square with side divisible by 8");
  }
  Tensor<T> x = stem_depth.forward(depth);
  x += stem_normal.forward(normals);
  return x;
}

template <typename T>
std::vector<Tensor<T>> Encoder<T>::forward(const Tensor<T>& depth, const Tensor<T>& normals) {
  Tensor<T> x = stem_forward(depth, normals);
  for (auto& b : body) x = b.forward(x);
  std::vector<Tensor<T>> levels;
  levels.push_back(x);
  for (int s = 0; s < 3; ++s) {
    x = down[s].forward(x);
    for (auto& b : stages[s]) x = b.forward(x);
    levels.push_back(x);
  }
  return levels;
}

template <typename T>
void Encoder<T>::backward(const std::vector<Tensor<T>>& level_grads) {
  if (level_grads.size() != kLevels) throw InvalidInput("encoder backward: expected four level gradients");
  Tensor<T> g = level_grads[3];
  for (int s = 2; s >= 0; --s) {
    for (auto it = stages[s].rbegin(); it != stages[s].rend(); ++it) g = it->backward(g);
    g = down[s].backward(g);
    g += level_grads[s];
  }
  for (auto it = body.rbegin(); it != body.rend(); ++it) g = it->backward(g);
  stem_depth.backward(g, false);
  stem_normal.backward(g, false);
}

template class ResBlock<float>;
template class ResBlock<double>;
template class DownResBlock<float>;
template class DownResBlock<double>;
template class Encoder<float>;
template class Encoder<double>;

}  // namespace dmd::diif
