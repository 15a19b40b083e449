#pragma once

#include <string>
#include <vector>

#include "dmd/nn/layers.hpp"
#include "dmd/train/config.hpp"

namespace dmd::train {

/// Adam or heavy-ball SGD over a fixed parameter list. State tensors are
/// aligned with the list and exposed by name for checkpointing.
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, nn::ParamList<float> params);

  /// One update with learning rate lr from the accumulated gradients; grads are then zeroed.
  void step(double lr);
  void zero_grad();

  long long steps() const { return steps_; }
  void set_steps(long long s) { steps_ = s; }

  /// ("opt.m.<param>", tensor) and, for Adam, ("opt.v.<param>", tensor).
  std::vector<std::pair<std::string, Tensor<float>*>> state();

 private:
  OptimizerConfig cfg_;
  nn::ParamList<float> params_;
  std::vector<Tensor<float>> m_, v_;
  long long steps_ = 0;
};

}  // namespace dmd::train
