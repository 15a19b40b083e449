#pragma once

#include <cstdint>
#include <type_traits>
#include <vector>

#include "dmd/ldnf/ldnfnet.hpp"

namespace dmd::losses {

struct LossWeights {
  double l1 = 1.0;
  double ssim = 0.5;
  double perceptual = 0.001;
};

/// Grids are tensors whose last two dimensions are H x W; leading dimensions index planes.

/// Mean |pred - gt| over cells with mask != 0 (all cells when mask is null).
template <typename T>
T l1_loss(const Tensor<T>& pred, const Tensor<T>& gt, const std::vector<std::uint8_t>* mask = nullptr,
          Tensor<T>* grad = nullptr);

/// Mean local SSIM on unit dynamic range with an 11x11 Gaussian window (sigma 1.5);
/// the window is truncated at the borders and renormalized. grad_x receives d/dx.
template <typename T>
T ssim(const Tensor<T>& x, const Tensor<T>& y, Tensor<T>* grad_x = nullptr);

/// Frozen recognizer used as the feature map F(.) of the perceptual term.
template <typename T>
class PerceptualExtractor {
 public:
  PerceptualExtractor(ldnf::LdnfNet<T>& net, double normal_gain);

  /// unit_depth: N x 1 x S x S in [0,1]; returns the F_final embeddings (E x N).
  nn::Mat<T> embed(const Tensor<T>& unit_depth, const std::vector<std::uint8_t>& mask);
  /// dL/d(unit_depth) of the last embed() call.
  Tensor<T> backward(const nn::Mat<T>& d_embedding);

 private:
  ldnf::LdnfNet<T>* net_;
  double gain_;
  Tensor<T> depth255_;
  std::vector<std::uint8_t> mask_;
};

template <typename T>
struct LossTerms {
  T l1 = 0, ssim = 1, perceptual = 0, total = 0;
};

/// w.l1 * L1 + w.ssim * (1 - SSIM) + w.perceptual * mean |F(pred) - F(gt)|, on unit-range
/// N x 1 x S x S grids. px may be null when w.perceptual == 0.
template <typename T>
LossTerms<T> total_denoise_loss(const Tensor<T>& pred, const Tensor<T>& gt, const std::vector<std::uint8_t>& mask,
                                const LossWeights& w, std::type_identity_t<PerceptualExtractor<T>>* px, Tensor<T>* grad = nullptr);

}  // namespace dmd::losses
