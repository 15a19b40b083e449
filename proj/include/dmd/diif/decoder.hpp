#pragma once

#include <array>
#include <vector>

#include "dmd/diif/coords.hpp"
#include "dmd/diif/encoder.hpp"
#include "dmd/nn/layers.hpp"

namespace dmd::diif {

using HiddenWidths = std::array<int, 4>;
inline constexpr HiddenWidths kHiddenWidths = {256, 128, 64, 32};

/// Fourier features sin(W_ff x) shared by every coordinate, concatenated with
/// coordinate embeddings W_ce[cell] x learned separately per query-grid cell.
template <typename T>
class PositionalEncoder {
 public:
  PositionalEncoder() = default;
  PositionalEncoder(int grid_size, int n_pe);

  int width() const { return 2 * n_pe_; }
  int n_pe() const { return n_pe_; }
  int grid_size() const { return grid_; }

  /// [sin(W_ff x) ; W_ce[row,col] x]. Throws InvalidInput when the cell is off-grid.
  nn::Vec<T> encode(Coord x, int row, int col) const;
  /// Encodings of every cell centre of the query grid, one column per cell (row-major).
  nn::Mat<T> encode_grid() const;
  /// Accumulates W_ff and W_ce gradients from dL/d(encode_grid()).
  void backward_grid(const nn::Mat<T>& grad);

  void init(Rng& rng, double ff_sigma);
  void collect(nn::ParamList<T>& out) { out.push_back(&w_ff); out.push_back(&w_ce); }

  nn::Param<T> w_ff;  // n_pe x 2
  nn::Param<T> w_ce;  // (grid*grid) x n_pe x 2

 private:
  int grid_ = 0;
  int n_pe_ = 0;
  std::vector<Coord> coords_;
};

/// Latent code of the nearest cell of one pyramid level (N x C x S x S) for sample n.
template <typename T>
struct LatentQuery {
  std::vector<T> z;
  CellPick cell;
};
template <typename T>
LatentQuery<T> query_latent(const Tensor<T>& level, int n, Coord q);

using LevelMask = std::array<bool, kLevels>;
inline constexpr LevelMask kAllLevels = {true, true, true, true};

/// Five-layer decoding function shared across pyramid levels, run as
/// multi-scale decoding fusion: the width-32 trunk outputs of every active
/// level are summed before the final affine layer and Tanh.
template <typename T>
class DiifDecoder {
 public:
  DiifDecoder() = default;
  DiifDecoder(int latent_channels, int pe_width, const HiddenWidths& hidden = kHiddenWidths);

  int input_width() const { return layers[0].in_features(); }

  /// levels: four N x C x S_l x S_l grids; returns N x 1 x Q x Q in [-1,1] where
  /// Q is the positional encoder's grid. Caches activations for backward().
  Tensor<T> forward(const std::vector<Tensor<T>>& levels, const PositionalEncoder<T>& pe,
                    const LevelMask& active = kAllLevels);
  /// Returns per-level latent gradients; accumulates decoder and encoding gradients.
  std::vector<Tensor<T>> backward(const Tensor<T>& grad_out, PositionalEncoder<T>& pe);

  /// Relative offsets x_q - x* per query for a level of the given size (2 x Q^2).
  static nn::Mat<T> relative_offsets(int level_size, int grid_size, std::vector<int>* cells = nullptr);

  void init(Rng& rng);
  void collect(nn::ParamList<T>& out) {
    for (auto& l : layers) l.collect(out);
  }

  std::array<nn::Linear<T>, 5> layers;

 private:
  struct LevelCache {
    std::vector<int> cells;
    nn::Mat<T> rel;
    std::array<nn::Mat<T>, 4> hidden;  // post-ReLU activations
  };
  struct SampleCache {
    std::array<LevelCache, kLevels> levels;
    nn::Mat<T> fused;
    nn::Mat<T> out;
  };

  int latent_ = 0;
  int pe_width_ = 0;
  HiddenWidths hidden_ = kHiddenWidths;
  LevelMask active_ = kAllLevels;
  std::vector<Tensor<T>> levels_;
  nn::Mat<T> encoding_;
  std::vector<SampleCache> cache_;
};

}  // namespace dmd::diif
