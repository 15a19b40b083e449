#include "dmd/diif/decoder.hpp"

#include <cmath>

namespace dmd::diif {

using nn::Mat;
using nn::Vec;

// ---------------------------------------------------------------- PositionalEncoder

template <typename T>
PositionalEncoder<T>::PositionalEncoder(int grid_size, int n_pe)
    : w_ff("pe.w_ff", {n_pe, 2}),
      w_ce("pe.w_ce", {grid_size * grid_size, n_pe, 2}),
      grid_(grid_size),
      n_pe_(n_pe),
      coords_(make_coord_grid(grid_size)) {
  if (n_pe < 1) throw InvalidInput("positional encoder: n_pe must be >= 1");
}

template <typename T>
void PositionalEncoder<T>::init(Rng& rng, double ff_sigma) {
  for (auto& v : w_ff.value.values()) v = static_cast<T>(ff_sigma * normal01(rng));
  w_ce.value.zero();
}

template <typename T>
Vec<T> PositionalEncoder<T>::encode(Coord x, int row, int col) const {
  if (row < 0 || row >= grid_ || col < 0 || col >= grid_) {
    throw InvalidInput("positional_encode: cell index outside the query grid");
  }
  Vec<T> e(2 * n_pe_);
  const std::size_t cell = static_cast<std::size_t>(row) * grid_ + col;
  const T* ce = w_ce.value.data() + cell * n_pe_ * 2;
  for (int j = 0; j < n_pe_; ++j) {
    e[j] = std::sin(w_ff.value[2 * j] * static_cast<T>(x.row) + w_ff.value[2 * j + 1] * static_cast<T>(x.col));
    e[n_pe_ + j] = ce[2 * j] * static_cast<T>(x.row) + ce[2 * j + 1] * static_cast<T>(x.col);
  }
  return e;
}

template <typename T>
Mat<T> PositionalEncoder<T>::encode_grid() const {
  const std::size_t cells = coords_.size();
  Mat<T> e(2 * n_pe_, static_cast<Eigen::Index>(cells));
  for (std::size_t q = 0; q < cells; ++q) {
    const T r = static_cast<T>(coords_[q].row), c = static_cast<T>(coords_[q].col);
    const T* ce = w_ce.value.data() + q * n_pe_ * 2;
    for (int j = 0; j < n_pe_; ++j) {
      e(j, q) = std::sin(w_ff.value[2 * j] * r + w_ff.value[2 * j + 1] * c);
      e(n_pe_ + j, q) = ce[2 * j] * r + ce[2 * j + 1] * c;
    }
  }
  return e;
}

template <typename T>
void PositionalEncoder<T>::backward_grid(const Mat<T>& grad) {
  const std::size_t cells = coords_.size();
  for (std::size_t q = 0; q < cells; ++q) {
    const T r = static_cast<T>(coords_[q].row), c = static_cast<T>(coords_[q].col);
    T* dce = w_ce.grad.data() + q * n_pe_ * 2;
    for (int j = 0; j < n_pe_; ++j) {
      const T g = grad(j, q) * std::cos(w_ff.value[2 * j] * r + w_ff.value[2 * j + 1] * c);
      w_ff.grad[2 * j] += g * r;
      w_ff.grad[2 * j + 1] += g * c;
      const T h = grad(n_pe_ + j, q);
      dce[2 * j] += h * r;
      dce[2 * j + 1] += h * c;
    }
  }
}

template <typename T>
LatentQuery<T> query_latent(const Tensor<T>& level, int n, Coord q) {
  if (level.rank() != 4 || level.dim(2) != level.dim(3)) throw InvalidInput("query_latent: expected N x C x S x S");
  const int c = level.dim(1), size = level.dim(2);
  LatentQuery<T> out{std::vector<T>(c), nearest_cell(size, q)};
  for (int k = 0; k < c; ++k) out.z[k] = level.at(n, k, out.cell.row, out.cell.col);
  return out;
}

// ---------------------------------------------------------------- DiifDecoder

template <typename T>
DiifDecoder<T>::DiifDecoder(int latent_channels, int pe_width, const HiddenWidths& hidden)
    : latent_(latent_channels), pe_width_(pe_width), hidden_(hidden) {
  int in = latent_channels + 2 + pe_width;
  for (int i = 0; i < 4; ++i) {
    layers[i] = nn::Linear<T>("dec.fc" + std::to_string(i + 1), in, hidden_[i]);
    in = hidden_[i];
  }
  layers[4] = nn::Linear<T>("dec.fc5", in, 1);
}

template <typename T>
void DiifDecoder<T>::init(Rng& rng) {
  for (auto& l : layers) l.init(rng);
  // Small head keeps tanh out of saturation at the start of training.
  for (auto& w : layers[4].weight.value.values()) w *= static_cast<T>(0.1);
}

template <typename T>
Mat<T> DiifDecoder<T>::relative_offsets(int level_size, int grid_size, std::vector<int>* cells) {
  const auto grid = make_coord_grid(grid_size);
  Mat<T> rel(2, static_cast<Eigen::Index>(grid.size()));
  if (cells) cells->resize(grid.size());
  for (std::size_t q = 0; q < grid.size(); ++q) {
    const CellPick pick = nearest_cell(level_size, grid[q]);
    rel(0, q) = static_cast<T>(grid[q].row - pick.center.row);
    rel(1, q) = static_cast<T>(grid[q].col - pick.center.col);
    if (cells) (*cells)[q] = pick.row * level_size + pick.col;
  }
  return rel;
}

namespace {

template <typename T>
void relu(Mat<T>& m) {
  m = m.cwiseMax(T{0});
}

template <typename T>
void relu_grad(const Mat<T>& y, Mat<T>& d) {
  d = (y.array() > T{0}).select(d, T{0});
}

}  // namespace

template <typename T>
Tensor<T> DiifDecoder<T>::forward(const std::vector<Tensor<T>>& levels, const PositionalEncoder<T>& pe,
                                  const LevelMask& active) {
  if (levels.size() != kLevels) throw InvalidInput("msdf_forward: expected four pyramid levels");
  if (pe.width() != pe_width_) throw InvalidInput("msdf_forward: positional encoding width mismatch");
  const int grid = pe.grid_size();
  const int n = levels[0].rank() == 4 ? levels[0].dim(0) : 0;
  for (int l = 0; l < kLevels; ++l) {
    const auto& lv = levels[l];
    const int size = grid >> l;
    if (lv.rank() != 4 || lv.dim(0) != n || lv.dim(1) != latent_ || lv.dim(2) != size || lv.dim(3) != size) {
      throw InvalidInput("msdf_forward: level " + std::to_string(l) + " has shape " + shape_string(lv.shape()));
    }
  }
  levels_ = levels;
  active_ = active;
  encoding_ = pe.encode_grid();
  const Eigen::Index cells = static_cast<Eigen::Index>(grid) * grid;

  auto w1 = layers[0].w();
  Mat<T> shared(hidden_[0], cells);
  shared.noalias() = w1.rightCols(pe_width_) * encoding_;
  shared.colwise() += layers[0].b();

  cache_.assign(static_cast<std::size_t>(n), SampleCache{});
  std::array<std::vector<int>, kLevels> cell_of;
  std::array<Mat<T>, kLevels> rel;
  for (int l = 0; l < kLevels; ++l) {
    if (active[l]) rel[l] = relative_offsets(grid >> l, grid, &cell_of[l]);
  }

  Tensor<T> out({n, 1, grid, grid});
  for (int s = 0; s < n; ++s) {
    SampleCache& sc = cache_[s];
    sc.fused = Mat<T>::Zero(hidden_[3], cells);
    for (int l = 0; l < kLevels; ++l) {
      if (!active[l]) continue;
      LevelCache& lc = sc.levels[l];
      lc.cells = cell_of[l];
      lc.rel = rel[l];
      const int size = grid >> l;
      ConstMatrixMap<T> feats(levels[l].sample(s), latent_, static_cast<Eigen::Index>(size) * size);
      Mat<T> latent_term = w1.leftCols(latent_) * feats;
      Mat<T>& h1 = lc.hidden[0];
      h1 = shared;
      h1.noalias() += w1.middleCols(latent_, 2) * lc.rel;
      for (Eigen::Index q = 0; q < cells; ++q) h1.col(q) += latent_term.col(lc.cells[q]);
      relu(h1);
      for (int k = 1; k < 4; ++k) {
        lc.hidden[k] = layers[k].forward(lc.hidden[k - 1]);
        relu(lc.hidden[k]);
      }
      sc.fused += lc.hidden[3];
    }
    sc.out = layers[4].forward(sc.fused).array().tanh().matrix();
    std::copy(sc.out.data(), sc.out.data() + cells, out.sample(s));
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> DiifDecoder<T>::backward(const Tensor<T>& grad_out, PositionalEncoder<T>& pe) {
  const int n = static_cast<int>(cache_.size());
  const int grid = pe.grid_size();
  const Eigen::Index cells = static_cast<Eigen::Index>(grid) * grid;
  if (grad_out.rank() != 4 || grad_out.dim(0) != n || grad_out.dim(2) != grid || grad_out.dim(3) != grid) {
    throw InvalidInput("msdf backward: gradient shape mismatch");
  }
  std::vector<Tensor<T>> grads;
  for (const auto& lv : levels_) grads.emplace_back(lv.shape());

  auto w1 = layers[0].w();
  MatrixMap<T> dw1(layers[0].weight.grad.data(), layers[0].out_features(), layers[0].in_features());
  Eigen::Map<Vec<T>> db1(layers[0].bias.grad.data(), layers[0].out_features());
  Mat<T> dshared = Mat<T>::Zero(hidden_[0], cells);

  for (int s = 0; s < n; ++s) {
    SampleCache& sc = cache_[s];
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> g(grad_out.sample(s), cells);
    Mat<T> dpre5 = (g.array() * (T{1} - sc.out.array().square())).matrix();
    Mat<T> dfused = layers[4].backward(dpre5, sc.fused);
    for (int l = 0; l < kLevels; ++l) {
      if (!active_[l]) continue;
      LevelCache& lc = sc.levels[l];
      Mat<T> d = dfused;
      relu_grad(lc.hidden[3], d);
      for (int k = 3; k >= 1; --k) {
        d = layers[k].backward(d, lc.hidden[k - 1]);
        relu_grad(lc.hidden[k - 1], d);
      }
      const int size = grid >> l;
      const Eigen::Index level_cells = static_cast<Eigen::Index>(size) * size;
      Mat<T> dlatent = Mat<T>::Zero(hidden_[0], level_cells);
      for (Eigen::Index q = 0; q < cells; ++q) dlatent.col(lc.cells[q]) += d.col(q);
      ConstMatrixMap<T> feats(levels_[l].sample(s), latent_, level_cells);
      dw1.leftCols(latent_).noalias() += dlatent * feats.transpose();
      MatrixMap<T> dfeats(grads[l].sample(s), latent_, level_cells);
      dfeats.noalias() = w1.leftCols(latent_).transpose() * dlatent;
      dw1.middleCols(latent_, 2).noalias() += d * lc.rel.transpose();
      db1 += d.rowwise().sum();
      dshared += d;
    }
  }
  if (n > 0) {
    dw1.rightCols(pe_width_).noalias() += dshared * encoding_.transpose();
    Mat<T> dencoding = w1.rightCols(pe_width_).transpose() * dshared;
    pe.backward_grid(dencoding);
  }
  return grads;
}

template LatentQuery<float> query_latent<float>(const Tensor<float>&, int, Coord);
template LatentQuery<double> query_latent<double>(const Tensor<double>&, int, Coord);
template class PositionalEncoder<float>;
template class PositionalEncoder<double>;
template class DiifDecoder<float>;
template class DiifDecoder<double>;

}  // namespace dmd::diif
