#include "dmd/diif/coords.hpp"

#include <algorithm>
#include <cmath>

#include "dmd/core/error.hpp"

namespace dmd::diif {

std::vector<Coord> make_coord_grid(int size) {
  if (size <= 0) throw InvalidInput("make_coord_grid: size must be >= 1");
  std::vector<Coord> grid;
  grid.reserve(static_cast<std::size_t>(size) * size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) grid.push_back({cell_center(r, size), cell_center(c, size)});
  }
  return grid;
}

namespace {

// The distance is separable over a regular grid, so each axis is minimised on its
// own; taking the lower index on an exact tie gives the row-then-column rule.
int nearest_index(int size, double q) {
  const int guess = static_cast<int>(std::floor((q + 1.0) * size * 0.5 - 0.5));
  int best = -1;
  double best_d = 0;
  for (int i = std::max(guess - 1, 0); i <= std::min(guess + 2, size - 1); ++i) {
    const double d = std::abs(q - cell_center(i, size));
    if (best < 0 || d < best_d) {
      best = i;
      best_d = d;
    }
  }
  if (best < 0) best = q < 0 ? 0 : size - 1;
  return best;
}

}  // namespace

CellPick nearest_cell(int size, Coord q) {
  if (size <= 0) throw InvalidInput("nearest_cell: size must be >= 1");
  const int r = nearest_index(size, q.row);
  const int c = nearest_index(size, q.col);
  return {r, c, {cell_center(r, size), cell_center(c, size)}};
}

}  // namespace dmd::diif
