#pragma once

#include <vector>

namespace dmd::diif {

/// Normalized 2-D position in [-1,1]^2, row axis first.
struct Coord {
  double row = 0;
  double col = 0;
  bool operator==(const Coord&) const = default;
};

/// Centre of cell i in a size-S grid: (2i+1)/S - 1.
inline double cell_center(int index, int size) { return (2.0 * index + 1.0) / size - 1.0; }

/// Cell-centre coordinates of a size x size grid, row-major. Throws InvalidInput for size 0.
std::vector<Coord> make_coord_grid(int size);

struct CellPick {
  int row = 0;
  int col = 0;
  Coord center;
};

/// Nearest cell centre of a size x size grid to q under Euclidean distance;
/// ties go to the smaller row index, then the smaller column index.
CellPick nearest_cell(int size, Coord q);

}  // namespace dmd::diif
