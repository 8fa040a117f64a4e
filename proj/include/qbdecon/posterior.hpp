#pragma once

// Posterior summaries on a rectangular grid: posterior-mean density,
// pointwise credible bands and errors against a known density.

#include "qbdecon/mixture.hpp"

#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

namespace qbd {

// Rectangular grid, last axis varying fastest. Every point carries the cell
// volume (product of axis spacings) as its quadrature weight.
struct Grid {
  std::vector<Vector> axes;
  Matrix points;  // count x d
  double cell = 1.0;

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }

  static Grid uniform(double lo, double hi, Eigen::Index count);
  static Grid product(std::vector<Vector> axes);
  // Each axis spans [min - pad sd, max + pad sd] of the matching data column.
  static Grid from_data(const Matrix& data, Eigen::Index per_axis, double pad = 3.0);
};

// Points per axis used when none is configured: 512 for d = 1, 64 for d = 2,
// 24 for d = 3.
Eigen::Index default_grid_points(Eigen::Index dim);

struct Band {
  double level = 0.9;
  Vector lower;
  Vector upper;
};

struct DensityGrid {
  Grid grid;
  Vector mean;
  std::vector<Band> bands;
  std::size_t draws = 0;
};

// Pointwise average of the draw densities, with a band for each level.
DensityGrid posterior_mean_density(std::span<const MixtureParams> draws, const Grid& grid,
                                   const std::vector<double>& levels = {});

std::vector<MixtureParams> demean_draws(std::span<const MixtureParams> draws);

// Pointwise quantiles at (1 - level)/2 and (1 + level)/2 using the inverse
// empirical CDF.
Band credible_band(std::span<const MixtureParams> draws, const Grid& grid, double level);

struct DensityError {
  double l2 = 0.0;
  double linf = 0.0;
};

using DensityFn = std::function<double(const Vector&)>;

DensityError density_error(const DensityGrid& estimate, const DensityFn& truth);

// Columns: x (or x1..xd), mean, then lower_<level>, upper_<level> per band,
// then truth when given.
void write_density_csv(std::ostream& out, const DensityGrid& grid, const DensityFn& truth = {});

}  // namespace qbd
