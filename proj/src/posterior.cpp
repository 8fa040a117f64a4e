#include "qbdecon/posterior.hpp"

#include "qbdecon/error.hpp"
#include "qbdecon/parallel.hpp"
#include "internal/text.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace qbd {

namespace {

constexpr Eigen::Index kChunk = 64;

double axis_step(const Vector& axis) { return axis.size() > 1 ? axis(1) - axis(0) : 1.0; }

// Smallest order statistic whose empirical CDF reaches p.
double inverse_cdf(std::vector<double>& values, double p) {
  const std::size_t n = values.size();
  std::size_t k = static_cast<std::size_t>(std::ceil(p * double(n) - 1e-12));
  k = std::clamp<std::size_t>(k, 1, n) - 1;
  std::nth_element(values.begin(), values.begin() + k, values.end());
  return values[k];
}

void check_level(double level) {
  if (!(level > 0.0 && level < 1.0)) throw InvalidParameter("credible level must lie in (0, 1)");
}

void check_draws(std::span<const MixtureParams> draws, const Grid& grid) {
  if (draws.empty()) throw InvalidParameter("posterior summary needs at least one draw");
  for (const MixtureParams& d : draws) {
    if (d.dim() != grid.dim()) throw InvalidParameter("draw dimension does not match the grid");
  }
}

}  // namespace

Grid Grid::uniform(double lo, double hi, Eigen::Index count) {
  if (count < 2 || !(hi > lo)) throw InvalidParameter("uniform grid needs count >= 2 and hi > lo");
  return product({Vector::LinSpaced(count, lo, hi)});
}

Grid Grid::product(std::vector<Vector> axes) {
  if (axes.empty()) throw InvalidParameter("grid needs at least one axis");
  Grid g;
  Eigen::Index total = 1;
  for (const Vector& a : axes) {
    if (a.size() < 1) throw InvalidParameter("grid axis is empty");
    total *= a.size();
    g.cell *= axis_step(a);
  }
  const Eigen::Index d = static_cast<Eigen::Index>(axes.size());
  g.points.resize(total, d);
  for (Eigen::Index i = 0; i < total; ++i) {
    Eigen::Index rest = i;
    for (Eigen::Index k = d - 1; k >= 0; --k) {
      const Eigen::Index m = axes[k].size();
      g.points(i, k) = axes[k](rest % m);
      rest /= m;
    }
  }
  g.axes = std::move(axes);
  return g;
}

Grid Grid::from_data(const Matrix& data, Eigen::Index per_axis, double pad) {
  if (data.rows() < 2) throw InvalidParameter("grid from data needs at least two observations");
  std::vector<Vector> axes;
  for (Eigen::Index k = 0; k < data.cols(); ++k) {
    const auto col = data.col(k).array();
    const double mean = col.mean();
    const double sd = std::sqrt((col - mean).square().sum() / double(data.rows() - 1));
    const double spread = sd > 0 ? sd : 1.0;
    axes.push_back(Vector::LinSpaced(per_axis, col.minCoeff() - pad * spread, col.maxCoeff() + pad * spread));
  }
  return product(std::move(axes));
}

Eigen::Index default_grid_points(Eigen::Index dim) {
  switch (dim) {
    case 1: return 512;
    case 2: return 64;
    case 3: return 24;
    default: return 8;
  }
}

DensityGrid posterior_mean_density(std::span<const MixtureParams> draws, const Grid& grid,
                                   const std::vector<double>& levels) {
  check_draws(draws, grid);
  for (double l : levels) check_level(l);
  if (!levels.empty() && draws.size() < 2) throw InvalidParameter("credible bands need at least two draws");

  DensityGrid out;
  out.grid = grid;
  out.draws = draws.size();
  out.mean = Vector::Zero(grid.size());
  for (double l : levels) out.bands.push_back({l, Vector::Zero(grid.size()), Vector::Zero(grid.size())});

  const Eigen::Index points = grid.size();
  const std::size_t chunks = static_cast<std::size_t>((points + kChunk - 1) / kChunk);
  parallel_for(chunks, 1, [&](std::size_t begin, std::size_t end) {
    std::vector<double> column(draws.size());
    Matrix values;
    for (std::size_t c = begin; c < end; ++c) {
      const Eigen::Index lo = static_cast<Eigen::Index>(c) * kChunk;
      const Eigen::Index hi = std::min(points, lo + kChunk);
      values.resize(hi - lo, static_cast<Eigen::Index>(draws.size()));
      for (std::size_t s = 0; s < draws.size(); ++s) {
        for (Eigen::Index i = lo; i < hi; ++i) {
          values(i - lo, static_cast<Eigen::Index>(s)) = density(draws[s], grid.points.row(i).transpose());
        }
      }
      for (Eigen::Index i = lo; i < hi; ++i) {
        const auto row = values.row(i - lo);
        out.mean(i) = row.mean();
        for (Band& b : out.bands) {
          std::copy(row.begin(), row.end(), column.begin());
          b.lower(i) = inverse_cdf(column, 0.5 * (1.0 - b.level));
          b.upper(i) = inverse_cdf(column, 0.5 * (1.0 + b.level));
        }
      }
    }
  });
  return out;
}

std::vector<MixtureParams> demean_draws(std::span<const MixtureParams> draws) {
  std::vector<MixtureParams> out;
  out.reserve(draws.size());
  for (const MixtureParams& d : draws) out.push_back(demean(d));
  return out;
}

Band credible_band(std::span<const MixtureParams> draws, const Grid& grid, double level) {
  check_level(level);
  if (draws.size() < 2) throw InvalidParameter("credible bands need at least two draws");
  return posterior_mean_density(draws, grid, {level}).bands.front();
}

DensityError density_error(const DensityGrid& estimate, const DensityFn& truth) {
  DensityError e;
  double sq = 0.0;
  for (Eigen::Index i = 0; i < estimate.grid.size(); ++i) {
    const double diff = estimate.mean(i) - truth(estimate.grid.points.row(i).transpose());
    sq += diff * diff;
    e.linf = std::max(e.linf, std::abs(diff));
  }
  e.l2 = std::sqrt(sq * estimate.grid.cell);
  return e;
}

void write_density_csv(std::ostream& out, const DensityGrid& grid, const DensityFn& truth) {
  const Eigen::Index d = grid.grid.dim();
  if (d == 1) {
    out << "x";
  } else {
    for (Eigen::Index k = 0; k < d; ++k) out << (k ? ",x" : "x") << k + 1;
  }
  out << ",mean";
  for (const Band& b : grid.bands) out << ",lower_" << detail::num(b.level) << ",upper_" << detail::num(b.level);
  if (truth) out << ",truth";
  out << '\n';
  for (Eigen::Index i = 0; i < grid.grid.size(); ++i) {
    for (Eigen::Index k = 0; k < d; ++k) out << (k ? "," : "") << detail::num(grid.grid.points(i, k));
    out << ',' << detail::num(grid.mean(i));
    for (const Band& b : grid.bands) out << ',' << detail::num(b.lower(i)) << ',' << detail::num(b.upper(i));
    if (truth) out << ',' << detail::num(truth(grid.grid.points.row(i).transpose()));
    out << '\n';
  }
}

}  // namespace qbd
