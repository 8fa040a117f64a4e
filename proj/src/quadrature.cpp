#include "qbdecon/quadrature.hpp"

#include <cmath>
#include <numbers>

namespace qbd {

NodeSet NodeSet::concat(const NodeSet& a, const NodeSet& b) {
  if (a.size() > 0 && b.size() > 0 && a.dim() != b.dim()) {
    throw InvalidParameter("cannot join node sets of different dimension");
  }
  const Eigen::Index d = a.size() > 0 ? a.dim() : b.dim();
  NodeSet out{Matrix(a.size() + b.size(), d), Vector(a.size() + b.size())};
  if (a.size() > 0) {
    out.nodes.topRows(a.size()) = a.nodes;
    out.weights.head(a.size()) = a.weights;
  }
  if (b.size() > 0) {
    out.nodes.bottomRows(b.size()) = b.nodes;
    out.weights.tail(b.size()) = b.weights;
  }
  return out;
}

BoxQuadrature build_box(double radius, int per_dim, int dim) {
  if (!(radius > 0.0) || !std::isfinite(radius)) throw InvalidParameter("box radius must be positive");
  if (per_dim < 2) throw InvalidParameter("box rule needs at least 2 nodes per dimension");
  if (dim < 1) throw InvalidParameter("dimension must be >= 1");
  const double total = std::pow(static_cast<double>(per_dim), dim);
  if (total > kMaxQuadratureNodes) {
    throw ResourceError("box rule would need " + std::to_string(total) + " nodes (limit 1e7)");
  }
  const auto count = static_cast<Eigen::Index>(total);
  const double h = 2.0 * radius / per_dim;
  Vector axis(per_dim);
  for (int i = 0; i < per_dim; ++i) axis(i) = -radius + (i + 0.5) * h;

  BoxQuadrature quad{radius, per_dim, {Matrix(count, dim), Vector::Constant(count, std::pow(h, dim))}};
  for (Eigen::Index n = 0; n < count; ++n) {
    Eigen::Index rest = n;
    for (int l = dim - 1; l >= 0; --l) {
      quad.set.nodes(n, l) = axis(rest % per_dim);
      rest /= per_dim;
    }
  }
  return quad;
}

double seminorm_sq(std::span<const Complex> values, const NodeSet& set) {
  if (static_cast<Eigen::Index>(values.size()) != set.size()) {
    throw InvalidParameter("values are not aligned with the quadrature nodes");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) acc += set.weights(static_cast<Eigen::Index>(i)) * std::norm(values[i]);
  return acc;
}

double seminorm_sq(std::span<const Complex> values, const BoxQuadrature& quad) {
  return seminorm_sq(values, quad.set);
}

void gauss_legendre(int count, double a, double b, Vector& nodes, Vector& weights) {
  if (count < 1) throw InvalidParameter("Gauss-Legendre rule needs at least one node");
  nodes.resize(count);
  weights.resize(count);
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const int m = (count + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (count + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = 0.0;
      for (int k = 1; k <= count; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p2) / k;
      }
      dp = count * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    nodes(i) = mid - half * x;
    nodes(count - 1 - i) = mid + half * x;
    const double w = 2.0 * half / ((1.0 - x * x) * dp * dp);
    weights(i) = w;
    weights(count - 1 - i) = w;
  }
}

double sphere_surface(int dim, double radius) {
  switch (dim) {
    case 1:
      return 2.0;
    case 2:
      return 2.0 * std::numbers::pi * radius;
    case 3:
      return 4.0 * std::numbers::pi * radius * radius;
    default:
      return 2.0 * std::pow(std::numbers::pi, 0.5 * dim) / std::tgamma(0.5 * dim) * std::pow(radius, dim - 1);
  }
}

double ball_volume(int dim, double radius) {
  return std::pow(std::numbers::pi, 0.5 * dim) / std::tgamma(0.5 * dim + 1.0) * std::pow(radius, dim);
}

SphereLineQuadrature build_sphere_line(double radius, int sphere_count, int line_count, int dim) {
  if (dim < 1 || dim > 3) {
    throw DomainError("boundary-corrected metric supports d in {1, 2, 3}; use the plain box posterior for d = " +
                      std::to_string(dim));
  }
  if (!(radius > 0.0) || !std::isfinite(radius)) throw InvalidParameter("sphere radius must be positive");
  if (dim > 1 && sphere_count < 8) throw InvalidParameter("sphere rule needs at least 8 nodes");
  if (line_count < 4) throw InvalidParameter("line rule needs at least 4 nodes");

  SphereLineQuadrature quad;
  quad.radius = radius;
  quad.line_count = line_count;
  Matrix directions;
  if (dim == 1) {
    directions = Matrix(2, 1);
    directions << -1.0, 1.0;
  } else if (dim == 2) {
    directions = Matrix(sphere_count, 2);
    for (int i = 0; i < sphere_count; ++i) {
      const double angle = 2.0 * std::numbers::pi * i / sphere_count;
      directions(i, 0) = std::cos(angle);
      directions(i, 1) = std::sin(angle);
    }
  } else {
    directions = Matrix(sphere_count, 3);
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < sphere_count; ++i) {
      const double z = 1.0 - (2.0 * i + 1.0) / sphere_count;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double phi = golden * i;
      directions(i, 0) = r * std::cos(phi);
      directions(i, 1) = r * std::sin(phi);
      directions(i, 2) = z;
    }
  }
  const auto m = directions.rows();
  quad.sphere_count = static_cast<int>(m);
  quad.sphere_nodes = radius * directions;
  quad.sphere_weights = Vector::Constant(m, sphere_surface(dim, radius) / static_cast<double>(m));
  gauss_legendre(line_count, 0.0, 1.0, quad.line_nodes, quad.line_weights);

  // Boundary product: node tau_k z_i, weight w_i * w_k.
  quad.boundary.nodes.resize(m * line_count, dim);
  quad.boundary.weights.resize(m * line_count);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (int k = 0; k < line_count; ++k) {
      const Eigen::Index row = i * line_count + k;
      quad.boundary.nodes.row(row) = quad.line_nodes(k) * quad.sphere_nodes.row(i);
      quad.boundary.weights(row) = quad.sphere_weights(i) * quad.line_weights(k);
    }
  }

  // Ball: Gauss-Legendre in the radius times the unit-sphere rule, with the
  // r^(d-1) polar Jacobian folded into the weight.
  Vector r_nodes;
  Vector r_weights;
  gauss_legendre(line_count, 0.0, radius, r_nodes, r_weights);
  const double unit_weight = sphere_surface(dim, 1.0) / static_cast<double>(m);
  quad.ball.nodes.resize(m * line_count, dim);
  quad.ball.weights.resize(m * line_count);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (int k = 0; k < line_count; ++k) {
      const Eigen::Index row = i * line_count + k;
      quad.ball.nodes.row(row) = r_nodes(k) * directions.row(i);
      quad.ball.weights(row) = r_weights(k) * std::pow(r_nodes(k), dim - 1) * unit_weight;
    }
  }
  return quad;
}

double boundary_metric_sq(const VectorField& g, const SphereLineQuadrature& quad) {
  auto accumulate = [&](const NodeSet& set) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < set.size(); ++i) {
      const Vector t = set.nodes.row(i).transpose();
      acc += set.weights(i) * g(t).squaredNorm();
    }
    return acc;
  };
  return accumulate(quad.ball) + accumulate(quad.boundary);
}

QuadratureDefaults default_quadrature(int dim) {
  switch (dim) {
    case 1:
      return {128, 2, 16};
    case 2:
      return {48, 64, 16};
    case 3:
      return {24, 256, 16};
    default:
      return {std::max(4, static_cast<int>(std::floor(std::pow(1e6, 1.0 / dim)))), 0, 0};
  }
}

}  // namespace qbd
