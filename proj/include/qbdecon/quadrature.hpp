#pragma once

// Deterministic node/weight sets for the two frequency-domain norms:
// the L2 norm over the cube [-T, T]^d, and the boundary-corrected norm over
// the Euclidean ball of radius T plus its sphere with radial line integrals.

#include "qbdecon/mixture.hpp"

#include <functional>
#include <span>

namespace qbd {

struct NodeSet {
  Matrix nodes;    // N x d
  Vector weights;  // N

  Eigen::Index size() const { return nodes.rows(); }
  Eigen::Index dim() const { return nodes.cols(); }
  static NodeSet concat(const NodeSet& a, const NodeSet& b);
};

inline constexpr double kMaxQuadratureNodes = 1e7;

// Midpoint tensor rule on [-T, T]^d with m points per axis.
struct BoxQuadrature {
  double radius = 0.0;
  int per_dim = 0;
  NodeSet set;
};

BoxQuadrature build_box(double radius, int per_dim, int dim);

// sum_n w_n |values_n|^2
double seminorm_sq(std::span<const Complex> values, const BoxQuadrature& quad);
double seminorm_sq(std::span<const Complex> values, const NodeSet& set);

// Gauss-Legendre nodes and weights on [a, b].
void gauss_legendre(int count, double a, double b, Vector& nodes, Vector& weights);

// Sphere of radius T (equal-angle circle for d = 2, Fibonacci lattice for
// d = 3, the two points +-T with counting measure for d = 1), Gauss-Legendre
// line nodes on [0, 1], and a polar-product rule for the ball volume.
struct SphereLineQuadrature {
  double radius = 0.0;
  int sphere_count = 0;
  int line_count = 0;
  Matrix sphere_nodes;   // M x d, each of Euclidean norm T
  Vector sphere_weights; // sum = surface measure of the radius-T sphere
  Vector line_nodes;     // q points in (0, 1)
  Vector line_weights;   // sum = 1
  NodeSet ball;          // volume term
  NodeSet boundary;      // sphere x line product: nodes tau * z, weights w_z * w_tau

  // Single weighted node set whose sum of w |g|^2 is the boundary metric.
  NodeSet combined() const { return NodeSet::concat(ball, boundary); }
};

SphereLineQuadrature build_sphere_line(double radius, int sphere_count, int line_count, int dim);

using VectorField = std::function<ComplexVector(const Vector&)>;

// int_ball ||g||^2 + int_sphere int_0^1 ||g(tau z)||^2 dtau dH(z)
double boundary_metric_sq(const VectorField& g, const SphereLineQuadrature& quad);

struct QuadratureDefaults {
  int per_dim;
  int sphere_count;
  int line_count;
};
QuadratureDefaults default_quadrature(int dim);

double sphere_surface(int dim, double radius);
double ball_volume(int dim, double radius);

}  // namespace qbd
