#include "qbdecon/ecf.hpp"

#include "qbdecon/kernels.hpp"
#include "qbdecon/parallel.hpp"

namespace qbd {

Dataset::Dataset(Matrix observations) : obs_(std::move(observations)) {
  if (obs_.rows() < 1 || obs_.cols() < 1) {
    throw InvalidParameter("dataset needs at least one observation and one column");
  }
  if (!obs_.allFinite()) {
    throw InvalidParameter("dataset contains non-finite entries");
  }
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> upper_pairs(Eigen::Index dim) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  pairs.reserve(static_cast<std::size_t>(pair_count(dim)));
  for (Eigen::Index a = 0; a < dim; ++a) {
    for (Eigen::Index b = a; b < dim; ++b) pairs.emplace_back(a, b);
  }
  return pairs;
}

ComplexMatrix ECFCache::hess_at(Eigen::Index node) const {
  const Eigen::Index d = nodes.cols();
  ComplexMatrix h(d, d);
  Eigen::Index p = 0;
  for (const auto& [a, b] : upper_pairs(d)) {
    h(a, b) = hess(node, p);
    h(b, a) = hess(node, p);
    ++p;
  }
  return h;
}

namespace {

struct Scratch {
  Vector phase;
  Vector sin;
  Vector cos;

  void eval(const Matrix& z, const Vector& t) {
    phase.noalias() = z * t;
    sin.resize(phase.size());
    cos.resize(phase.size());
    const auto n = static_cast<std::size_t>(phase.size());
    kernels::sincos({phase.data(), n}, {sin.data(), n}, {cos.data(), n});
  }
};

Matrix pair_products(const Matrix& y) {
  const auto pairs = upper_pairs(y.cols());
  Matrix out(y.rows(), static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    out.col(static_cast<Eigen::Index>(p)) = y.col(pairs[p].first).cwiseProduct(y.col(pairs[p].second));
  }
  return out;
}

void check_node(const Dataset& data, const Vector& t) {
  if (t.size() != data.dim()) throw InvalidParameter("node dimension does not match the data");
}

}  // namespace

Complex ecf_eval(const Dataset& data, const Vector& t) {
  check_node(data, t);
  const Vector phase = data.observations() * t;
  const Complex sum = kernels::expi_sum({phase.data(), static_cast<std::size_t>(phase.size())}, {});
  return sum / static_cast<double>(data.size());
}

ComplexVector ecf_weighted(const Dataset& w_data, const Dataset& z_data, const Vector& t) {
  if (w_data.size() != z_data.size()) {
    throw InvalidParameter("weighted ECF needs equally many W and Z observations");
  }
  check_node(z_data, t);
  Scratch s;
  s.eval(z_data.observations(), t);
  const double inv_n = 1.0 / static_cast<double>(z_data.size());
  const Vector re = w_data.observations().transpose() * s.cos;
  const Vector im = w_data.observations().transpose() * s.sin;
  // i (re + i im) = -im + i re
  ComplexVector out(re.size());
  for (Eigen::Index l = 0; l < re.size(); ++l) out(l) = Complex{-im(l), re(l)} * inv_n;
  return out;
}

ComplexMatrix ecf_hess_combo(const Dataset& data, const Vector& t) {
  check_node(data, t);
  const Eigen::Index d = data.dim();
  Scratch s;
  s.eval(data.observations(), t);
  const double inv_n = 1.0 / static_cast<double>(data.size());
  const Complex phi = Complex{s.cos.sum(), s.sin.sum()} * inv_n;
  const Matrix& y = data.observations();
  const Vector m1_re = y.transpose() * s.cos * inv_n;
  const Vector m1_im = y.transpose() * s.sin * inv_n;
  ComplexMatrix out(d, d);
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = a; b < d; ++b) {
      const Vector prod = y.col(a).cwiseProduct(y.col(b));
      const Complex m2{prod.dot(s.cos) * inv_n, prod.dot(s.sin) * inv_n};
      const Complex value = -phi * m2 + Complex{m1_re(a), m1_im(a)} * Complex{m1_re(b), m1_im(b)};
      out(a, b) = value;
      out(b, a) = value;
    }
  }
  return out;
}

ECFCache build_cache(const Dataset& z_data, const Matrix& nodes, unsigned parts, const Dataset* w_data) {
  if (nodes.rows() > 0 && nodes.cols() != z_data.dim()) {
    throw InvalidParameter("node dimension does not match the data");
  }
  const bool want_weighted = (parts & kEcfWeighted) != 0;
  const bool want_hess = (parts & kEcfHess) != 0;
  if (want_weighted) {
    if (w_data == nullptr) throw InvalidParameter("weighted ECF cache needs W data");
    if (w_data->size() != z_data.size()) {
      throw InvalidParameter("weighted ECF needs equally many W and Z observations");
    }
  }

  const Eigen::Index count = nodes.rows();
  ECFCache cache;
  cache.nodes = nodes;
  cache.phi.resize(count);
  if (want_weighted) cache.weighted.resize(count, w_data->dim());
  const Eigen::Index d = z_data.dim();
  const auto pairs = upper_pairs(d);
  Matrix products;
  if (want_hess) {
    cache.hess.resize(count, static_cast<Eigen::Index>(pairs.size()));
    products = pair_products(z_data.observations());
  }
  const Matrix& z = z_data.observations();
  const double inv_n = 1.0 / static_cast<double>(z_data.size());
  const bool plain_only = !want_weighted && !want_hess;

  parallel_for(static_cast<std::size_t>(count), 16, [&](std::size_t begin, std::size_t end) {
    Scratch s;
    for (std::size_t i = begin; i < end; ++i) {
      const auto node = static_cast<Eigen::Index>(i);
      const Vector t = nodes.row(node).transpose();
      if (plain_only) {
        const Vector phase = z * t;
        cache.phi(node) =
            kernels::expi_sum({phase.data(), static_cast<std::size_t>(phase.size())}, {}) * inv_n;
        continue;
      }
      s.eval(z, t);
      const Complex phi = Complex{s.cos.sum(), s.sin.sum()} * inv_n;
      cache.phi(node) = phi;
      if (want_weighted) {
        const Vector re = w_data->observations().transpose() * s.cos;
        const Vector im = w_data->observations().transpose() * s.sin;
        for (Eigen::Index l = 0; l < re.size(); ++l) cache.weighted(node, l) = Complex{-im(l), re(l)} * inv_n;
      }
      if (want_hess) {
        const Vector m1_re = z.transpose() * s.cos * inv_n;
        const Vector m1_im = z.transpose() * s.sin * inv_n;
        const Vector m2_re = products.transpose() * s.cos * inv_n;
        const Vector m2_im = products.transpose() * s.sin * inv_n;
        for (std::size_t p = 0; p < pairs.size(); ++p) {
          const auto [a, b] = pairs[p];
          const auto pi = static_cast<Eigen::Index>(p);
          cache.hess(node, pi) = -phi * Complex{m2_re(pi), m2_im(pi)} +
                                 Complex{m1_re(a), m1_im(a)} * Complex{m1_re(b), m1_im(b)};
        }
      }
    }
  });
  return cache;
}

}  // namespace qbd
