#include "qbdecon/error.hpp"
#include "qbdecon/hmc.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace qbd {

namespace {

// Halves of every chain, dropping the middle draw of odd-length chains.
std::vector<Vector> split(const std::vector<Vector>& chains) {
  std::vector<Vector> out;
  for (const Vector& c : chains) {
    const Eigen::Index half = c.size() / 2;
    out.emplace_back(c.head(half));
    out.emplace_back(c.tail(half));
  }
  return out;
}

bool constant(const std::vector<Vector>& chains) {
  const double first = chains.front()(0);
  for (const Vector& c : chains) {
    if ((c.array() != first).any()) return false;
  }
  return true;
}

// Pooled average ranks mapped through the normal quantile.
std::vector<Vector> rank_normalize(const std::vector<Vector>& chains) {
  std::vector<std::pair<double, std::size_t>> pooled;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (Eigen::Index i = 0; i < chains[c].size(); ++i) pooled.emplace_back(chains[c](i), pooled.size());
  }
  const std::size_t s = pooled.size();
  std::sort(pooled.begin(), pooled.end());
  std::vector<double> rank(s);
  for (std::size_t i = 0; i < s;) {
    std::size_t j = i;
    while (j + 1 < s && pooled[j + 1].first == pooled[i].first) ++j;
    const double avg = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[pooled[k].second] = avg;
    i = j + 1;
  }
  const boost::math::normal standard;
  std::vector<Vector> out;
  std::size_t pos = 0;
  for (const Vector& c : chains) {
    Vector z(c.size());
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      z(i) = boost::math::quantile(standard, (rank[pos++] - 0.375) / (double(s) + 0.25));
    }
    out.push_back(std::move(z));
  }
  return out;
}

std::optional<double> basic_rhat(const std::vector<Vector>& chains) {
  const double m = double(chains.size());
  const double n = double(chains.front().size());
  Vector means(chains.size()), vars(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    means(c) = chains[c].mean();
    vars(c) = (chains[c].array() - means(c)).square().sum() / (n - 1.0);
  }
  const double w = vars.mean();
  const double b = m > 1 ? n * (means.array() - means.mean()).square().sum() / (m - 1.0) : 0.0;
  if (w <= 0.0) {
    if (b > 0.0) return std::numeric_limits<double>::infinity();
    return std::nullopt;
  }
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

// Biased autocovariance of one chain at a given lag.
double autocov(const Vector& c, double mean, Eigen::Index lag) {
  const Eigen::Index n = c.size();
  return ((c.head(n - lag).array() - mean) * (c.tail(n - lag).array() - mean)).sum() / double(n);
}

// Geyer initial monotone sequence estimator.
std::optional<double> ess(const std::vector<Vector>& chains) {
  const std::size_t m = chains.size();
  const Eigen::Index n = chains.front().size();
  if (n < 4) return std::nullopt;
  Vector means(m), acov0(m);
  for (std::size_t c = 0; c < m; ++c) {
    means(c) = chains[c].mean();
    acov0(c) = autocov(chains[c], means(c), 0);
  }
  const double mean_var = acov0.mean() * double(n) / double(n - 1);
  double var_plus = mean_var * double(n - 1) / double(n);
  if (m > 1) var_plus += (means.array() - means.mean()).square().sum() / double(m - 1);
  if (!(var_plus > 0.0)) return std::nullopt;

  auto mean_acov = [&](Eigen::Index lag) {
    double acc = 0.0;
    for (std::size_t c = 0; c < m; ++c) acc += autocov(chains[c], means(c), lag);
    return acc / double(m);
  };

  Vector rho = Vector::Zero(n);
  double rho_even = 1.0;
  double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho(0) = rho_even;
  rho(1) = rho_odd;
  Eigen::Index s = 1;
  while (s < n - 4 && rho_even + rho_odd > 0) {
    rho_even = 1.0 - (mean_var - mean_acov(s + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - mean_acov(s + 2)) / var_plus;
    if (rho_even + rho_odd >= 0) {
      rho(s + 1) = rho_even;
      rho(s + 2) = rho_odd;
    }
    s += 2;
  }
  const Eigen::Index max_s = s;
  if (rho_even > 0) rho(max_s + 1) = rho_even;
  for (Eigen::Index k = 1; k <= max_s - 3; k += 2) {
    if (rho(k + 1) + rho(k + 2) > rho(k - 1) + rho(k)) {
      rho(k + 1) = 0.5 * (rho(k - 1) + rho(k));
      rho(k + 2) = rho(k + 1);
    }
  }
  const double total = double(m) * double(n);
  double tau = -1.0 + 2.0 * rho.head(max_s).sum() + rho(max_s + 1);
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

void check(const std::vector<Vector>& chains) {
  if (chains.empty()) throw InvalidParameter("diagnostics need at least one chain");
  const Eigen::Index n = chains.front().size();
  if (n < 4) throw InvalidParameter("diagnostics need at least 4 draws per chain");
  for (const Vector& c : chains) {
    if (c.size() != n) throw InvalidParameter("chains differ in length");
    if (!c.allFinite()) throw InvalidParameter("chain contains non-finite values");
  }
}

}  // namespace

std::optional<double> split_rhat(const std::vector<Vector>& chains) {
  check(chains);
  if (constant(chains)) return std::nullopt;
  const std::vector<Vector> halves = split(chains);
  const auto bulk = basic_rhat(rank_normalize(halves));

  // Folded draws pick up differences in scale.
  std::vector<double> pooled;
  for (const Vector& c : halves) pooled.insert(pooled.end(), c.data(), c.data() + c.size());
  std::nth_element(pooled.begin(), pooled.begin() + pooled.size() / 2, pooled.end());
  double median = pooled[pooled.size() / 2];
  if (pooled.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(pooled.begin(), pooled.begin() + pooled.size() / 2));
  }
  std::vector<Vector> folded;
  for (const Vector& c : halves) folded.emplace_back((c.array() - median).abs());
  const auto tail = constant(folded) ? std::nullopt : basic_rhat(rank_normalize(folded));

  if (!bulk) return tail;
  if (!tail) return bulk;
  return std::max(*bulk, *tail);
}

std::optional<double> ess_bulk(const std::vector<Vector>& chains) {
  check(chains);
  if (constant(chains)) return std::nullopt;
  return ess(rank_normalize(split(chains)));
}

std::optional<double> Diagnostics::max_rhat() const {
  std::optional<double> out;
  for (const auto& r : rhat) {
    if (r && (!out || *r > *out)) out = r;
  }
  return out;
}

std::optional<double> Diagnostics::min_ess() const {
  std::optional<double> out;
  for (const auto& e : ess) {
    if (e && (!out || *e < *out)) out = e;
  }
  return out;
}

Diagnostics diagnose(std::span<const PosteriorChain> chains) {
  if (chains.empty()) throw InvalidParameter("diagnostics need at least one chain");
  Diagnostics d;
  d.chains = static_cast<int>(chains.size());
  d.draws_per_chain = static_cast<int>(chains.front().draws.rows());
  const Eigen::Index dim = chains.front().draws.cols();
  for (const PosteriorChain& c : chains) {
    if (c.draws.cols() != dim) throw InvalidParameter("chains differ in dimension");
    d.divergences += c.divergences;
  }
  for (Eigen::Index j = 0; j < dim; ++j) {
    std::vector<Vector> coord;
    for (const PosteriorChain& c : chains) coord.emplace_back(c.draws.col(j));
    d.rhat.push_back(split_rhat(coord));
    d.ess.push_back(ess_bulk(coord));
  }
  return d;
}

}  // namespace qbd
