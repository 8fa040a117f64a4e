#include "qbdecon/hmc.hpp"

#include "qbdecon/error.hpp"
#include "qbdecon/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace qbd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

bool evaluate(PhasePoint& z, const LogDensityFn& target) {
  z.logp = target(z.q, &z.grad);
  return std::isfinite(z.logp) && z.grad.allFinite();
}

// Dual averaging of log step size.
class StepsizeAdapter {
 public:
  explicit StepsizeAdapter(double delta) : delta_(delta) {}

  void restart(double stepsize) {
    mu_ = std::log(10.0 * stepsize);
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }

  double learn(double accept) {
    ++counter_;
    accept = std::min(accept, 1.0);
    const double eta = 1.0 / (counter_ + kT0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept);
    const double x = mu_ - s_bar_ * std::sqrt(double(counter_)) / kGamma;
    const double x_eta = std::pow(double(counter_), -kKappa);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }

  double final_stepsize() const { return std::exp(x_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double delta_;
  double mu_ = 0.0;
  int counter_ = 0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
};

// Expanding windows: an initial buffer tuned on step size only, metric
// windows that double in length, and a terminal step-size buffer.
class MetricWindows {
 public:
  MetricWindows(int warmup, Eigen::Index dim) : warmup_(warmup), mean_(Vector::Zero(dim)), sq_(Vector::Zero(dim)) {
    if (warmup < 20) {
      active_ = false;
      return;
    }
    // A 50-iteration terminal buffer leaves the averaged step size short of
    // the target after the last restart, so it grows with warmup.
    term_buffer_ = std::max(term_buffer_, warmup / 5);
    if (init_buffer_ + base_window_ + term_buffer_ > warmup) {
      init_buffer_ = static_cast<int>(0.15 * warmup);
      term_buffer_ = static_cast<int>(0.1 * warmup);
      base_window_ = warmup - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
  }

  // Feeds the draw from warmup iteration `counter_`. Returns true and fills
  // inv_metric when a window closes.
  bool learn(const Vector& q, Vector& inv_metric) {
    if (!active_) return false;
    const bool in_window = counter_ >= init_buffer_ && counter_ < warmup_ - term_buffer_ && counter_ != warmup_;
    if (in_window) add(q);
    if (counter_ == next_window_ && counter_ != warmup_) {
      compute_next_window();
      const double n = count_;
      Vector var = (sq_ / (n - 1.0)).cwiseMax(0.0);
      inv_metric = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
      count_ = 0;
      mean_.setZero();
      sq_.setZero();
      ++counter_;
      return true;
    }
    ++counter_;
    return false;
  }

 private:
  void add(const Vector& q) {
    // Welford update.
    ++count_;
    const Vector delta = q - mean_;
    mean_ += delta / double(count_);
    sq_ += delta.cwiseProduct(q - mean_);
  }

  void compute_next_window() {
    if (next_window_ == warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != warmup_ - term_buffer_ - 1) {
      const int boundary = next_window_ + 2 * window_size_;
      if (boundary >= warmup_ - term_buffer_) next_window_ = warmup_ - term_buffer_ - 1;
    }
  }

  int warmup_;
  bool active_ = true;
  int init_buffer_ = 75;
  int term_buffer_ = 50;
  int base_window_ = 25;
  int window_size_ = 0;
  int next_window_ = 0;
  int counter_ = 0;
  int count_ = 0;
  Vector mean_;
  Vector sq_;
};

class Nuts {
 public:
  Nuts(const LogDensityFn& target, const HMCConfig& config, Eigen::Index dim)
      : target_(target), config_(config), rng_(config.seed), inv_metric_(Vector::Ones(dim)) {}

  void set_stepsize(double e) { stepsize_ = e; }
  double stepsize() const { return stepsize_; }
  const Vector& inv_metric() const { return inv_metric_; }
  void set_inv_metric(const Vector& m) { inv_metric_ = m; }
  std::size_t gradient_evals() const { return evals_; }

  struct Result {
    double accept = 0.0;
    bool divergent = false;
    int depth = 0;
  };

  void sample_momentum(PhasePoint& z) {
    z.p.resize(z.q.size());
    for (Eigen::Index i = 0; i < z.p.size(); ++i) z.p(i) = normal_(rng_) / std::sqrt(inv_metric_(i));
  }

  // Doubles or halves the step size until one leapfrog step crosses an
  // acceptance probability of 0.8.
  void init_stepsize(const PhasePoint& start) {
    if (stepsize_ <= 0 || stepsize_ > 1e7 || !std::isfinite(stepsize_)) return;
    auto delta_h = [&] {
      PhasePoint z = start;
      sample_momentum(z);
      const double h0 = hamiltonian(z, inv_metric_);
      ++evals_;
      const bool ok = leapfrog(z, stepsize_, inv_metric_, target_);
      const double h = ok ? hamiltonian(z, inv_metric_) : kInf;
      return std::isnan(h) ? -kInf : h0 - h;
    };
    const double threshold = std::log(0.8);
    const int direction = delta_h() > threshold ? 1 : -1;
    while (true) {
      const double dh = delta_h();
      if (direction == 1 && !(dh > threshold)) break;
      if (direction == -1 && !(dh < threshold)) break;
      stepsize_ = direction == 1 ? 2.0 * stepsize_ : 0.5 * stepsize_;
      if (stepsize_ > 1e7) throw SamplerAbort("step size search diverged to infinity: posterior may be improper");
      if (stepsize_ == 0.0) throw SamplerAbort("step size search collapsed to zero: log density may be discontinuous");
    }
  }

  Result transition(PhasePoint& z) {
    sample_momentum(z);
    divergent_ = false;
    PhasePoint z_fwd = z, z_bck = z, z_sample = z, z_propose = z;

    const Vector p_sharp0 = inv_metric_.cwiseProduct(z.p);
    Vector p_sharp_fwd_fwd = p_sharp0, p_sharp_fwd_bck = p_sharp0;
    Vector p_sharp_bck_fwd = p_sharp0, p_sharp_bck_bck = p_sharp0;
    Vector p_fwd_fwd = z.p, p_fwd_bck = z.p, p_bck_fwd = z.p, p_bck_bck = z.p;
    Vector rho = z.p;

    double log_sum_weight = 0.0;
    const double h0 = hamiltonian(z, inv_metric_);
    int n_leapfrog = 0;
    double sum_metro = 0.0;
    int depth = 0;
    const Eigen::Index dim = z.q.size();

    while (depth < config_.max_depth) {
      Vector rho_fwd = Vector::Zero(dim), rho_bck = Vector::Zero(dim);
      bool valid = false;
      double log_sum_weight_sub = -kInf;
      if (uniform_(rng_) > 0.5) {
        current_ = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid = build_tree(depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd, h0, 1,
                           n_leapfrog, log_sum_weight_sub, sum_metro);
        z_fwd = current_;
      } else {
        current_ = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid = build_tree(depth, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck, p_bck_fwd, p_bck_bck, h0, -1,
                           n_leapfrog, log_sum_weight_sub, sum_metro);
        z_bck = current_;
      }
      if (!valid) break;
      ++depth;

      if (log_sum_weight_sub > log_sum_weight) {
        z_sample = z_propose;
      } else if (uniform_(rng_) < std::exp(log_sum_weight_sub - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_sub);

      rho = rho_bck + rho_fwd;
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      Vector rho_ext = rho_bck + p_fwd_bck;
      persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_ext);
      rho_ext = rho_fwd + p_bck_fwd;
      persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_ext);
      if (!persist) break;
    }
    z = z_sample;
    Result r;
    r.accept = n_leapfrog > 0 ? sum_metro / n_leapfrog : 0.0;
    r.divergent = divergent_;
    r.depth = depth;
    return r;
  }

 private:
  static bool criterion(const Vector& p_sharp_minus, const Vector& p_sharp_plus, const Vector& rho) {
    return p_sharp_plus.dot(rho) > 0 && p_sharp_minus.dot(rho) > 0;
  }

  bool build_tree(int depth, PhasePoint& z_propose, Vector& p_sharp_beg, Vector& p_sharp_end, Vector& rho,
                  Vector& p_beg, Vector& p_end, double h0, int sign, int& n_leapfrog, double& log_sum_weight,
                  double& sum_metro) {
    if (depth == 0) {
      ++evals_;
      ++n_leapfrog;
      const bool ok = leapfrog(current_, sign * stepsize_, inv_metric_, target_);
      double h = ok ? hamiltonian(current_, inv_metric_) : kInf;
      if (std::isnan(h)) h = kInf;
      if (h - h0 > config_.max_energy_error) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro += h0 - h > 0 ? 1.0 : std::exp(h0 - h);
      z_propose = current_;
      p_sharp_beg = inv_metric_.cwiseProduct(current_.p);
      p_sharp_end = p_sharp_beg;
      rho += current_.p;
      p_beg = current_.p;
      p_end = p_beg;
      return !divergent_;
    }
    const Eigen::Index dim = rho.size();

    double log_sum_weight_init = -kInf;
    Vector p_init_end(dim), p_sharp_init_end(dim), rho_init = Vector::Zero(dim);
    if (!build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg, p_init_end, h0, sign,
                    n_leapfrog, log_sum_weight_init, sum_metro)) {
      return false;
    }

    PhasePoint z_propose_final = current_;
    double log_sum_weight_final = -kInf;
    Vector p_final_beg(dim), p_sharp_final_beg(dim), rho_final = Vector::Zero(dim);
    if (!build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final, p_final_beg, p_end, h0,
                    sign, n_leapfrog, log_sum_weight_final, sum_metro)) {
      return false;
    }

    const double log_sum_weight_sub = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_sub);
    if (log_sum_weight_final > log_sum_weight_sub) {
      z_propose = z_propose_final;
    } else if (uniform_(rng_) < std::exp(log_sum_weight_final - log_sum_weight_sub)) {
      z_propose = z_propose_final;
    }

    const Vector rho_sub = rho_init + rho_final;
    rho += rho_sub;
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_sub);
    Vector rho_ext = rho_init + p_final_beg;
    persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, rho_ext);
    rho_ext = rho_final + p_init_end;
    persist = persist && criterion(p_sharp_init_end, p_sharp_end, rho_ext);
    return persist;
  }

  const LogDensityFn& target_;
  const HMCConfig& config_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  Vector inv_metric_;
  double stepsize_ = 1.0;
  bool divergent_ = false;
  PhasePoint current_;
  std::size_t evals_ = 0;
};

}  // namespace

void HMCConfig::validate() const {
  if (draws < 1) throw ConfigError("draws", "must be at least 1");
  if (warmup < 0) throw ConfigError("warmup", "must be non-negative");
  if (!(target_accept > 0.0 && target_accept < 1.0)) throw ConfigError("target_accept", "must lie in (0, 1)");
  if (max_depth < 1) throw ConfigError("max_depth", "must be at least 1");
  if (!(max_energy_error > 0.0)) throw ConfigError("max_energy_error", "must be positive");
  if (chains < 1) throw ConfigError("chains", "must be at least 1");
  if (init_tries < 1) throw ConfigError("init_tries", "must be at least 1");
  if (max_consecutive_divergences < 1) throw ConfigError("max_consecutive_divergences", "must be at least 1");
}

double hamiltonian(const PhasePoint& z, const Vector& inv_metric) {
  return -z.logp + 0.5 * z.p.cwiseProduct(inv_metric).dot(z.p);
}

bool leapfrog(PhasePoint& z, double stepsize, const Vector& inv_metric, const LogDensityFn& target) {
  z.p += 0.5 * stepsize * z.grad;
  z.q += stepsize * inv_metric.cwiseProduct(z.p);
  if (!evaluate(z, target)) return false;
  z.p += 0.5 * stepsize * z.grad;
  return true;
}

bool leapfrog(Vector& position, Vector& momentum, double stepsize, const LogDensityFn& target) {
  PhasePoint z;
  z.q = position;
  z.p = momentum;
  z.grad.resize(position.size());
  if (!evaluate(z, target)) return false;
  const bool ok = leapfrog(z, stepsize, Vector::Ones(position.size()), target);
  position = z.q;
  momentum = z.p;
  return ok;
}

PosteriorChain nuts_sample(const LogDensityFn& target, const HMCConfig& config, const Vector& init) {
  config.validate();
  const Eigen::Index dim = init.size();
  PhasePoint z;
  z.q = init;
  z.grad.resize(dim);
  if (!evaluate(z, target)) throw SamplerAbort("log density is not finite at the initial state");

  Nuts nuts(target, config, dim);
  StepsizeAdapter adapter(config.target_accept);
  MetricWindows windows(config.warmup, dim);
  nuts.init_stepsize(z);
  adapter.restart(nuts.stepsize());

  PosteriorChain chain;
  chain.seed = config.seed;
  chain.draws.resize(config.draws, dim);
  chain.log_density.resize(config.draws);
  int consecutive = 0;
  double accept_sum = 0.0;
  double depth_sum = 0.0;

  const int total = config.warmup + config.draws;
  for (int it = 0; it < total; ++it) {
    const bool warm = it < config.warmup;
    const Nuts::Result r = nuts.transition(z);
    if (r.divergent) {
      if (++consecutive >= config.max_consecutive_divergences) {
        throw SamplerAbort("all trajectories diverged for " + std::to_string(consecutive) +
                           " consecutive iterations (iteration " + std::to_string(it) + ", step size " +
                           std::to_string(nuts.stepsize()) + ")");
      }
    } else {
      consecutive = 0;
    }
    if (warm) {
      chain.warmup_divergences += r.divergent;
      nuts.set_stepsize(adapter.learn(r.accept));
      Vector inv_metric;
      if (config.adapt_metric && windows.learn(z.q, inv_metric)) {
        nuts.set_inv_metric(inv_metric);
        nuts.init_stepsize(z);
        adapter.restart(nuts.stepsize());
      }
      if (it + 1 == config.warmup) nuts.set_stepsize(adapter.final_stepsize());
    } else {
      const int k = it - config.warmup;
      chain.draws.row(k) = z.q.transpose();
      chain.log_density(k) = z.logp;
      chain.divergences += r.divergent;
      accept_sum += r.accept;
      depth_sum += r.depth;
    }
  }
  chain.mean_accept = accept_sum / config.draws;
  chain.mean_tree_depth = depth_sum / config.draws;
  chain.stepsize = nuts.stepsize();
  chain.inv_metric = nuts.inv_metric();
  chain.gradient_evals = nuts.gradient_evals();
  return chain;
}

std::vector<PosteriorChain> run_chains(const LogDensityFn& target, const HMCConfig& config,
                                       const InitSampler& init_sampler, const std::optional<Vector>& init) {
  config.validate();
  std::vector<PosteriorChain> chains(config.chains);
  parallel_for(
      chains.size(), 1,
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
          HMCConfig local = config;
          local.seed = config.seed + c;
          Vector start;
          if (init) {
            start = *init;
          } else {
            // A separate stream for initialization keeps the sampler stream
            // identical whatever the number of init attempts.
            std::mt19937_64 init_rng(local.seed ^ 0x9e3779b97f4a7c15ULL);
            bool found = false;
            for (int t = 0; t < config.init_tries && !found; ++t) {
              start = init_sampler(init_rng);
              Vector g(start.size());
              const double lp = target(start, &g);
              found = std::isfinite(lp) && g.allFinite();
            }
            if (!found) {
              throw SamplerAbort("no prior draw with finite log density after " + std::to_string(config.init_tries) +
                                 " tries (chain " + std::to_string(c) + ")");
            }
          }
          chains[c] = nuts_sample(target, local, start);
        }
      },
      config.threads);
  return chains;
}

}  // namespace qbd
