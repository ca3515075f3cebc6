#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "nphmm/emissions.hpp"
#include "nphmm/error.hpp"
#include "nphmm/random.hpp"

namespace nphmm {


/// k x k row-stochastic matrix carrying its entry floor q, i.e. a member
/// of the set of transition matrices with min_ij Q_ij >= q.
class TransitionMatrix {
 public:
  TransitionMatrix() = default;

  /// `rows` is row-major, length k*k.
  TransitionMatrix(std::size_t k, std::vector<double> rows, double q_floor)
      : k_(k), rows_(std::move(rows)), q_floor_(q_floor) {
    detail::require(k_ >= 1, "transition matrix needs k >= 1");
    detail::require(rows_.size() == k_ * k_, "transition matrix needs k*k entries");
    detail::require(q_floor_ >= 0.0 && q_floor_ * static_cast<double>(k_) <= 1.0 + kConstructionTolerance,
                    "q_floor must lie in [0, 1/k]");
    const double ceiling = 1.0 - static_cast<double>(k_ - 1) * q_floor_;
    for (std::size_t i = 0; i < k_; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < k_; ++j) {
        const double q = (*this)(i, j);
        detail::require(std::isfinite(q), "transition entry must be finite");
        detail::require(q >= q_floor_ - kConstructionTolerance, "transition entry below q_floor");
        detail::require(q <= ceiling + kConstructionTolerance, "transition entry above 1-(k-1)q_floor");
        total += q;
      }
      detail::require(std::abs(total - 1.0) <= kConstructionTolerance, "transition row must sum to 1");
    }
  }

  /// Row-major construction from nested rows.
  static TransitionMatrix from_rows(const std::vector<std::vector<double>>& rows, double q_floor) {
    std::vector<double> flat;
    for (const auto& r : rows) {
      detail::require(r.size() == rows.size(), "transition matrix must be square");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return TransitionMatrix(rows.size(), std::move(flat), q_floor);
  }

  std::size_t k() const { return k_; }
  double q_floor() const { return q_floor_; }
  double operator()(std::size_t i, std::size_t j) const { return rows_[i * k_ + j]; }
  std::span<const double> row(std::size_t i) const { return {rows_.data() + i * k_, k_}; }
  std::span<const double> entries() const { return rows_; }

  friend bool operator==(const TransitionMatrix&, const TransitionMatrix&) = default;

 private:
  std::size_t k_ = 0;
  std::vector<double> rows_;
  double q_floor_ = 0.0;
};

/// theta = (Q, f) together with the fixed initial law mu.
class HmmParams {
 public:
  HmmParams() = default;
  HmmParams(TransitionMatrix transitions, std::vector<double> initial, std::vector<EmissionModel> emissions)
      : transitions_(std::move(transitions)), initial_(std::move(initial)), emissions_(std::move(emissions)) {
    const std::size_t k = transitions_.k();
    detail::require(initial_.size() == k, "initial law length must equal k");
    detail::require(emissions_.size() == k, "emission vector length must equal k");
    double total = 0.0;
    for (double m : initial_) {
      detail::require(m >= transitions_.q_floor() - kConstructionTolerance, "initial law entry below q_floor");
      total += m;
    }
    detail::require(std::abs(total - 1.0) <= kConstructionTolerance, "initial law must sum to 1");
  }

  std::size_t k() const { return transitions_.k(); }
  const TransitionMatrix& transitions() const { return transitions_; }
  std::span<const double> initial() const { return initial_; }
  std::span<const EmissionModel> emissions() const { return emissions_; }
  const EmissionModel& emission(std::size_t i) const { return emissions_[i]; }

  bool all_discrete() const {
    return std::all_of(emissions_.begin(), emissions_.end(), [](const auto& e) { return is_discrete(e); });
  }

  /// Same (Q, f) with another initial law.
  HmmParams with_initial(std::vector<double> initial) const {
    return HmmParams(transitions_, std::move(initial), emissions_);
  }

  friend bool operator==(const HmmParams&, const HmmParams&) = default;

 private:
  TransitionMatrix transitions_;
  std::vector<double> initial_;
  std::vector<EmissionModel> emissions_;
};

// ---------------------------------------------------------------------------
// Stationary law

inline constexpr double kStationaryResidual = 1e-12;

namespace detail {

inline double stationary_residual(const TransitionMatrix& q, std::span<const double> mu) {
  double worst = 0.0;
  for (std::size_t j = 0; j < q.k(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.k(); ++i) s += mu[i] * q(i, j);
    worst = std::max(worst, std::abs(s - mu[j]));
  }
  return worst;
}

inline std::vector<double> stationary_power(const TransitionMatrix& q, int budget) {
  const std::size_t k = q.k();
  std::vector<double> mu(k, 1.0 / static_cast<double>(k)), next(k);
  for (int it = 0; it < budget; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) next[j] += mu[i] * q(i, j);
    const double total = std::accumulate(next.begin(), next.end(), 0.0);
    for (double& x : next) x /= total;
    mu.swap(next);
    if (stationary_residual(q, mu) <= kStationaryResidual) return mu;
  }
  throw NumericalError("stationary power iteration did not converge");
}

}  // namespace detail

/// Unique probability vector with mu Q = mu. Direct solve of
/// (Q^T - I) with one equation replaced by sum-to-one for k <= 64, power
/// iteration above.
inline std::vector<double> stationary_distribution(const TransitionMatrix& q) {
  const std::size_t k = q.k();
  if (k == 1) return {1.0};
  std::vector<double> mu(k);
  if (k <= 64) {
    Eigen::MatrixXd a(k, k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) a(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = q(i, j) - (i == j ? 1.0 : 0.0);
    a.row(static_cast<Eigen::Index>(k - 1)).setOnes();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
    b(static_cast<Eigen::Index>(k - 1)) = 1.0;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (!lu.isInvertible()) throw NumericalError("stationary system is singular (chain not irreducible)");
    const Eigen::VectorXd x = lu.solve(b);
    for (std::size_t i = 0; i < k; ++i) mu[i] = x(static_cast<Eigen::Index>(i));
  } else {
    mu = detail::stationary_power(q, 100'000);
  }
  for (double& m : mu) {
    if (m < 0.0 && m > -kStationaryResidual) m = 0.0;
  }
  if (detail::stationary_residual(q, mu) > kStationaryResidual ||
      std::any_of(mu.begin(), mu.end(), [](double m) { return m < 0.0; }))
    throw NumericalError("stationary solve failed its residual tolerance");
  return mu;
}

/// theta with mu replaced by the stationary law of its transitions.
inline HmmParams stationary_version(const HmmParams& theta) {
  auto mu = stationary_distribution(theta.transitions());
  // Stationary entries are >= q_floor analytically; clamp rounding.
  for (double& m : mu) m = std::max(m, theta.transitions().q_floor());
  const double total = std::accumulate(mu.begin(), mu.end(), 0.0);
  for (double& m : mu) m /= total;
  return theta.with_initial(std::move(mu));
}

// ---------------------------------------------------------------------------
// Forward recursion

/// n x k table of f_i(y_t), row-major.
inline std::vector<double> emission_table(const HmmParams& theta, std::span<const Observation> y) {
  const std::size_t k = theta.k();
  std::vector<double> table(y.size() * k);
  for (std::size_t t = 0; t < y.size(); ++t)
    for (std::size_t i = 0; i < k; ++i) table[t * k + i] = density(theta.emission(i), y[t]);
  return table;
}

/// Normalized forward filter. Each update returns log p(y_t | y_{1:t-1}),
/// or -inf once the running likelihood is exactly zero.
class ForwardFilter {
 public:
  explicit ForwardFilter(const HmmParams& theta) : theta_(&theta), filtered_(theta.k()) {}

  double update(Observation y) {
    const std::size_t k = theta_->k();
    const auto& q = theta_->transitions();
    std::vector<double> predicted(k, 0.0);
    if (steps_ == 0) {
      std::copy(theta_->initial().begin(), theta_->initial().end(), predicted.begin());
    } else {
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) predicted[j] += filtered_[i] * q(i, j);
    }
    double c = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      filtered_[i] = predicted[i] * density(theta_->emission(i), y);
      c += filtered_[i];
    }
    ++steps_;
    if (!(c > 0.0) || dead_) {
      dead_ = true;
      return kNegInf;
    }
    for (double& f : filtered_) f /= c;
    return std::log(c);
  }

  /// P(X_t = . | Y_{1:t}) after the latest update.
  std::span<const double> filtered() const { return filtered_; }
  std::size_t steps() const { return steps_; }

 private:
  const HmmParams* theta_;
  std::vector<double> filtered_;
  std::size_t steps_ = 0;
  bool dead_ = false;
};

/// log p_n^{theta,mu}(y_{1:n}) by the scaled forward recursion.
inline double log_likelihood_forward(const HmmParams& theta, std::span<const Observation> y) {
  if (y.empty()) throw InvariantError("log_likelihood_forward needs n >= 1");
  ForwardFilter filter(theta);
  double total = 0.0;
  for (Observation v : y) {
    const double step = filter.update(v);
    if (step == kNegInf) return kNegInf;
    total += step;
  }
  return total;
}

/// p_l^theta(y_{1:l}): the block density under the stationary initial law.
inline double marginal_density(const HmmParams& theta, std::span<const Observation> y_block) {
  return std::exp(log_likelihood_forward(stationary_version(theta), y_block));
}

// ---------------------------------------------------------------------------
// Smoothing

/// P(X_j = . | Y_{1:n}) for every j, and P(X_{1:m} = a | Y_{1:n}) for every
/// block a in {0..k-1}^m (lexicographic order, first index most significant).
struct SmoothingTable {
  std::size_t n = 0;
  std::size_t k = 0;
  std::size_t block_len = 0;
  std::vector<std::vector<double>> marginals;
  std::vector<double> block_probs;

  /// Index of block a_{1:m} in block_probs.
  static std::size_t block_index(std::span<const std::size_t> block, std::size_t k) {
    std::size_t idx = 0;
    for (std::size_t a : block) idx = idx * k + a;
    return idx;
  }
};

namespace detail {

struct ForwardBackward {
  std::vector<double> alpha;  // n x k, normalized filters
  std::vector<double> beta;   // n x k, scaled backward messages
  std::vector<double> dens;   // n x k emission table
};

inline ForwardBackward forward_backward(const HmmParams& theta, std::span<const Observation> y) {
  const std::size_t n = y.size();
  const std::size_t k = theta.k();
  const auto& q = theta.transitions();
  ForwardBackward fb;
  fb.dens = emission_table(theta, y);
  fb.alpha.assign(n * k, 0.0);
  fb.beta.assign(n * k, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double c = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double pred = 0.0;
      if (t == 0) {
        pred = theta.initial()[j];
      } else {
        for (std::size_t i = 0; i < k; ++i) pred += fb.alpha[(t - 1) * k + i] * q(i, j);
      }
      fb.alpha[t * k + j] = pred * fb.dens[t * k + j];
      c += fb.alpha[t * k + j];
    }
    if (!(c > 0.0)) throw NumericalError("observation sequence has zero likelihood under theta");
    for (std::size_t j = 0; j < k; ++j) fb.alpha[t * k + j] /= c;
  }
  for (std::size_t j = 0; j < k; ++j) fb.beta[(n - 1) * k + j] = 1.0;
  for (std::size_t t = n - 1; t-- > 0;) {
    double c = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += q(i, j) * fb.dens[(t + 1) * k + j] * fb.beta[(t + 1) * k + j];
      fb.beta[t * k + i] = s;
      c += s;
    }
    for (std::size_t i = 0; i < k; ++i) fb.beta[t * k + i] /= c;
  }
  return fb;
}

inline double log_sum_exp(std::span<const double> v) {
  double top = kNegInf;
  for (double x : v) top = std::max(top, x);
  if (top == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - top);
  return top + std::log(s);
}

}  // namespace detail

/// Forward-backward smoothing under (theta, mu). Throws NumericalError when
/// p_n(y) = 0.
inline SmoothingTable smoothing_exact(const HmmParams& theta, std::span<const Observation> y,
                                      std::size_t block_len = 1) {
  const std::size_t n = y.size();
  const std::size_t k = theta.k();
  if (block_len < 1 || block_len > n) throw InvariantError("smoothing needs 1 <= m <= n");
  const auto fb = detail::forward_backward(theta, y);
  SmoothingTable table;
  table.n = n;
  table.k = k;
  table.block_len = block_len;
  table.marginals.assign(n, std::vector<double>(k));
  for (std::size_t t = 0; t < n; ++t) {
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      table.marginals[t][i] = fb.alpha[t * k + i] * fb.beta[t * k + i];
      total += table.marginals[t][i];
    }
    for (double& p : table.marginals[t]) p /= total;
  }

  // Block law: mu_{a1} f_{a1}(y1) prod Q f, times the backward message at m.
  std::size_t blocks = 1;
  for (std::size_t s = 0; s < block_len; ++s) blocks *= k;
  std::vector<double> logw(blocks);
  std::vector<std::size_t> a(block_len);
  const auto& q = theta.transitions();
  for (std::size_t b = 0; b < blocks; ++b) {
    std::size_t rest = b;
    for (std::size_t s = block_len; s-- > 0;) {
      a[s] = rest % k;
      rest /= k;
    }
    double lw = std::log(theta.initial()[a[0]]) + std::log(fb.dens[a[0]]);
    for (std::size_t s = 1; s < block_len; ++s) lw += std::log(q(a[s - 1], a[s])) + std::log(fb.dens[s * k + a[s]]);
    lw += std::log(fb.beta[(block_len - 1) * k + a[block_len - 1]]);
    logw[b] = lw;
  }
  const double norm = detail::log_sum_exp(logw);
  table.block_probs.resize(blocks);
  for (std::size_t b = 0; b < blocks; ++b) table.block_probs[b] = std::exp(logw[b] - norm);
  return table;
}

/// 2 r / (q + r) with r = (1 - q)^distance: the forgetting bound on
/// |P(X_j | Y_{1:N}) - P(X_j | Y_{1:n})| with distance = N + 1 - j.
inline double forgetting_bound(double q_floor, std::size_t distance) {
  const double r = std::pow(1.0 - q_floor, static_cast<double>(distance));
  return 2.0 * r / (q_floor + r);
}

struct WindowedSmoothing {
  std::vector<double> probs;
  double error_bound = 0.0;
};

/// P(X_j = . | Y_{1:N}) for the 0-based index `index` and window length N,
/// with the forgetting bound on its deviation from the full-data smoother.
/// The bound's exponent N + 1 - j is `window - index` in 0-based terms.
inline WindowedSmoothing smoothing_windowed(const HmmParams& theta, std::span<const Observation> y,
                                            std::size_t index, std::size_t window) {
  const double q = theta.transitions().q_floor();
  if (!(q > 0.0)) throw InvariantError("windowed smoothing bound is vacuous for q_floor = 0");
  if (index >= window || window > y.size()) throw InvariantError("windowed smoothing needs j <= N <= n");
  auto table = smoothing_exact(theta, y.first(window), 1);
  return {std::move(table.marginals[index]), forgetting_bound(q, window - index)};
}

// ---------------------------------------------------------------------------
// Simulation

struct SimulatedPath {
  std::vector<std::size_t> states;
  std::vector<Observation> observations;
};

inline SimulatedPath simulate(const HmmParams& theta, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw InvariantError("simulate needs n >= 1");
  Rng rng(seed);
  SimulatedPath out;
  out.states.reserve(n);
  out.observations.reserve(n);
  std::size_t x = rng.categorical(theta.initial());
  for (std::size_t t = 0; t < n; ++t) {
    if (t > 0) x = rng.categorical(theta.transitions().row(x));
    out.states.push_back(x);
    out.observations.push_back(sample(theta.emission(x), rng));
  }
  return out;
}

}  // namespace nphmm
