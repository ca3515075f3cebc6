#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "nphmm/emissions.hpp"
#include "nphmm/error.hpp"
#include "nphmm/hmm.hpp"
#include "nphmm/random.hpp"

namespace nphmm {

inline constexpr double kBlockBudget = 1e7;
inline constexpr std::size_t kDefaultBlockLength = 3;

/// Max-abs entry of Q - Q'.
inline double max_abs_difference(const TransitionMatrix& a, const TransitionMatrix& b) {
  if (a.k() != b.k()) throw InvariantError("transition matrices differ in size");
  double out = 0.0;
  for (std::size_t i = 0; i < a.entries().size(); ++i) out = std::max(out, std::abs(a.entries()[i] - b.entries()[i]));
  return out;
}

inline double l1_norm_difference(std::span<const double> a, std::span<const double> b) {
  double out = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) out += std::abs(a[i] - b[i]);
  return out;
}

/// Largest support among the discrete emissions of both parameters.
inline std::size_t common_support(const HmmParams& a, const HmmParams& b) {
  std::size_t size = 0;
  for (const auto* theta : {&a, &b})
    for (const auto& e : theta->emissions()) {
      const auto* d = std::get_if<DiscreteEmission>(&e);
      if (d == nullptr) throw DomainError("exact block enumeration requires discrete emissions");
      size = std::max(size, d->support_size());
    }
  return size;
}

namespace detail {

/// Visits every observation block in {0..S-1}^l with its density under two
/// parameters (each with its own initial law). Densities are propagated
/// unnormalized along a depth-first walk, O(S^l k^2).
template <typename Visitor>
void for_each_block(const HmmParams& a, const HmmParams& b, std::size_t l, Visitor&& visit) {
  if (a.k() != b.k()) throw InvariantError("parameters differ in k");
  const std::size_t support = common_support(a, b);
  if (std::pow(static_cast<double>(support), static_cast<double>(l)) > kBlockBudget)
    throw BudgetError("exact enumeration over " + std::to_string(support) + "^" + std::to_string(l) +
                      " blocks exceeds the 1e7 budget");
  const std::size_t k = a.k();
  std::vector<std::vector<double>> fa(support, std::vector<double>(k)), fb = fa;
  for (std::size_t s = 0; s < support; ++s)
    for (std::size_t i = 0; i < k; ++i) {
      fa[s][i] = std::get<DiscreteEmission>(a.emission(i)).pmf(s);
      fb[s][i] = std::get<DiscreteEmission>(b.emission(i)).pmf(s);
    }
  std::vector<std::vector<double>> stack_a(l + 1, std::vector<double>(k)), stack_b = stack_a;
  std::vector<Observation> block(l);
  auto step = [k](const TransitionMatrix& q, std::span<const double> prev, std::span<const double> f, bool first,
                  std::span<const double> init, std::vector<double>& out) {
    for (std::size_t j = 0; j < k; ++j) {
      double pred = 0.0;
      if (first) {
        pred = init[j];
      } else {
        for (std::size_t i = 0; i < k; ++i) pred += prev[i] * q(i, j);
      }
      out[j] = pred * f[j];
    }
  };
  auto recurse = [&](auto&& self, std::size_t depth) -> void {
    if (depth == l) {
      const double pa = std::accumulate(stack_a[l].begin(), stack_a[l].end(), 0.0);
      const double pb = std::accumulate(stack_b[l].begin(), stack_b[l].end(), 0.0);
      visit(std::span<const Observation>(block), pa, pb);
      return;
    }
    for (std::size_t s = 0; s < support; ++s) {
      block[depth] = static_cast<Observation>(s);
      step(a.transitions(), stack_a[depth], fa[s], depth == 0, a.initial(), stack_a[depth + 1]);
      step(b.transitions(), stack_b[depth], fb[s], depth == 0, b.initial(), stack_b[depth + 1]);
      self(self, depth + 1);
    }
  };
  recurse(recurse, 0);
}

/// Block of l observations from the HMM (theta, theta.initial).
inline std::vector<Observation> sample_block(const HmmParams& theta, std::size_t l, Rng& rng) {
  std::vector<Observation> y(l);
  std::size_t x = rng.categorical(theta.initial());
  for (std::size_t t = 0; t < l; ++t) {
    if (t > 0) x = rng.categorical(theta.transitions().row(x));
    y[t] = sample(theta.emission(x), rng);
  }
  return y;
}

}  // namespace detail

/// D_l(theta, theta*) = || p_l^theta - p_l^theta* ||_1, both under their
/// stationary initial laws. Monte Carlo mode samples the equal mixture of
/// the two block laws and averages |p - p*| / ((p + p*) / 2).
inline Estimate d_l_pseudometric(const HmmParams& theta, const HmmParams& theta_star, std::size_t l,
                                 const DistanceMode& mode = ExactMode{}) {
  if (l < 1) throw InvariantError("D_l needs l >= 1");
  const HmmParams a = stationary_version(theta);
  const HmmParams b = stationary_version(theta_star);
  if (const auto* mc = std::get_if<MonteCarloMode>(&mode)) {
    if (mc->n_samples == 0) throw InvariantError("monte carlo D_l needs n_samples > 0");
    Rng rng(mc->seed);
    MeanAccumulator acc;
    for (std::size_t s = 0; s < mc->n_samples; ++s) {
      const auto y = detail::sample_block(rng.uniform() < 0.5 ? a : b, l, rng);
      const double pa = std::exp(log_likelihood_forward(a, y));
      const double pb = std::exp(log_likelihood_forward(b, y));
      const double m = 0.5 * (pa + pb);
      acc.add(m > 0.0 ? std::abs(pa - pb) / m : 0.0);
    }
    return acc.estimate();
  }
  if (!a.all_discrete() || !b.all_discrete())
    throw DomainError("exact D_l requires discrete emissions; use monte carlo mode");
  double total = 0.0;
  detail::for_each_block(a, b, l, [&](std::span<const Observation>, double pa, double pb) { total += std::abs(pa - pb); });
  return {total, 0.0};
}

// ---------------------------------------------------------------------------
// Label switching

/// theta relabeled by sigma: Q'_ij = Q_{sigma(i) sigma(j)}, f'_i = f_{sigma(i)},
/// mu'_i = mu_{sigma(i)}.
inline HmmParams relabel(const HmmParams& theta, std::span<const std::size_t> sigma) {
  const std::size_t k = theta.k();
  if (sigma.size() != k) throw InvariantError("relabel: permutation length must equal k");
  std::vector<double> rows(k * k);
  std::vector<double> mu(k);
  std::vector<EmissionModel> f;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) rows[i * k + j] = theta.transitions()(sigma[i], sigma[j]);
    mu[i] = theta.initial()[sigma[i]];
    f.push_back(theta.emission(sigma[i]));
  }
  return HmmParams(TransitionMatrix(k, std::move(rows), theta.transitions().q_floor()), std::move(mu), std::move(f));
}

struct AlignmentResult {
  std::vector<std::size_t> sigma;
  double q_distance = 0.0;
  std::vector<double> emission_distances;

  double max_emission_distance() const {
    return emission_distances.empty() ? 0.0 : *std::max_element(emission_distances.begin(), emission_distances.end());
  }
  double score() const { return q_distance + max_emission_distance(); }
};

inline constexpr std::size_t kMaxAlignmentStates = 8;

/// Exhaustive search over S_k for the sigma minimizing
/// ||sigma Q - Q*|| + max_i L1(f_sigma(i), f*_i). Ties go to the
/// lexicographically smallest sigma.
inline AlignmentResult align_label_switching(const HmmParams& theta, const HmmParams& theta_star,
                                             const DistanceMode& mode = ExactMode{}) {
  const std::size_t k = theta.k();
  if (theta_star.k() != k) throw InvariantError("alignment needs equal k");
  if (k > kMaxAlignmentStates) throw BudgetError("alignment over S_k is limited to k <= 8");
  std::vector<std::vector<double>> dist(k, std::vector<double>(k));
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) {
      DistanceMode pair = mode;
      if (auto* mc = std::get_if<MonteCarloMode>(&pair)) mc->seed = mix_seed(mc->seed, a * k + b);
      dist[a][b] = l1_distance(theta.emission(a), theta_star.emission(b), pair).value;
    }
  std::vector<std::size_t> sigma(k);
  std::iota(sigma.begin(), sigma.end(), 0);
  AlignmentResult best;
  double best_score = std::numeric_limits<double>::infinity();
  const auto& q = theta.transitions();
  const auto& qs = theta_star.transitions();
  do {
    double qd = 0.0;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) qd = std::max(qd, std::abs(q(sigma[i], sigma[j]) - qs(i, j)));
    double ed = 0.0;
    for (std::size_t i = 0; i < k; ++i) ed = std::max(ed, dist[sigma[i]][i]);
    if (qd + ed < best_score) {
      best_score = qd + ed;
      best.sigma = sigma;
      best.q_distance = qd;
      best.emission_distances.resize(k);
      for (std::size_t i = 0; i < k; ++i) best.emission_distances[i] = dist[sigma[i]][i];
    }
  } while (std::next_permutation(sigma.begin(), sigma.end()));
  return best;
}

// ---------------------------------------------------------------------------
// Kullback-Leibler rate

/// Terms of the explicit bound on (1/n) KL(P*_n, P^{theta,mu}_n):
///   (1/(n q)) max_i |mu_i - mu*_i| + ((n-1)/(n q)) max_ij |Q_ij - Q*_ij|
///   + max_i int f*_i max_j log(f*_j / f_j).
/// mu* is the stationary law of Q*.
struct KlRateBound {
  double initial_term = 0.0;
  double transition_term = 0.0;
  double emission_term = 0.0;
  double emission_std_error = 0.0;
  std::optional<double> conclusion;  // 3 eps / q when an eps is supplied

  double value() const { return initial_term + transition_term + emission_term; }
};

/// max_i int f*_i(y) max_j log(f*_j(y) / f_j(y)) dy. Components with
/// f*_j(y) = 0 drop out of the inner max; f_j(y) = 0 < f*_j(y) gives +inf.
inline Estimate emission_kl_term(std::span<const EmissionModel> f, std::span<const EmissionModel> f_star,
                                 const DistanceMode& mode = ExactMode{}) {
  const std::size_t k = f.size();
  if (f_star.size() != k) throw InvariantError("emission KL term: length mismatch");
  auto inner = [&](Observation y) {
    double best = kNegInf;
    for (std::size_t j = 0; j < k; ++j) {
      const double ps = density(f_star[j], y);
      if (!(ps > 0.0)) continue;
      const double p = density(f[j], y);
      if (!(p > 0.0)) return std::numeric_limits<double>::infinity();
      best = std::max(best, std::log(ps / p));
    }
    return best;
  };
  Estimate worst{kNegInf, 0.0};
  for (std::size_t i = 0; i < k; ++i) {
    Estimate term;
    if (const auto* mc = std::get_if<MonteCarloMode>(&mode)) {
      Rng rng(mix_seed(mc->seed, i));
      MeanAccumulator acc;
      for (std::size_t s = 0; s < mc->n_samples; ++s) acc.add(inner(sample(f_star[i], rng)));
      term = acc.estimate();
    } else {
      const auto* fs = std::get_if<DiscreteEmission>(&f_star[i]);
      if (fs == nullptr) throw DomainError("exact emission KL term requires discrete emissions");
      double total = 0.0;
      for (std::size_t s = 0; s < fs->support_size(); ++s) {
        const double w = fs->pmf(s);
        if (!(w > 0.0)) continue;
        const double v = inner(static_cast<Observation>(s));
        if (v == std::numeric_limits<double>::infinity()) return {v, 0.0};
        total += w * v;
      }
      term = {total, 0.0};
    }
    if (term.value > worst.value) worst = term;
  }
  return worst;
}

inline KlRateBound kl_rate_upper_bound(const HmmParams& theta, const HmmParams& theta_star, std::size_t n,
                                       std::optional<double> epsilon = std::nullopt,
                                       const DistanceMode& mode = ExactMode{}) {
  if (n < 1) throw InvariantError("KL rate bound needs n >= 1");
  if (theta.k() != theta_star.k()) throw InvariantError("KL rate bound needs equal k");
  const double q = theta.transitions().q_floor();
  if (!(q > 0.0) || theta_star.transitions().q_floor() != q)
    throw InvariantError("KL rate bound needs both parameters in the same Theta(q) with q > 0");
  const auto mu_star = stationary_distribution(theta_star.transitions());
  double mu_gap = 0.0;
  for (std::size_t i = 0; i < theta.k(); ++i) mu_gap = std::max(mu_gap, std::abs(theta.initial()[i] - mu_star[i]));
  const double nn = static_cast<double>(n);
  KlRateBound out;
  out.initial_term = mu_gap / (nn * q);
  out.transition_term = (nn - 1.0) / (nn * q) * max_abs_difference(theta.transitions(), theta_star.transitions());
  const auto e = emission_kl_term(theta.emissions(), theta_star.emissions(), mode);
  out.emission_term = e.value;
  out.emission_std_error = e.std_error;
  if (epsilon) out.conclusion = 3.0 * *epsilon / q;
  return out;
}

/// (1/n) KL(P*_n, P^{theta,mu}_n) by summation over every block in
/// {0..S-1}^n; P*_n is stationary, P^{theta,mu} uses theta's own mu.
inline double kl_rate_exact_discrete(const HmmParams& theta, const HmmParams& theta_star, std::size_t n) {
  if (n < 1) throw InvariantError("KL rate needs n >= 1");
  const HmmParams star = stationary_version(theta_star);
  double total = 0.0;
  bool infinite = false;
  detail::for_each_block(star, theta, n, [&](std::span<const Observation>, double ps, double p) {
    if (!(ps > 0.0)) return;
    if (!(p > 0.0)) {
      infinite = true;
      return;
    }
    total += ps * std::log(ps / p);
  });
  if (infinite) return std::numeric_limits<double>::infinity();
  return std::max(0.0, total) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Weak-topology test functions

/// Bounded continuous test functions of one block coordinate.
///   const            h = 1
///   indicator:c:s    h = 1{y_c = s}            (discrete)
///   interval:c:a:b   h = 1{a <= y_c <= b}      (discrete)
///   sigmoid:c:t:s    h = 1 / (1 + exp(-(y_c - t) / s))
///   bump:c:t:w       h = exp(1 - 1 / (1 - u^2)) for |u| < 1, u = (y_c - t) / w
///   cos:c:w          h = cos(w y_c)
struct TestFunction {
  enum class Kind { constant, indicator, interval, sigmoid, bump, cosine };
  Kind kind = Kind::constant;
  std::size_t coord = 0;
  double a = 0.0;
  double b = 0.0;

  bool discrete_only() const { return kind == Kind::indicator || kind == Kind::interval; }

  double operator()(std::span<const Observation> y) const {
    if (kind == Kind::constant) return 1.0;
    const double v = y[coord];
    switch (kind) {
      case Kind::indicator: return v == a ? 1.0 : 0.0;
      case Kind::interval: return (v >= a && v <= b) ? 1.0 : 0.0;
      case Kind::sigmoid: return 1.0 / (1.0 + std::exp(-(v - a) / b));
      case Kind::bump: {
        const double u = (v - a) / b;
        return std::abs(u) < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - u * u)) : 0.0;
      }
      case Kind::cosine: return std::cos(a * v);
      default: return 1.0;
    }
  }

  /// sup |h| over the whole space.
  double sup_norm() const { return 1.0; }
};

inline TestFunction parse_test_function(const std::string& id) {
  std::vector<std::string> parts;
  std::stringstream ss(id);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  auto number = [&](std::size_t i) {
    try {
      return std::stod(parts.at(i));
    } catch (const std::exception&) {
      throw InvariantError("malformed test function id: " + id);
    }
  };
  auto coord = [&] { return static_cast<std::size_t>(number(1)); };
  TestFunction h;
  if (parts.empty()) throw InvariantError("unknown test function id: " + id);
  const auto& name = parts[0];
  if (name == "const" && parts.size() == 1) return h;
  if (name == "indicator" && parts.size() == 3) return {TestFunction::Kind::indicator, coord(), number(2), 0.0};
  if (name == "interval" && parts.size() == 4) return {TestFunction::Kind::interval, coord(), number(2), number(3)};
  if (name == "sigmoid" && parts.size() == 4) {
    h = {TestFunction::Kind::sigmoid, coord(), number(2), number(3)};
    if (!(h.b > 0.0)) throw InvariantError("sigmoid scale must be positive");
    return h;
  }
  if (name == "bump" && parts.size() == 4) {
    h = {TestFunction::Kind::bump, coord(), number(2), number(3)};
    if (!(h.b > 0.0)) throw InvariantError("bump width must be positive");
    return h;
  }
  if (name == "cos" && parts.size() == 3) return {TestFunction::Kind::cosine, coord(), number(2), 0.0};
  throw InvariantError("unknown test function id: " + id);
}

/// |int h dP_l^theta - int h dP_l^theta*| under stationary initial laws.
inline Estimate weak_functional_gap(const HmmParams& theta, const HmmParams& theta_star, std::size_t l,
                                    const std::string& h_id, const DistanceMode& mode = ExactMode{}) {
  const TestFunction h = parse_test_function(h_id);
  if (l < 1) throw InvariantError("weak functional needs l >= 1");
  if (h.kind != TestFunction::Kind::constant && h.coord >= l)
    throw InvariantError("test function coordinate outside the block");
  if (h.kind == TestFunction::Kind::constant) return {0.0, 0.0};
  if (h.discrete_only() && !(theta.all_discrete() && theta_star.all_discrete()))
    throw DomainError("indicator test functions apply to discrete emissions only");
  const HmmParams a = stationary_version(theta);
  const HmmParams b = stationary_version(theta_star);
  if (const auto* mc = std::get_if<MonteCarloMode>(&mode)) {
    if (mc->n_samples == 0) throw InvariantError("monte carlo weak functional needs n_samples > 0");
    Rng rng(mc->seed);
    MeanAccumulator acc;
    for (std::size_t s = 0; s < mc->n_samples; ++s) {
      const auto y = detail::sample_block(rng.uniform() < 0.5 ? a : b, l, rng);
      const double pa = std::exp(log_likelihood_forward(a, y));
      const double pb = std::exp(log_likelihood_forward(b, y));
      const double m = 0.5 * (pa + pb);
      acc.add(m > 0.0 ? h(y) * (pa - pb) / m : 0.0);
    }
    const auto e = acc.estimate();
    return {std::abs(e.value), e.std_error};
  }
  if (!a.all_discrete() || !b.all_discrete())
    throw DomainError("exact weak functional requires discrete emissions; use monte carlo mode");
  double total = 0.0;
  detail::for_each_block(a, b, l, [&](std::span<const Observation> y, double pa, double pb) { total += h(y) * (pa - pb); });
  return {std::abs(total), 0.0};
}

}  // namespace nphmm
