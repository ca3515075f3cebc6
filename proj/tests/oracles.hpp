#pragma once

// Brute-force reference implementations used by the tests. They share no
// code with the library beyond the parameter containers.

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "nphmm/hmm.hpp"

namespace oracle {

using nphmm::HmmParams;

inline double normal_pdf(double y, double m, double s) {
  const double u = (y - m) / s;
  return std::exp(-0.5 * u * u) / (s * std::sqrt(2.0 * std::numbers::pi));
}

inline double ref_density(const nphmm::EmissionModel& e, double y) {
  if (const auto* d = std::get_if<nphmm::DiscreteEmission>(&e)) {
    const auto probs = d->probs();
    const auto s = static_cast<std::size_t>(y);
    return s < probs.size() ? probs[s] : 0.0;
  }
  double shift = 0.0;
  const nphmm::GaussianMixtureEmission* g = std::get_if<nphmm::GaussianMixtureEmission>(&e);
  if (g == nullptr) {
    const auto& t = std::get<nphmm::TranslatedEmission>(e);
    g = &t.base;
    shift = t.shift;
  }
  double out = 0.0;
  for (const auto& a : g->atoms()) out += a.weight * normal_pdf(y - shift, a.location, a.scale);
  return out;
}

/// Calls visit(path) for every path in {0..k-1}^n, lexicographic order.
inline void for_each_path(std::size_t k, std::size_t n, const std::function<void(const std::vector<std::size_t>&)>& visit) {
  std::vector<std::size_t> x(n, 0);
  while (true) {
    visit(x);
    std::size_t t = n;
    while (t > 0) {
      --t;
      if (++x[t] < k) break;
      x[t] = 0;
      if (t == 0) return;
    }
    if (n == 0) return;
  }
}

/// mu_{x1} Q_{x1 x2} ... f_{x1}(y1) ... with an explicit initial law.
inline double path_weight(const HmmParams& theta, std::span<const double> mu, const std::vector<std::size_t>& x,
                          std::span<const double> y) {
  double w = mu[x[0]] * ref_density(theta.emission(x[0]), y[0]);
  for (std::size_t t = 1; t < x.size(); ++t)
    w *= theta.transitions()(x[t - 1], x[t]) * ref_density(theta.emission(x[t]), y[t]);
  return w;
}

inline double likelihood(const HmmParams& theta, std::span<const double> mu, std::span<const double> y) {
  double total = 0.0;
  for_each_path(theta.k(), y.size(), [&](const auto& x) { total += path_weight(theta, mu, x, y); });
  return total;
}

inline double likelihood(const HmmParams& theta, std::span<const double> y) {
  return likelihood(theta, theta.initial(), y);
}

/// Stationary law by repeated multiplication mu <- mu Q.
inline std::vector<double> stationary(const nphmm::TransitionMatrix& q) {
  const std::size_t k = q.k();
  std::vector<double> mu(k, 1.0 / static_cast<double>(k));
  for (int it = 0; it < 20000; ++it) {
    std::vector<double> next(k, 0.0);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) next[j] += mu[i] * q(i, j);
    mu = next;
  }
  return mu;
}

struct Posterior {
  std::vector<std::vector<double>> marginals;  // [t][state]
  std::vector<double> block;                   // X_{1:m}, lexicographic
  std::vector<double> paths;                   // every path, lexicographic
};

inline Posterior posterior(const HmmParams& theta, std::span<const double> y, std::size_t m) {
  const std::size_t k = theta.k();
  const std::size_t n = y.size();
  Posterior p;
  p.marginals.assign(n, std::vector<double>(k, 0.0));
  std::size_t blocks = 1;
  for (std::size_t s = 0; s < m; ++s) blocks *= k;
  p.block.assign(blocks, 0.0);
  double total = 0.0;
  for_each_path(k, n, [&](const auto& x) {
    const double w = path_weight(theta, theta.initial(), x, y);
    total += w;
    p.paths.push_back(w);
    for (std::size_t t = 0; t < n; ++t) p.marginals[t][x[t]] += w;
    std::size_t idx = 0;
    for (std::size_t s = 0; s < m; ++s) idx = idx * k + x[s];
    p.block[idx] += w;
  });
  for (auto& row : p.marginals)
    for (double& v : row) v /= total;
  for (double& v : p.block) v /= total;
  for (double& v : p.paths) v /= total;
  return p;
}

/// Every observation block in {0..S-1}^n.
inline void for_each_block(std::size_t symbols, std::size_t n, const std::function<void(const std::vector<double>&)>& visit) {
  for_each_path(symbols, n, [&](const auto& x) {
    std::vector<double> y(x.begin(), x.end());
    visit(y);
  });
}

inline std::size_t support(const HmmParams& theta) {
  std::size_t s = 0;
  for (const auto& e : theta.emissions()) s = std::max(s, std::get<nphmm::DiscreteEmission>(e).support_size());
  return s;
}

/// Stationary l-block L1 distance by enumeration.
inline double d_l(const HmmParams& a, const HmmParams& b, std::size_t l) {
  const auto mu_a = stationary(a.transitions());
  const auto mu_b = stationary(b.transitions());
  double total = 0.0;
  for_each_block(std::max(support(a), support(b)), l,
                 [&](const auto& y) { total += std::abs(likelihood(a, mu_a, y) - likelihood(b, mu_b, y)); });
  return total;
}

/// (1/n) KL(P*_n stationary, P^{theta, mu_theta}_n) by enumeration.
inline double kl_rate(const HmmParams& theta, const HmmParams& star, std::size_t n) {
  const auto mu_star = stationary(star.transitions());
  double total = 0.0;
  for_each_block(std::max(support(theta), support(star)), n, [&](const auto& y) {
    const double ps = likelihood(star, mu_star, y);
    if (ps <= 0.0) return;
    const double p = likelihood(theta, y);
    total += p > 0.0 ? ps * std::log(ps / p) : INFINITY;
  });
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Random instances

inline std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t size, double floor = 0.0) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> w(size);
  double total = 0.0;
  for (double& v : w) total += (v = e(rng));
  const double slack = 1.0 - floor * static_cast<double>(size);
  double sum = 0.0;
  for (double& v : w) sum += (v = floor + slack * v / total);
  // Push the rounding residue onto the largest entry.
  *std::max_element(w.begin(), w.end()) += 1.0 - sum;
  return w;
}

inline nphmm::TransitionMatrix random_transitions(std::mt19937_64& rng, std::size_t k, double q) {
  std::vector<double> rows;
  for (std::size_t i = 0; i < k; ++i) {
    auto r = random_simplex(rng, k, q);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return nphmm::TransitionMatrix(k, rows, q);
}

inline nphmm::EmissionModel random_discrete(std::mt19937_64& rng, std::size_t symbols) {
  return nphmm::DiscreteEmission(random_simplex(rng, symbols));
}

inline nphmm::EmissionModel random_gaussian(std::mt19937_64& rng, std::size_t atoms) {
  std::uniform_real_distribution<double> loc(-2.0, 2.0), scale(0.5, 1.5);
  const auto w = random_simplex(rng, atoms);
  std::vector<nphmm::GaussianAtom> a;
  for (std::size_t r = 0; r < atoms; ++r) a.push_back({w[r], loc(rng), scale(rng)});
  return nphmm::GaussianMixtureEmission(a);
}

inline HmmParams random_discrete_params(std::mt19937_64& rng, std::size_t k, std::size_t symbols, double q) {
  std::vector<nphmm::EmissionModel> f;
  for (std::size_t i = 0; i < k; ++i) f.push_back(random_discrete(rng, symbols));
  return HmmParams(random_transitions(rng, k, q), random_simplex(rng, k, q), f);
}

inline HmmParams random_gaussian_params(std::mt19937_64& rng, std::size_t k, double q) {
  std::vector<nphmm::EmissionModel> f;
  std::uniform_int_distribution<std::size_t> atoms(1, 3);
  for (std::size_t i = 0; i < k; ++i) f.push_back(random_gaussian(rng, atoms(rng)));
  return HmmParams(random_transitions(rng, k, q), random_simplex(rng, k, q), f);
}

}  // namespace oracle
