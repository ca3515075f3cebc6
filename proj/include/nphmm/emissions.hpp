#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nphmm/error.hpp"
#include "nphmm/random.hpp"

namespace nphmm {

/// Observations are carried as doubles. Discrete families require an
/// integral, non-negative value (the symbol index).
using Observation = double;

inline constexpr double kConstructionTolerance = 1e-12;
inline constexpr double kAlgorithmTolerance = 1e-10;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Probability mass function on symbols {0, ..., size-1}.
///
/// When `folded_tail` is set, the last symbol stands for the whole tail
/// {size-1, size, ...} of a truncated infinite pmf; the data layer folds
/// observations accordingly (see fold_observations). Density evaluation is
/// index-literal: symbols past the table have mass zero.
class DiscreteEmission {
 public:
  DiscreteEmission() = default;
  explicit DiscreteEmission(std::vector<double> probs, bool folded_tail = false)
      : probs_(std::move(probs)), folded_tail_(folded_tail) {
    detail::require(!probs_.empty(), "discrete emission needs at least one symbol");
    double total = 0.0;
    for (double p : probs_) {
      detail::require(p >= 0.0 && std::isfinite(p), "discrete emission has a negative mass");
      total += p;
    }
    detail::require(std::abs(total - 1.0) <= kConstructionTolerance,
                    "discrete emission masses must sum to 1");
  }

  double pmf(std::size_t symbol) const { return symbol < probs_.size() ? probs_[symbol] : 0.0; }
  std::size_t support_size() const { return probs_.size(); }
  std::span<const double> probs() const { return probs_; }
  bool folded_tail() const { return folded_tail_; }

  friend bool operator==(const DiscreteEmission&, const DiscreteEmission&) = default;

 private:
  std::vector<double> probs_;
  bool folded_tail_ = false;
};

struct GaussianAtom {
  double weight = 1.0;
  double location = 0.0;
  double scale = 1.0;

  friend bool operator==(const GaussianAtom&, const GaussianAtom&) = default;
};

/// Finite location-scale mixture of Gaussians, the density phi * P for an
/// atomic mixing measure P.
class GaussianMixtureEmission {
 public:
  GaussianMixtureEmission() = default;
  explicit GaussianMixtureEmission(std::vector<GaussianAtom> atoms) : atoms_(std::move(atoms)) {
    detail::require(!atoms_.empty(), "gaussian mixture needs at least one atom");
    double total = 0.0;
    for (const auto& a : atoms_) {
      detail::require(a.weight >= 0.0, "gaussian mixture weight must be non-negative");
      detail::require(a.scale > 0.0 && std::isfinite(a.scale), "gaussian mixture scale must be positive");
      detail::require(std::isfinite(a.location), "gaussian mixture location must be finite");
      total += a.weight;
    }
    detail::require(std::abs(total - 1.0) <= kConstructionTolerance,
                    "gaussian mixture weights must sum to 1");
  }

  std::span<const GaussianAtom> atoms() const { return atoms_; }

  double density(double y) const {
    double out = 0.0;
    for (const auto& a : atoms_) {
      const double u = (y - a.location) / a.scale;
      out += a.weight * std::exp(-0.5 * u * u) / (a.scale * std::sqrt(2.0 * std::numbers::pi));
    }
    return out;
  }

  double sample(Rng& rng) const {
    std::vector<double> w;
    w.reserve(atoms_.size());
    for (const auto& a : atoms_) w.push_back(a.weight);
    const auto& atom = atoms_[rng.categorical(w)];
    return rng.normal(atom.location, atom.scale);
  }

  friend bool operator==(const GaussianMixtureEmission&, const GaussianMixtureEmission&) = default;

 private:
  std::vector<GaussianAtom> atoms_;
};

/// f(y) = g(y - shift) for a Gaussian-mixture base density g.
struct TranslatedEmission {
  GaussianMixtureEmission base;
  double shift = 0.0;

  double density(double y) const { return base.density(y - shift); }
  double sample(Rng& rng) const { return base.sample(rng) + shift; }

  friend bool operator==(const TranslatedEmission&, const TranslatedEmission&) = default;
};

using EmissionModel = std::variant<DiscreteEmission, GaussianMixtureEmission, TranslatedEmission>;

inline bool is_discrete(const EmissionModel& e) {
  return std::holds_alternative<DiscreteEmission>(e);
}

inline std::string family_name(const EmissionModel& e) {
  switch (e.index()) {
    case 0: return "discrete";
    case 1: return "gaussian_mixture";
    default: return "translated";
  }
}

/// Symbol index of a discrete observation; rejects non-integral values.
inline std::size_t symbol_of(Observation y) {
  if (!(y >= 0.0) || std::floor(y) != y || y > 1e15)
    throw DomainError("discrete emission needs a non-negative integer observation, got " +
                      std::to_string(y));
  return static_cast<std::size_t>(y);
}

inline double density(const EmissionModel& e, Observation y) {
  if (const auto* d = std::get_if<DiscreteEmission>(&e)) return d->pmf(symbol_of(y));
  if (const auto* g = std::get_if<GaussianMixtureEmission>(&e)) return g->density(y);
  return std::get<TranslatedEmission>(e).density(y);
}

inline Observation sample(const EmissionModel& e, Rng& rng) {
  if (const auto* d = std::get_if<DiscreteEmission>(&e))
    return static_cast<Observation>(rng.categorical(d->probs()));
  if (const auto* g = std::get_if<GaussianMixtureEmission>(&e)) return g->sample(rng);
  return std::get<TranslatedEmission>(e).sample(rng);
}

/// A value with its Monte Carlo standard error (zero for exact results).
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

struct ExactMode {};
struct MonteCarloMode {
  std::size_t n_samples = 200'000;
  std::uint64_t seed = 0;
};
using DistanceMode = std::variant<ExactMode, MonteCarloMode>;

inline bool is_exact(const DistanceMode& mode) { return std::holds_alternative<ExactMode>(mode); }

/// Mean and standard error of i.i.d. terms, accumulated with Welford updates.
class MeanAccumulator {
 public:
  void add(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }
  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  Estimate estimate() const {
    return {mean_, n_ > 0 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0};
  }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// L1 distance between two emission densities w.r.t. their reference measure.
///
/// Exact mode sums over symbols and is only available for discrete pairs.
/// Monte Carlo mode draws from the proposal (f + g) / 2 and averages
/// |f - g| / ((f + g) / 2), which is bounded by 2.
inline Estimate l1_distance(const EmissionModel& f, const EmissionModel& g,
                            const DistanceMode& mode = ExactMode{}) {
  if (is_discrete(f) != is_discrete(g))
    throw DomainError("l1_distance between a discrete and a continuous emission");
  if (const auto* mc = std::get_if<MonteCarloMode>(&mode)) {
    if (mc->n_samples == 0) throw InvariantError("monte carlo l1_distance needs n_samples > 0");
    Rng rng(mc->seed);
    MeanAccumulator acc;
    for (std::size_t s = 0; s < mc->n_samples; ++s) {
      const Observation y = rng.uniform() < 0.5 ? sample(f, rng) : sample(g, rng);
      const double pf = density(f, y);
      const double pg = density(g, y);
      const double m = 0.5 * (pf + pg);
      acc.add(m > 0.0 ? std::abs(pf - pg) / m : 0.0);
    }
    return acc.estimate();
  }
  if (!is_discrete(f))
    throw DomainError("exact l1_distance requires discrete emissions; use monte carlo mode");
  const auto& a = std::get<DiscreteEmission>(f);
  const auto& b = std::get<DiscreteEmission>(g);
  const std::size_t size = std::max(a.support_size(), b.support_size());
  double total = 0.0;
  for (std::size_t s = 0; s < size; ++s) total += std::abs(a.pmf(s) - b.pmf(s));
  return {total, 0.0};
}

/// max_j ||f_j - g_j||_1, the distance d(f, g) on emission vectors. The
/// standard error reported is that of the maximizing component.
inline Estimate emission_d(std::span<const EmissionModel> f, std::span<const EmissionModel> g,
                           const DistanceMode& mode = ExactMode{}) {
  if (f.size() != g.size()) throw InvariantError("emission_d needs emission vectors of equal length");
  Estimate best{0.0, 0.0};
  for (std::size_t j = 0; j < f.size(); ++j) {
    DistanceMode component = mode;
    if (auto* mc = std::get_if<MonteCarloMode>(&component)) mc->seed = mix_seed(mc->seed, j);
    const Estimate e = l1_distance(f[j], g[j], component);
    if (j == 0 || e.value > best.value) best = e;
  }
  return best;
}

}  // namespace nphmm
