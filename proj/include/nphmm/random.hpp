#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "nphmm/error.hpp"

namespace nphmm {

/// SplitMix64 finalizer, used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seeded random source. Every stochastic routine takes one of these
/// explicitly; copying an Rng forks an identical stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::mt19937_64& engine() { return engine_; }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    double u;
    do {
      u = std::generate_canonical<double, 53>(engine_);
    } while (u <= 0.0);
    return u;
  }

  double normal(double mean = 0.0, double sd = 1.0) {
    return std::normal_distribution<double>(mean, sd)(engine_);
  }

  /// Gamma(shape, 1) draw; shape 0 returns exactly 0.
  double gamma(double shape) {
    if (shape == 0.0) return 0.0;
    if (!(shape > 0.0)) throw InvariantError("gamma shape must be non-negative");
    return std::gamma_distribution<double>(shape, 1.0)(engine_);
  }

  double beta(double a, double b) {
    for (;;) {
      const double x = gamma(a);
      const double y = gamma(b);
      if (x + y > 0.0) return x / (x + y);
    }
  }

  /// Beta(1, b) by inversion; stable for tiny b.
  double beta_one(double b) { return -std::expm1(std::log(uniform()) / b); }

  std::size_t categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw NumericalError("categorical weights sum to zero");
    double u = std::generate_canonical<double, 53>(engine_) * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (u < weights[i]) return i;
      u -= weights[i];
    }
    // Rounding at the top end: return the last positive weight.
    for (std::size_t i = weights.size(); i-- > 0;)
      if (weights[i] > 0.0) return i;
    return weights.size() - 1;
  }

  /// Dirichlet draw via Gamma normalization. Zero concentrations yield
  /// exact zeros. Resamples an all-zero draw up to `budget` times.
  std::vector<double> dirichlet(std::span<const double> alpha, int budget = 100) {
    std::vector<double> out(alpha.size());
    for (int attempt = 0; attempt < budget; ++attempt) {
      double total = 0.0;
      for (std::size_t i = 0; i < alpha.size(); ++i) {
        out[i] = gamma(alpha[i]);
        total += out[i];
      }
      if (total > 0.0) {
        for (double& x : out) x /= total;
        return out;
      }
    }
    throw NumericalError("dirichlet draw underflowed to zero on every attempt");
  }

  std::uint64_t next_seed() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace nphmm
