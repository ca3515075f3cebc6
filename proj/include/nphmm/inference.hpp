#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <span>
#include <string>
#include <vector>

#include "nphmm/emissions.hpp"
#include "nphmm/error.hpp"
#include "nphmm/hmm.hpp"
#include "nphmm/priors.hpp"
#include "nphmm/random.hpp"

namespace nphmm {

struct GibbsConfig {
  std::size_t n_iter = 4000;
  std::size_t burn_in = 2000;
  std::size_t thin = 5;
  std::uint64_t seed = 0;
  std::size_t chain_id = 0;
  TruncatedDirichletSpec transitions;  // prior on each row of Q
  DpSpec emissions;                    // prior on each f_i
  std::vector<double> initial;         // mu, held fixed

  std::size_t k() const { return transitions.k(); }

  void validate() const {
    if (burn_in >= n_iter) throw ConfigError("gibbs: burn_in must be < n_iter");
    if (thin < 1) throw ConfigError("gibbs: thin must be >= 1");
    try {
      transitions.validate();
      emissions.validate();
    } catch (const InvariantError& e) {
      throw ConfigError(std::string("gibbs prior: ") + e.what());
    }
    if (initial.size() != k()) throw ConfigError("gibbs: initial law length must equal k");
    double total = 0.0;
    for (double m : initial) {
      if (m < transitions.q_floor - kConstructionTolerance) throw ConfigError("gibbs: initial law entry below q_floor");
      total += m;
    }
    if (std::abs(total - 1.0) > kConstructionTolerance) throw ConfigError("gibbs: initial law must sum to 1");
  }

  /// Number of samples run_chain emits.
  std::size_t expected_samples() const { return (n_iter - burn_in) / thin; }
};

struct PosteriorSample {
  HmmParams params;
  std::vector<std::size_t> states;
  std::size_t iter = 0;
  std::size_t chain_id = 0;
};

/// Observations mapped onto the truncated support of a discrete base:
/// symbols at or past L become the tail symbol L when G0 has tail mass.
inline std::vector<Observation> fold_observations(std::span<const Observation> y, const DiscreteBase& base) {
  std::vector<Observation> out(y.begin(), y.end());
  const std::size_t cut = base.truncation();
  for (auto& v : out) {
    const std::size_t s = symbol_of(v);
    if (s < cut) continue;
    if (!(base.tail_mass > 0.0))
      throw DataError("observation " + std::to_string(s) + " lies outside the support of the base measure");
    v = static_cast<Observation>(cut);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Conditional updates

/// Exact draw of X_{1:n} from P(X_{1:n} | Y_{1:n}) by forward filtering,
/// backward sampling.
inline std::vector<std::size_t> ffbs_sample_states(const HmmParams& theta, std::span<const Observation> y, Rng& rng) {
  const std::size_t n = y.size();
  const std::size_t k = theta.k();
  if (n == 0) throw InvariantError("ffbs needs n >= 1");
  const auto& q = theta.transitions();
  std::vector<double> alpha(n * k);
  for (std::size_t t = 0; t < n; ++t) {
    double c = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double pred = 0.0;
      if (t == 0) {
        pred = theta.initial()[j];
      } else {
        for (std::size_t i = 0; i < k; ++i) pred += alpha[(t - 1) * k + i] * q(i, j);
      }
      alpha[t * k + j] = pred * density(theta.emission(j), y[t]);
      c += alpha[t * k + j];
    }
    if (!(c > 0.0)) throw NumericalError("ffbs: observation sequence has zero likelihood");
    for (std::size_t j = 0; j < k; ++j) alpha[t * k + j] /= c;
  }
  std::vector<std::size_t> x(n);
  x[n - 1] = rng.categorical(std::span<const double>(alpha.data() + (n - 1) * k, k));
  std::vector<double> w(k);
  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t i = 0; i < k; ++i) w[i] = alpha[t * k + i] * q(i, x[t + 1]);
    x[t] = rng.categorical(w);
  }
  return x;
}

/// k x k transition counts n_ij along a path, row-major.
inline std::vector<double> transition_counts(std::span<const std::size_t> x, std::size_t k) {
  std::vector<double> counts(k * k, 0.0);
  for (std::size_t t = 1; t < x.size(); ++t) counts[x[t - 1] * k + x[t]] += 1.0;
  return counts;
}

/// Each row from the truncated Dirichlet with concentration alpha + n_i.
inline TransitionMatrix gibbs_update_transitions(std::span<const double> counts, const TruncatedDirichletSpec& spec,
                                                 Rng& rng) {
  spec.validate();
  const std::size_t k = spec.k();
  if (counts.size() != k * k) throw InvariantError("transition counts must be k*k");
  std::vector<double> rows;
  rows.reserve(k * k);
  for (std::size_t i = 0; i < k; ++i) {
    TruncatedDirichletSpec posterior{spec.alpha, spec.q_floor};
    for (std::size_t j = 0; j < k; ++j) posterior.alpha[j] += counts[i * k + j];
    const auto draw = sample_truncated_dirichlet_row(posterior, rng);
    rows.insert(rows.end(), draw.x.begin(), draw.x.end());
  }
  return TransitionMatrix(k, std::move(rows), spec.q_floor);
}

/// Per-state symbol counts on the base's truncated support (tail symbol last).
inline std::vector<std::vector<double>> symbol_counts(std::span<const std::size_t> x, std::span<const Observation> y,
                                                      std::size_t k, std::size_t support) {
  std::vector<std::vector<double>> counts(k, std::vector<double>(support, 0.0));
  for (std::size_t t = 0; t < y.size(); ++t) {
    const std::size_t s = symbol_of(y[t]);
    if (s >= support) throw DataError("observation symbol outside the truncated support; fold observations first");
    counts[x[t]][s] += 1.0;
  }
  return counts;
}

/// f_i ~ DP(alpha G0 + sum_l counts_i(l) delta_l) via Gamma normalization.
inline std::vector<DiscreteEmission> gibbs_update_emissions_discrete(const std::vector<std::vector<double>>& counts,
                                                                     const DpSpec& spec, Rng& rng) {
  std::vector<DiscreteEmission> out;
  out.reserve(counts.size());
  for (const auto& c : counts) out.push_back(sample_dp_discrete_gamma(spec, rng, c).f);
  return out;
}

namespace detail {

inline GaussianAtom nig_posterior_draw(const NormalInverseGammaBase& base, std::span<const double> ys, Rng& rng) {
  if (ys.empty()) return base.draw(rng);
  const double n = static_cast<double>(ys.size());
  double sum = 0.0;
  for (double v : ys) sum += v;
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : ys) ss += (v - mean) * (v - mean);
  const NormalInverseGammaBase post{
      (base.kappa * base.mean + sum) / (base.kappa + n),
      base.kappa + n,
      base.shape + 0.5 * n,
      base.scale + 0.5 * ss + base.kappa * n * (mean - base.mean) * (mean - base.mean) / (2.0 * (base.kappa + n)),
  };
  return post.draw(rng);
}

}  // namespace detail

/// One block-Gibbs sweep per state over a truncated stick-breaking mixture:
/// allocations given current atoms, sticks given allocation counts, atoms
/// from their conjugate normal-inverse-gamma posteriors.
inline std::vector<GaussianMixtureEmission> gibbs_update_emissions_dpm(
    const std::vector<std::vector<double>>& assigned, const DpSpec& spec,
    const std::vector<GaussianMixtureEmission>& current, Rng& rng) {
  spec.validate();
  const auto* base = std::get_if<NormalInverseGammaBase>(&spec.base);
  if (base == nullptr) throw ConfigError("dpm update needs a conjugate normal-inverse-gamma base");
  if (assigned.size() != current.size()) throw InvariantError("dpm update: state count mismatch");
  const std::size_t depth = spec.truncation;
  std::vector<GaussianMixtureEmission> out;
  out.reserve(assigned.size());
  for (std::size_t i = 0; i < assigned.size(); ++i) {
    const auto atoms = current[i].atoms();
    if (atoms.size() != depth) throw InvariantError("dpm update: current mixture depth differs from truncation");
    std::vector<std::vector<double>> members(depth);
    std::vector<double> logw(depth), w(depth);
    for (double v : assigned[i]) {
      double top = kNegInf;
      for (std::size_t r = 0; r < depth; ++r) {
        const double u = (v - atoms[r].location) / atoms[r].scale;
        logw[r] = atoms[r].weight > 0.0 ? std::log(atoms[r].weight) - std::log(atoms[r].scale) - 0.5 * u * u : kNegInf;
        top = std::max(top, logw[r]);
      }
      for (std::size_t r = 0; r < depth; ++r) w[r] = std::exp(logw[r] - top);
      members[rng.categorical(w)].push_back(v);
    }
    std::vector<GaussianAtom> next(depth);
    std::size_t later = assigned[i].size();
    double remaining = 1.0;
    double total = 0.0;
    for (std::size_t r = 0; r < depth; ++r) {
      next[r] = detail::nig_posterior_draw(*base, members[r], rng);
      later -= members[r].size();
      if (r + 1 < depth) {
        const double v = rng.beta(1.0 + static_cast<double>(members[r].size()),
                                  spec.alpha + static_cast<double>(later));
        next[r].weight = v * remaining;
        remaining *= 1.0 - v;
        total += next[r].weight;
      } else {
        next[r].weight = std::max(0.0, 1.0 - total);
      }
    }
    out.emplace_back(std::move(next));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Chain driver

/// Draw of theta from the prior, with mu fixed to config.initial.
inline HmmParams sample_prior(const GibbsConfig& config, Rng& rng) {
  const std::size_t k = config.k();
  const std::vector<double> zero(k * k, 0.0);
  auto q = gibbs_update_transitions(zero, config.transitions, rng);
  std::vector<EmissionModel> emissions;
  for (std::size_t i = 0; i < k; ++i) {
    if (config.emissions.discrete())
      emissions.emplace_back(sample_dp_discrete_gamma(config.emissions, rng).f);
    else
      emissions.emplace_back(sample_dpm_gaussian(config.emissions, rng));
  }
  return HmmParams(std::move(q), config.initial, std::move(emissions));
}

/// theta | x, y: transitions, then emissions.
inline HmmParams gibbs_update_parameters(const HmmParams& theta, std::span<const std::size_t> x,
                                         std::span<const Observation> y, const GibbsConfig& config, Rng& rng) {
  const std::size_t k = config.k();
  auto q = gibbs_update_transitions(transition_counts(x, k), config.transitions, rng);
  std::vector<EmissionModel> emissions;
  if (const auto* base = std::get_if<DiscreteBase>(&config.emissions.base)) {
    const std::size_t support = base->truncation() + (base->tail_mass > 0.0 ? 1 : 0);
    for (auto& f : gibbs_update_emissions_discrete(symbol_counts(x, y, k, support), config.emissions, rng))
      emissions.emplace_back(std::move(f));
  } else {
    std::vector<std::vector<double>> assigned(k);
    for (std::size_t t = 0; t < y.size(); ++t) assigned[x[t]].push_back(y[t]);
    std::vector<GaussianMixtureEmission> current;
    for (std::size_t i = 0; i < k; ++i) current.push_back(std::get<GaussianMixtureEmission>(theta.emission(i)));
    for (auto& f : gibbs_update_emissions_dpm(assigned, config.emissions, current, rng))
      emissions.emplace_back(std::move(f));
  }
  return HmmParams(std::move(q), config.initial, std::move(emissions));
}

using SampleSink = std::function<void(const PosteriorSample&)>;

/// Alternates FFBS, the transition update and the emission update. Emits
/// post-burn-in iterations whose offset from burn_in is a multiple of thin
/// (counting from 1). Discrete observations must already be folded.
inline void run_chain(std::span<const Observation> y, const GibbsConfig& config, const SampleSink& sink) {
  config.validate();
  if (y.empty()) throw DataError("run_chain needs at least one observation");
  Rng rng(mix_seed(config.seed, config.chain_id));
  HmmParams theta = sample_prior(config, rng);
  for (std::size_t it = 0; it < config.n_iter; ++it) {
    std::vector<std::size_t> x;
    try {
      x = ffbs_sample_states(theta, y, rng);
      theta = gibbs_update_parameters(theta, x, y, config, rng);
    } catch (const Error& e) {
      throw NumericalError("chain " + std::to_string(config.chain_id) + " iteration " + std::to_string(it) + ": " +
                           e.what());
    }
    if (it >= config.burn_in && (it - config.burn_in + 1) % config.thin == 0)
      sink(PosteriorSample{theta, std::move(x), it, config.chain_id});
  }
}

inline std::vector<PosteriorSample> run_chain(std::span<const Observation> y, const GibbsConfig& config) {
  std::vector<PosteriorSample> out;
  out.reserve(config.n_iter > config.burn_in ? config.expected_samples() : 0);
  run_chain(y, config, [&](const PosteriorSample& s) { out.push_back(s); });
  return out;
}

/// Independent chains with chain ids 0..n_chains-1, run concurrently.
inline std::vector<std::vector<PosteriorSample>> run_chains(std::span<const Observation> y, const GibbsConfig& config,
                                                            std::size_t n_chains) {
  std::vector<std::future<std::vector<PosteriorSample>>> jobs;
  for (std::size_t c = 0; c < n_chains; ++c) {
    GibbsConfig chain = config;
    chain.chain_id = c;
    jobs.push_back(std::async(std::launch::async, [y, chain] { return run_chain(y, chain); }));
  }
  std::vector<std::vector<PosteriorSample>> out;
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

}  // namespace nphmm
