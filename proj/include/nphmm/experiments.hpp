#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "nphmm/emissions.hpp"
#include "nphmm/error.hpp"
#include "nphmm/hmm.hpp"
#include "nphmm/inference.hpp"
#include "nphmm/metrics.hpp"
#include "nphmm/priors.hpp"
#include "nphmm/random.hpp"

namespace nphmm {

/// Posterior-mass trend conventions: masses may dip by at most the slack
/// between consecutive grid points and must end at or above the floor.
inline constexpr double kTrendSlack = 0.05;
inline constexpr double kFinalMassFloor = 0.8;

enum class Tracked : std::size_t { d_l = 0, transition = 1, emission = 2, smoothing = 3 };
inline constexpr std::size_t kTrackedCount = 4;
inline constexpr std::array<const char*, kTrackedCount> kTrackedNames = {"d_l", "transition", "emission", "smoothing"};

struct NeighborhoodRadii {
  double d_l = 0.2;
  double transition = 0.15;
  double emission = 0.15;
  double smoothing = 0.15;

  double operator[](std::size_t i) const {
    const std::array<double, kTrackedCount> v{d_l, transition, emission, smoothing};
    return v[i];
  }
};

struct ExperimentConfig {
  HmmParams truth;
  std::vector<std::size_t> n_grid;
  NeighborhoodRadii epsilon{};
  GibbsConfig gibbs{};
  std::size_t replications = 5;
  std::size_t l = kDefaultBlockLength;
  /// Smoothing deviation covers the block law of X_{1:m} and the single-index
  /// marginals at these 0-based indices.
  std::size_t smoothing_block = 1;
  std::vector<std::size_t> smoothing_indices{};
  std::array<bool, kTrackedCount> track = {true, true, true, true};
  /// Exact metrics for discrete emissions; Monte Carlo (with this budget) otherwise.
  std::size_t monte_carlo_samples = 20'000;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0: hardware concurrency

  void validate() const {
    if (!(truth.transitions().q_floor() > 0.0)) throw ConfigError("experiment truth needs q_floor > 0");
    if (n_grid.empty()) throw ConfigError("experiment n_grid is empty");
    for (std::size_t g = 1; g < n_grid.size(); ++g)
      if (n_grid[g] <= n_grid[g - 1]) throw ConfigError("experiment n_grid must be strictly increasing");
    for (std::size_t m = 0; m < kTrackedCount; ++m)
      if (!(epsilon[m] > 0.0)) throw ConfigError("experiment radii must be positive");
    if (replications < 1) throw ConfigError("experiment needs at least one replication");
    if (l < 1) throw ConfigError("experiment block length must be >= 1");
    if (gibbs.k() != truth.k()) throw ConfigError("gibbs prior and truth disagree on k");
    if (track[static_cast<std::size_t>(Tracked::smoothing)]) {
      std::size_t blocks = 1;
      for (std::size_t s = 0; s < smoothing_block; ++s) blocks *= truth.k();
      if (smoothing_block < 1 || blocks > 64) throw ConfigError("smoothing block needs 1 <= m and k^m <= 64");
      for (std::size_t j : smoothing_indices)
        if (j >= n_grid.front()) throw ConfigError("smoothing index beyond the smallest n");
    }
    gibbs.validate();
  }
};

/// Per-sample metric values for one (n, replication) cell.
struct CellResult {
  std::size_t n = 0;
  std::size_t replication = 0;
  std::uint64_t seed = 0;
  std::array<std::vector<double>, kTrackedCount> values;
  std::string error;

  bool ok() const { return error.empty(); }
  std::size_t samples() const {
    for (const auto& v : values)
      if (!v.empty()) return v.size();
    return 0;
  }
};

/// Fraction of values strictly below eps.
inline double mass_below(std::span<const double> values, double eps) {
  if (values.empty()) return 0.0;
  const auto inside = std::count_if(values.begin(), values.end(), [eps](double v) { return v < eps; });
  return static_cast<double>(inside) / static_cast<double>(values.size());
}

struct TrendVerdict {
  std::string metric;
  std::vector<double> masses;  // replication mean per grid point
  bool monotone = false;
  bool final_ok = false;
  bool pass() const { return monotone && final_ok; }
};

/// Non-decreasing up to `slack`, final mass at least `floor`.
inline TrendVerdict trend_verdict(std::string metric, std::vector<double> masses, double slack = kTrendSlack,
                                  double floor = kFinalMassFloor) {
  TrendVerdict v{std::move(metric), std::move(masses), true, false};
  for (std::size_t g = 1; g < v.masses.size(); ++g)
    if (v.masses[g] < v.masses[g - 1] - slack) v.monotone = false;
  v.final_ok = !v.masses.empty() && v.masses.back() >= floor;
  return v;
}

struct ExperimentReport {
  std::vector<std::size_t> n_grid;
  NeighborhoodRadii epsilon{};
  std::array<bool, kTrackedCount> track{};
  std::vector<CellResult> cells;  // grid-major, replications inner
  std::vector<TrendVerdict> verdicts;

  bool pass() const {
    return !verdicts.empty() && std::all_of(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.pass(); });
  }

  /// Mean posterior mass over successful replications at grid point g.
  double mean_mass(std::size_t g, std::size_t metric, double eps) const {
    double total = 0.0;
    std::size_t used = 0;
    for (const auto& c : cells) {
      if (c.n != n_grid[g] || !c.ok()) continue;
      total += mass_below(c.values[metric], eps);
      ++used;
    }
    return used ? total / static_cast<double>(used) : 0.0;
  }
};

namespace detail {

template <typename Job>
void run_parallel(std::size_t count, std::size_t threads, Job&& job) {
  if (threads == 0) threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  threads = std::min(threads, count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) job(i);
  };
  if (threads <= 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

/// Max absolute deviation between two smoothing tables over the block law
/// and the requested single-index marginals.
inline double smoothing_deviation(const SmoothingTable& a, const SmoothingTable& b,
                                  std::span<const std::size_t> indices) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.block_probs.size(); ++i)
    worst = std::max(worst, std::abs(a.block_probs[i] - b.block_probs[i]));
  for (std::size_t j : indices)
    for (std::size_t s = 0; s < a.k; ++s) worst = std::max(worst, std::abs(a.marginals[j][s] - b.marginals[j][s]));
  return worst;
}

inline CellResult run_cell(const ExperimentConfig& config, std::size_t n, std::size_t replication,
                           std::uint64_t seed) {
  CellResult cell;
  cell.n = n;
  cell.replication = replication;
  cell.seed = seed;
  try {
    const HmmParams truth = stationary_version(config.truth);
    auto data = simulate(truth, n, mix_seed(seed, 0));
    std::vector<Observation> y = std::move(data.observations);
    if (const auto* base = std::get_if<DiscreteBase>(&config.gibbs.emissions.base)) y = fold_observations(y, *base);
    GibbsConfig gibbs = config.gibbs;
    gibbs.seed = mix_seed(seed, 1);
    gibbs.chain_id = 0;

    const bool discrete = truth.all_discrete() && config.gibbs.emissions.discrete();
    const DistanceMode mode =
        discrete ? DistanceMode{ExactMode{}} : DistanceMode{MonteCarloMode{config.monte_carlo_samples, mix_seed(seed, 2)}};
    const auto& track = config.track;
    const bool smooth = track[static_cast<std::size_t>(Tracked::smoothing)];
    std::optional<SmoothingTable> truth_smoothing;
    if (smooth) truth_smoothing = smoothing_exact(truth, y, config.smoothing_block);

    run_chain(y, gibbs, [&](const PosteriorSample& s) {
      if (track[0]) cell.values[0].push_back(d_l_pseudometric(s.params, truth, config.l, mode).value);
      if (track[1] || track[2] || smooth) {
        const auto aligned = align_label_switching(s.params, truth, mode);
        if (track[1]) cell.values[1].push_back(aligned.q_distance);
        if (track[2]) cell.values[2].push_back(aligned.max_emission_distance());
        if (smooth) {
          const HmmParams relabeled = stationary_version(relabel(s.params, aligned.sigma));
          const auto table = smoothing_exact(relabeled, y, config.smoothing_block);
          cell.values[3].push_back(smoothing_deviation(table, *truth_smoothing, config.smoothing_indices));
        }
      }
    });
  } catch (const Error& e) {
    cell.error = e.what();
  }
  return cell;
}

inline ExperimentReport assemble_report(const ExperimentConfig& config, std::vector<CellResult> cells) {
  ExperimentReport report;
  report.n_grid = config.n_grid;
  report.epsilon = config.epsilon;
  report.track = config.track;
  report.cells = std::move(cells);
  for (std::size_t m = 0; m < kTrackedCount; ++m) {
    if (!config.track[m]) continue;
    std::vector<double> masses;
    for (std::size_t g = 0; g < config.n_grid.size(); ++g) masses.push_back(report.mean_mass(g, m, config.epsilon[m]));
    report.verdicts.push_back(trend_verdict(kTrackedNames[m], std::move(masses)));
  }
  return report;
}

}  // namespace detail

/// For every (n, replication): simulate Y_{1:n} from the stationary truth,
/// run the Gibbs sampler, and record per-sample distances to the truth:
/// D_l, aligned ||Q - Q*||, aligned emission distance and (optionally)
/// aligned smoothing deviation. Chain failures are recorded per cell.
inline ExperimentReport consistency_experiment(const ExperimentConfig& config) {
  config.validate();
  const std::size_t reps = config.replications;
  std::vector<CellResult> cells(config.n_grid.size() * reps);
  detail::run_parallel(cells.size(), config.threads, [&](std::size_t idx) {
    const std::size_t g = idx / reps;
    const std::size_t r = idx % reps;
    cells[idx] = detail::run_cell(config, config.n_grid[g], r, mix_seed(config.seed, idx));
  });
  return detail::assemble_report(config, std::move(cells));
}

/// Smoothing-only variant: posterior mass of
/// {max |P^theta(X_{1:m} | Y) - P^theta*(X_{1:m} | Y)| < eps} per n.
inline ExperimentReport smoothing_consistency_experiment(ExperimentConfig config,
                                                         std::vector<std::size_t> j_indices, std::size_t m) {
  config.track = {false, false, false, true};
  config.smoothing_indices = std::move(j_indices);
  config.smoothing_block = m;
  return consistency_experiment(config);
}

// ---------------------------------------------------------------------------
// KL rate instance checks

struct KlLemmaConfig {
  HmmParams truth;
  double epsilon = 0.01;
  std::vector<std::size_t> n_grid{4, 5, 6, 7, 8, 9, 10};
  std::size_t n_draws = 20;
  std::uint64_t seed = 0;
  /// Concentration of the local prior around the truth used to realize the set.
  double concentration = 2e4;
  std::size_t max_attempts = 200'000;
  /// Fixed initial law for the drawn parameters; the truth's stationary law when empty.
  std::vector<double> initial{};
};

struct KlLemmaRow {
  std::size_t draw = 0;
  std::size_t n = 0;
  double exact = 0.0;
  KlRateBound bound;
};

struct KlLemmaReport {
  std::vector<KlLemmaRow> rows;
  std::size_t attempts = 0;
  std::size_t bound_violations = 0;       // exact > three-term bound
  std::size_t conclusion_violations = 0;  // exact > 3 eps / q
  bool pass() const { return bound_violations == 0 && conclusion_violations == 0; }
};

/// Draws parameters from a concentrated prior restricted to
/// {||Q - Q*|| < eps, emission KL term < eps, positive wherever f* is}, and
/// tabulates the exact KL rate against the explicit bound across n_grid.
inline KlLemmaReport kl_lemma_experiment(const KlLemmaConfig& config) {
  const HmmParams& truth = config.truth;
  const std::size_t k = truth.k();
  const double q = truth.transitions().q_floor();
  if (!(q > 0.0)) throw ConfigError("KL experiment needs q_floor > 0");
  if (!truth.all_discrete()) throw ConfigError("KL experiment needs discrete emissions");
  if (!(config.epsilon > 0.0)) throw ConfigError("KL experiment needs epsilon > 0");
  std::vector<double> mu = config.initial.empty() ? stationary_distribution(truth.transitions()) : config.initial;
  for (double& m : mu) m = std::max(m, q);
  {
    double total = 0.0;
    for (double m : mu) total += m;
    for (double& m : mu) m /= total;
  }
  Rng rng(config.seed);
  KlLemmaReport report;
  std::vector<HmmParams> draws;
  while (draws.size() < config.n_draws) {
    if (report.attempts++ >= config.max_attempts)
      throw NumericalError("KL experiment: the restricted set is empty under the prior (rejection starvation)");
    std::vector<double> rows;
    for (std::size_t i = 0; i < k; ++i) {
      TruncatedDirichletSpec row{{}, q};
      for (std::size_t j = 0; j < k; ++j) row.alpha.push_back(config.concentration * truth.transitions()(i, j));
      const auto draw = sample_truncated_dirichlet_row(row, rng);
      rows.insert(rows.end(), draw.x.begin(), draw.x.end());
    }
    std::vector<EmissionModel> f;
    for (std::size_t i = 0; i < k; ++i) {
      const auto& star = std::get<DiscreteEmission>(truth.emission(i));
      std::vector<double> alpha;
      for (double p : star.probs()) alpha.push_back(config.concentration * p);
      f.emplace_back(DiscreteEmission(rng.dirichlet(alpha), star.folded_tail()));
    }
    HmmParams theta(TransitionMatrix(k, std::move(rows), q), mu, std::move(f));
    if (max_abs_difference(theta.transitions(), truth.transitions()) >= config.epsilon) continue;
    if (!(emission_kl_term(theta.emissions(), truth.emissions()).value < config.epsilon)) continue;
    draws.push_back(std::move(theta));
  }
  const double threshold = 3.0 * config.epsilon / q;
  for (std::size_t d = 0; d < draws.size(); ++d) {
    for (std::size_t n : config.n_grid) {
      KlLemmaRow row{d, n, kl_rate_exact_discrete(draws[d], truth, n),
                     kl_rate_upper_bound(draws[d], truth, n, config.epsilon)};
      if (row.exact > row.bound.value() + kAlgorithmTolerance) ++report.bound_violations;
      if (row.exact > threshold) ++report.conclusion_violations;
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Gamma-normalization DP validation

struct MomentCheck {
  std::string name;
  double observed = 0.0;
  double expected = 0.0;
  double std_error = 0.0;
  bool pass = false;
  double z() const { return std_error > 0.0 ? (observed - expected) / std_error : 0.0; }
};

struct LdirReport {
  std::vector<MomentCheck> checks;
  bool pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
  }
};

namespace detail {

inline MomentCheck moment_check(std::string name, double observed, double expected, double se, double z) {
  MomentCheck c{std::move(name), observed, expected, se, false};
  c.pass = std::abs(observed - expected) <= z * se + 1e-15;
  return c;
}

/// Sample mean, variance and covariance checks against closed forms, with
/// standard errors from the empirical fourth moments.
inline void add_moment_checks(std::vector<MomentCheck>& out, const std::string& label,
                              const std::vector<std::vector<double>>& draws, std::span<const double> mean,
                              const std::vector<std::vector<double>>& cov, double z) {
  const std::size_t dim = mean.size();
  const double n = static_cast<double>(draws.size());
  std::vector<double> m(dim, 0.0);
  for (const auto& d : draws)
    for (std::size_t i = 0; i < dim; ++i) m[i] += d[i] / n;
  for (std::size_t i = 0; i < dim; ++i) {
    MeanAccumulator centered;
    for (const auto& d : draws) centered.add(d[i]);
    out.push_back(moment_check(label + " mean[" + std::to_string(i) + "]", m[i], mean[i], centered.estimate().std_error, z));
  }
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = i; j < dim; ++j) {
      MeanAccumulator prod;
      for (const auto& d : draws) prod.add((d[i] - m[i]) * (d[j] - m[j]));
      const auto e = prod.estimate();
      const std::string what = i == j ? " var[" + std::to_string(i) + "]"
                                      : " cov[" + std::to_string(i) + "," + std::to_string(j) + "]";
      out.push_back(moment_check(label + what, e.value * n / (n - 1.0), cov[i][j], e.std_error, z));
    }
}

}  // namespace detail

/// Draws n_draws pmfs by Gamma normalization and checks the block masses
/// of `partition` against Dirichlet(alpha G0(B_1), ..., alpha G0(B_M)) and
/// the normalizer against Gamma(alpha, 1), at |z| <= z_threshold.
/// Partition blocks index the truncated support (tail symbol = L).
inline LdirReport ldir_validation(const DpSpec& spec, std::size_t n_draws,
                                  const std::vector<std::vector<std::size_t>>& partition, double z_threshold,
                                  std::uint64_t seed) {
  spec.validate();
  const auto* base = std::get_if<DiscreteBase>(&spec.base);
  if (base == nullptr) throw ConfigError("ldir validation needs a discrete base measure");
  const bool tail = base->tail_mass > 0.0;
  const std::size_t size = base->truncation() + (tail ? 1 : 0);
  std::vector<int> seen(size, 0);
  for (const auto& block : partition)
    for (std::size_t s : block) {
      if (s >= size) throw ConfigError("partition symbol outside the truncated support");
      ++seen[s];
    }
  if (std::any_of(seen.begin(), seen.end(), [](int c) { return c != 1; }))
    throw ConfigError("partition must cover the truncated support exactly once");

  const std::size_t blocks = partition.size();
  std::vector<double> a(blocks, 0.0);
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t s : partition[b]) a[b] += spec.alpha * (s < base->truncation() ? base->probs[s] : base->tail_mass);
  const double a0 = spec.alpha;

  Rng rng(seed);
  std::vector<std::vector<double>> masses(n_draws, std::vector<double>(blocks, 0.0));
  std::vector<std::vector<double>> normalizers(n_draws, std::vector<double>(1));
  for (std::size_t d = 0; d < n_draws; ++d) {
    const auto draw = sample_dp_discrete_gamma(spec, rng);
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t s : partition[b]) masses[d][b] += draw.f.pmf(s);
    normalizers[d][0] = draw.normalizer;
  }
  std::vector<double> mean(blocks);
  std::vector<std::vector<double>> cov(blocks, std::vector<double>(blocks));
  for (std::size_t i = 0; i < blocks; ++i) {
    mean[i] = a[i] / a0;
    for (std::size_t j = 0; j < blocks; ++j)
      cov[i][j] = ((i == j ? a[i] * a0 : 0.0) - a[i] * a[j]) / (a0 * a0 * (a0 + 1.0));
  }
  LdirReport report;
  detail::add_moment_checks(report.checks, "block", masses, mean, cov, z_threshold);
  const std::vector<double> gamma_mean{a0};
  const std::vector<std::vector<double>> gamma_var{{a0}};
  detail::add_moment_checks(report.checks, "normalizer", normalizers, gamma_mean, gamma_var, z_threshold);
  return report;
}

// ---------------------------------------------------------------------------
// Translated emissions, measured through per-state mixture fits

struct TranslatedRecovery {
  std::vector<double> shift_errors;     // |(mean_j - mean_0) - (m_j - m_0)| per aligned state
  std::vector<double> base_distances;   // L1 between recentred fit and g, per state
};

inline double emission_mean(const EmissionModel& e) {
  if (const auto* g = std::get_if<GaussianMixtureEmission>(&e)) {
    double m = 0.0;
    for (const auto& a : g->atoms()) m += a.weight * a.location;
    return m;
  }
  if (const auto* t = std::get_if<TranslatedEmission>(&e)) return emission_mean(EmissionModel{t->base}) + t->shift;
  throw DomainError("emission_mean needs a continuous emission");
}

/// Aligns a per-state Gaussian-mixture fit to a translated truth and
/// measures the recovered shifts and the recentred base density.
inline TranslatedRecovery translated_recovery(const HmmParams& fit, const HmmParams& truth,
                                              const MonteCarloMode& mode) {
  const auto aligned = align_label_switching(fit, truth, mode);
  const HmmParams relabeled = relabel(fit, aligned.sigma);
  TranslatedRecovery out;
  const double base0 = emission_mean(relabeled.emission(0));
  const auto& t0 = std::get<TranslatedEmission>(truth.emission(0));
  for (std::size_t j = 0; j < truth.k(); ++j) {
    const auto& tj = std::get<TranslatedEmission>(truth.emission(j));
    const double est = emission_mean(relabeled.emission(j)) - base0;
    out.shift_errors.push_back(std::abs(est - (tj.shift - t0.shift)));
    // Recentre the fit by the true shift and compare with g.
    const auto& g = std::get<GaussianMixtureEmission>(relabeled.emission(j));
    std::vector<GaussianAtom> atoms(g.atoms().begin(), g.atoms().end());
    for (auto& a : atoms) a.location -= tj.shift;
    MonteCarloMode m = mode;
    m.seed = mix_seed(mode.seed, 1000 + j);
    out.base_distances.push_back(
        l1_distance(GaussianMixtureEmission(std::move(atoms)), EmissionModel{tj.base}, m).value);
  }
  return out;
}

}  // namespace nphmm
