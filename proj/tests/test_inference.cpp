#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "geweke.hpp"
#include "nphmm/inference.hpp"
#include "oracles.hpp"

using namespace nphmm;

namespace {

GibbsConfig golden_gibbs() {
  GibbsConfig g;
  g.transitions = {{1.0, 1.0}, 0.15};
  g.emissions = DpSpec{1.0, DiscreteBase{{0.5, 0.5}, 0.0}};
  g.initial = {0.5, 0.5};
  return g;
}

HmmParams row_uniform_example() {
  return HmmParams(TransitionMatrix(2, {0.5, 0.5, 0.5, 0.5}, 0.0), {0.5, 0.5},
                   {DiscreteEmission({0.9, 0.1}), DiscreteEmission({0.2, 0.8})});
}

}  // namespace

TEST(Ffbs, SingleObservationBayesRule) {
  Rng rng(1);
  const std::vector<double> y{0};
  const int n = 100000;
  int zero = 0;
  for (int i = 0; i < n; ++i) zero += ffbs_sample_states(row_uniform_example(), y, rng)[0] == 0;
  const double p = 9.0 / 11.0;
  EXPECT_NEAR(zero / static_cast<double>(n), p, 3 * std::sqrt(p * (1 - p) / n));
}

TEST(Ffbs, PathFrequenciesMatchEnumeration) {
  std::mt19937_64 eng(2);
  const auto theta = oracle::random_discrete_params(eng, 2, 3, 0.1);
  const std::vector<double> y{0, 2, 1};
  const auto ref = oracle::posterior(theta, y, 1);
  Rng rng(3);
  const int n = 100000;
  std::vector<double> freq(8, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto x = ffbs_sample_states(theta, y, rng);
    freq[x[0] * 4 + x[1] * 2 + x[2]] += 1.0 / n;
  }
  for (int p = 0; p < 8; ++p) EXPECT_NEAR(freq[p], ref.paths[p], 3 * std::sqrt(ref.paths[p] * (1 - ref.paths[p]) / n));
}

TEST(Ffbs, IdenticalEmissionsFollowPrior) {
  const HmmParams theta(TransitionMatrix(2, {0.7, 0.3, 0.4, 0.6}, 0.15), {0.2, 0.8},
                        {DiscreteEmission({0.5, 0.5}), DiscreteEmission({0.5, 0.5})});
  const std::vector<double> y{1, 0, 1};
  Rng rng(4);
  const int n = 100000;
  double zero_at_2 = 0.0;
  for (int i = 0; i < n; ++i) zero_at_2 += ffbs_sample_states(theta, y, rng)[1] == 0;
  const double p = 0.2 * 0.7 + 0.8 * 0.4;
  EXPECT_NEAR(zero_at_2 / n, p, 3 * std::sqrt(p * (1 - p) / n));
}

TEST(Ffbs, MarginalsMatchExactSmoothing) {
  std::mt19937_64 eng(5);
  for (int rep = 0; rep < 4; ++rep) {
    const std::size_t k = 2 + rep % 2;
    const auto theta = oracle::random_discrete_params(eng, k, 3, 0.05);
    const auto y = simulate(theta, 10, rep).observations;
    const auto table = smoothing_exact(theta, y, 1);
    Rng rng(10 + rep);
    const int n = 40000;
    std::vector<std::vector<double>> freq(10, std::vector<double>(k, 0.0));
    for (int i = 0; i < n; ++i) {
      const auto x = ffbs_sample_states(theta, y, rng);
      for (std::size_t t = 0; t < 10; ++t) freq[t][x[t]] += 1.0 / n;
    }
    for (std::size_t t = 0; t < 10; ++t)
      for (std::size_t i = 0; i < k; ++i) {
        const double p = table.marginals[t][i];
        EXPECT_NEAR(freq[t][i], p, 3.5 * std::sqrt(p * (1 - p) / n) + 1e-12);
      }
  }
}

TEST(Ffbs, RejectsZeroLikelihood) {
  const HmmParams theta(TransitionMatrix(2, {0.5, 0.5, 0.5, 0.5}, 0.0), {0.5, 0.5},
                        {DiscreteEmission({1.0, 0.0}), DiscreteEmission({1.0, 0.0})});
  Rng rng(1);
  EXPECT_THROW(ffbs_sample_states(theta, std::vector<double>{1.0}, rng), NumericalError);
}

TEST(TransitionUpdate, ZeroCountsMatchPriorMean) {
  Rng rng(6);
  const TruncatedDirichletSpec spec{{2.0, 1.0, 1.0}, 0.0};
  const std::vector<double> zero(9, 0.0);
  MeanAccumulator acc;
  for (int i = 0; i < 50000; ++i) acc.add(gibbs_update_transitions(zero, spec, rng)(1, 0));
  EXPECT_NEAR(acc.mean(), 0.5, 3 * acc.estimate().std_error);
}

TEST(TransitionUpdate, HugeCountsPushToFloor) {
  Rng rng(7);
  const TruncatedDirichletSpec spec{{1.0, 1.0}, 0.1};
  const std::vector<double> counts{1e6, 0.0, 0.0, 0.0};
  MeanAccumulator acc;
  for (int i = 0; i < 1000; ++i) acc.add(gibbs_update_transitions(counts, spec, rng)(0, 0));
  EXPECT_GE(acc.mean(), 0.88);
  EXPECT_LE(acc.mean(), 0.9);
}

TEST(TransitionUpdate, NoFloorIsDirichletPosterior) {
  Rng rng(8);
  const TruncatedDirichletSpec spec{{1.0, 2.0}, 0.0};
  const std::vector<double> counts{3.0, 5.0, 0.0, 1.0};
  MeanAccumulator acc;
  for (int i = 0; i < 50000; ++i) acc.add(gibbs_update_transitions(counts, spec, rng)(0, 0));
  EXPECT_NEAR(acc.mean(), 4.0 / 11.0, 3 * acc.estimate().std_error);
}

TEST(EmissionUpdate, DiscreteCases) {
  const DpSpec spec{1.0, DiscreteBase{{0.25, 0.25, 0.25, 0.25}, 0.0}};
  Rng rng(9);
  MeanAccumulator prior, heavy;
  for (int i = 0; i < 20000; ++i) {
    prior.add(gibbs_update_emissions_discrete({{0, 0, 0, 0}}, spec, rng)[0].pmf(2));
    heavy.add(gibbs_update_emissions_discrete({{0, 0, 1e4, 0}}, spec, rng)[0].pmf(2));
  }
  EXPECT_NEAR(prior.mean(), 0.25, 3 * prior.estimate().std_error);
  EXPECT_GE(heavy.mean(), 0.99);
}

TEST(EmissionUpdate, FoldObservations) {
  const DiscreteBase with_tail{{0.3, 0.3}, 0.4};
  EXPECT_EQ(fold_observations(std::vector<double>{0, 1, 2, 7}, with_tail), (std::vector<double>{0, 1, 2, 2}));
  EXPECT_THROW(fold_observations(std::vector<double>{0, 2}, DiscreteBase{{0.5, 0.5}, 0.0}), DataError);
}

TEST(EmissionUpdate, DpmEmptyStateIsPriorDraw) {
  DpSpec spec{1.0, NormalInverseGammaBase{0.0, 1.0, 3.0, 2.0}, 5};
  Rng rng(10);
  const auto current = sample_dpm_gaussian(spec, rng);
  MeanAccumulator w0;
  for (int i = 0; i < 40000; ++i) w0.add(gibbs_update_emissions_dpm({{}}, spec, {current}, rng)[0].atoms()[0].weight);
  EXPECT_NEAR(w0.mean(), 0.5, 3 * w0.estimate().std_error);
}

TEST(EmissionUpdate, DpmConcentratesOnRepeatedValue) {
  // Tight prior on sigma: sigma^2 ~ InvGamma(50, 0.5), mean about 0.01.
  DpSpec spec{1.0, NormalInverseGammaBase{0.0, 0.01, 50.0, 0.5}, 10};
  Rng rng(11);
  auto current = std::vector<GaussianMixtureEmission>{sample_dpm_gaussian(spec, rng)};
  const std::vector<std::vector<double>> assigned{std::vector<double>(1000, 3.0)};
  for (int sweep = 0; sweep < 20; ++sweep) current = gibbs_update_emissions_dpm(assigned, spec, current, rng);
  double mean = 0.0;
  for (const auto& a : current[0].atoms()) mean += a.weight * a.location;
  EXPECT_NEAR(mean, 3.0, 0.05);
}

TEST(EmissionUpdate, DpmSingleAtomIsConjugateUpdate) {
  const NormalInverseGammaBase base{1.0, 2.0, 3.0, 4.0};
  DpSpec spec{1.0, base, 1};
  const std::vector<double> ys{0.5, 1.5, 2.5, 3.0};
  // Posterior: kappa_n = 6, mean_n = (2*1 + 7.5)/6, shape 5, scale 4 + ss/2 + kappa n (ybar - m)^2 / (2 kappa_n).
  const double ybar = 7.5 / 4;
  double ss = 0.0;
  for (double v : ys) ss += (v - ybar) * (v - ybar);
  const double mean_n = 9.5 / 6.0;
  const double scale_n = 4.0 + 0.5 * ss + 2.0 * 4.0 * (ybar - 1.0) * (ybar - 1.0) / 12.0;
  Rng rng(12);
  MeanAccumulator loc, var;
  for (int i = 0; i < 100000; ++i) {
    const auto a = gibbs_update_emissions_dpm({ys}, spec, {GaussianMixtureEmission({{1.0, 0.0, 1.0}})}, rng)[0].atoms()[0];
    ASSERT_EQ(a.weight, 1.0);
    loc.add(a.location);
    var.add(a.scale * a.scale);
  }
  EXPECT_NEAR(loc.mean(), mean_n, 3 * loc.estimate().std_error);
  EXPECT_NEAR(var.mean(), scale_n / (5.0 - 1.0), 3 * var.estimate().std_error);
}

TEST(EmissionUpdate, DpmRejectsDiscreteBase) {
  Rng rng(1);
  EXPECT_THROW(gibbs_update_emissions_dpm({{}}, DpSpec{1.0, DiscreteBase{{1.0}, 0.0}}, {GaussianMixtureEmission({{1.0, 0.0, 1.0}})}, rng),
               ConfigError);
}

TEST(RunChain, SampleCountAndDeterminism) {
  auto config = golden_gibbs();
  config.n_iter = 11;
  config.burn_in = 10;
  config.thin = 1;
  const std::vector<double> y{0, 1, 1, 0, 0};
  EXPECT_EQ(run_chain(y, config).size(), 1u);
  config.n_iter = 300;
  config.burn_in = 100;
  config.thin = 7;
  const auto a = run_chain(y, config);
  const auto b = run_chain(y, config);
  ASSERT_EQ(a.size(), config.expected_samples());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].params, b[i].params);
    EXPECT_EQ(a[i].states, b[i].states);
    EXPECT_EQ(a[i].iter, b[i].iter);
  }
}

TEST(RunChain, SamplesSatisfyInvariants) {
  auto config = golden_gibbs();
  config.n_iter = 400;
  config.burn_in = 200;
  config.thin = 1;
  const auto y = simulate(HmmParams(TransitionMatrix(2, {0.7, 0.3, 0.4, 0.6}, 0.15), {0.5, 0.5},
                                    {DiscreteEmission({0.9, 0.1}), DiscreteEmission({0.2, 0.8})}),
                          200, 5)
                     .observations;
  for (const auto& s : run_chain(y, config)) {
    for (double q : s.params.transitions().entries()) ASSERT_GE(q, 0.15);
    ASSERT_EQ(s.states.size(), y.size());
  }
}

TEST(RunChain, ConfigErrors) {
  auto config = golden_gibbs();
  config.burn_in = config.n_iter;
  EXPECT_THROW(config.validate(), ConfigError);
  config = golden_gibbs();
  config.thin = 0;
  EXPECT_THROW(config.validate(), ConfigError);
  config = golden_gibbs();
  config.initial = {0.9, 0.1};
  EXPECT_THROW(config.validate(), ConfigError);
  EXPECT_THROW(run_chain(std::vector<double>{}, golden_gibbs()), DataError);
}

TEST(RunChain, ChainsDifferById) {
  auto config = golden_gibbs();
  config.n_iter = 60;
  config.burn_in = 50;
  config.thin = 5;
  const auto chains = run_chains(std::vector<double>{0, 1, 0, 0, 1}, config, 2);
  ASSERT_EQ(chains.size(), 2u);
  EXPECT_EQ(chains[1][0].chain_id, 1u);
  EXPECT_NE(chains[0][0].params, chains[1][0].params);
}

TEST(RunChain, GaussianMixtureChainRuns) {
  GibbsConfig config;
  config.transitions = {{1.0, 1.0}, 0.1};
  config.emissions = DpSpec{1.0, NormalInverseGammaBase{0.0, 0.1, 2.0, 1.0}, 8};
  config.initial = {0.5, 0.5};
  config.n_iter = 200;
  config.burn_in = 100;
  config.thin = 10;
  const HmmParams truth(TransitionMatrix(2, {0.8, 0.2, 0.2, 0.8}, 0.1), {0.5, 0.5},
                        {GaussianMixtureEmission({{1.0, -2.0, 1.0}}), GaussianMixtureEmission({{1.0, 2.0, 1.0}})});
  const auto y = simulate(truth, 300, 3).observations;
  const auto samples = run_chain(y, config);
  ASSERT_EQ(samples.size(), 10u);
  for (const auto& s : samples) EXPECT_FALSE(s.params.all_discrete());
}

TEST(Geweke, DiscreteModelSuccessiveConditional) {
  const auto stats = geweke::run(golden_gibbs(), 5, 100000, 100000, 17);
  for (const auto& s : stats) EXPECT_LT(std::abs(s.z()), 3.0) << s.name;
}

TEST(GridPosterior, GibbsMatchesNumericalIntegration) {
  // theta = (Q00, Q11, f0(0), f1(0)); prior uniform on [0.15, 0.85] for the
  // transition entries and Beta(1/2, 1/2) for the emission masses.
  const auto config = golden_gibbs();
  const std::vector<double> y{0, 0, 1, 0, 1, 1};
  const std::size_t grid = 28;
  const int bins = 3;
  auto bin_of = [&](double v, double lo, double hi) {
    return std::min(bins - 1, static_cast<int>((v - lo) / (hi - lo) * bins));
  };
  auto cell = [&](double a, double b, double c, double d) {
    return ((bin_of(a, 0.15, 0.85) * bins + bin_of(b, 0.15, 0.85)) * bins + bin_of(c, 0, 1)) * bins + bin_of(d, 0, 1);
  };
  const int cells = bins * bins * bins * bins;
  std::vector<double> exact(cells, 0.0);
  double total = 0.0;
  for (std::size_t ia = 0; ia < grid; ++ia)
    for (std::size_t ib = 0; ib < grid; ++ib)
      for (std::size_t ic = 0; ic < grid; ++ic)
        for (std::size_t id = 0; id < grid; ++id) {
          const double a = 0.15 + 0.7 * (ia + 0.5) / grid;
          const double b = 0.15 + 0.7 * (ib + 0.5) / grid;
          // Arcsine substitution: c = sin^2(pi u / 2) with u uniform is Beta(1/2, 1/2).
          const double c = std::pow(std::sin(std::numbers::pi * (ic + 0.5) / grid / 2), 2);
          const double d = std::pow(std::sin(std::numbers::pi * (id + 0.5) / grid / 2), 2);
          const HmmParams theta(TransitionMatrix(2, {a, 1 - a, 1 - b, b}, 0.15), {0.5, 0.5},
                                {DiscreteEmission({c, 1 - c}), DiscreteEmission({d, 1 - d})});
          const double w = oracle::likelihood(theta, y);
          exact[cell(a, b, c, d)] += w;
          total += w;
        }
  for (double& e : exact) e /= total;

  auto run = config;
  run.n_iter = 200000;
  run.burn_in = 1000;
  run.thin = 2;
  std::vector<double> freq(cells, 0.0);
  std::size_t count = 0;
  run_chain(y, run, [&](const PosteriorSample& s) {
    const auto& q = s.params.transitions();
    freq[cell(q(0, 0), q(1, 1), density(s.params.emission(0), 0.0), density(s.params.emission(1), 0.0))] += 1.0;
    ++count;
  });
  double tv = 0.0;
  for (int c = 0; c < cells; ++c) tv += 0.5 * std::abs(freq[c] / count - exact[c]);
  EXPECT_LE(tv, 0.05);
}
