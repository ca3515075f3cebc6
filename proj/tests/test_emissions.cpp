#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "nphmm/emissions.hpp"
#include "oracles.hpp"

using namespace nphmm;

TEST(Random, MixSeedSeparatesStreams) {
  EXPECT_NE(mix_seed(1, 0), mix_seed(1, 1));
  EXPECT_NE(mix_seed(1, 0), mix_seed(2, 0));
  EXPECT_EQ(mix_seed(7, 3), mix_seed(7, 3));
}

TEST(Random, UniformIsOpenInterval) {
  Rng rng(1);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Random, GammaAndBetaMoments) {
  Rng rng(2);
  const int n = 200000;
  MeanAccumulator g, b, b1;
  for (int i = 0; i < n; ++i) {
    g.add(rng.gamma(0.3));
    b.add(rng.beta(2.0, 5.0));
    b1.add(rng.beta_one(3.0));
  }
  EXPECT_NEAR(g.mean(), 0.3, 3 * g.estimate().std_error);
  EXPECT_NEAR(b.mean(), 2.0 / 7.0, 3 * b.estimate().std_error);
  EXPECT_NEAR(b1.mean(), 1.0 / 4.0, 3 * b1.estimate().std_error);
  EXPECT_EQ(rng.gamma(0.0), 0.0);
}

TEST(Random, DirichletRejectsAllZero) {
  Rng rng(3);
  EXPECT_THROW(rng.dirichlet(std::vector<double>{0.0, 0.0}), NumericalError);
}

TEST(Density, SpecExamples) {
  EXPECT_DOUBLE_EQ(density(DiscreteEmission({0.9, 0.1}), 0), 0.9);
  const GaussianMixtureEmission standard({{1.0, 0.0, 1.0}});
  EXPECT_NEAR(density(standard, 0.0), 1.0 / std::sqrt(2 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(density(TranslatedEmission{standard, 1.0}, 1.0), 0.39894228, 1e-8);
}

TEST(Density, DiscreteRejectsRealObservation) {
  EXPECT_THROW(density(DiscreteEmission({0.5, 0.5}), 0.5), DomainError);
  EXPECT_THROW(density(DiscreteEmission({0.5, 0.5}), -1.0), DomainError);
  EXPECT_EQ(density(DiscreteEmission({0.5, 0.5}), 7.0), 0.0);
}

TEST(Density, ConstructionInvariants) {
  EXPECT_THROW(DiscreteEmission({0.5, 0.6}), InvariantError);
  EXPECT_THROW(DiscreteEmission({1.2, -0.2}), InvariantError);
  EXPECT_THROW(DiscreteEmission(std::vector<double>{}), InvariantError);
  EXPECT_THROW(GaussianMixtureEmission({{1.0, 0.0, 0.0}}), InvariantError);
  EXPECT_THROW(GaussianMixtureEmission({{0.5, 0.0, 1.0}}), InvariantError);
}

TEST(Density, MixtureIntegratesToOneByMonteCarlo) {
  // E_{uniform on [-20, 20]}[40 f(U)] = 1.
  const GaussianMixtureEmission g({{0.3, -1.0, 0.5}, {0.7, 2.0, 1.5}});
  Rng rng(5);
  MeanAccumulator acc;
  for (int i = 0; i < 200000; ++i) acc.add(40.0 * g.density(-20.0 + 40.0 * rng.uniform()));
  EXPECT_NEAR(acc.mean(), 1.0, 3 * acc.estimate().std_error);
}

TEST(Density, SamplerMatchesMixtureMean) {
  const GaussianMixtureEmission g({{0.3, -1.0, 0.5}, {0.7, 2.0, 1.5}});
  Rng rng(6);
  MeanAccumulator acc;
  for (int i = 0; i < 200000; ++i) acc.add(g.sample(rng));
  EXPECT_NEAR(acc.mean(), 0.3 * -1.0 + 0.7 * 2.0, 3 * acc.estimate().std_error);
}

TEST(L1Distance, SpecExamples) {
  const DiscreteEmission f({0.9, 0.1});
  const DiscreteEmission g({0.2, 0.8});
  EXPECT_EQ(l1_distance(f, f).value, 0.0);
  EXPECT_EQ(l1_distance(DiscreteEmission({1.0, 0.0}), DiscreteEmission({0.0, 1.0})).value, 2.0);
  EXPECT_NEAR(l1_distance(f, g).value, 1.4, 1e-15);
}

TEST(L1Distance, DifferentSupportSizes) {
  EXPECT_NEAR(l1_distance(DiscreteEmission({1.0}), DiscreteEmission({0.5, 0.25, 0.25})).value, 1.0, 1e-15);
}

TEST(L1Distance, ModeErrors) {
  const GaussianMixtureEmission g({{1.0, 0.0, 1.0}});
  EXPECT_THROW(l1_distance(g, g, MonteCarloMode{0, 1}), InvariantError);
  EXPECT_THROW(l1_distance(g, g, ExactMode{}), DomainError);
  EXPECT_THROW(l1_distance(g, DiscreteEmission({1.0}), MonteCarloMode{10, 1}), DomainError);
}

TEST(L1Distance, MonteCarloAgreesWithClosedForm) {
  // Two unit-variance normals at distance d: L1 = 2 (2 Phi(d/2) - 1).
  const GaussianMixtureEmission a({{1.0, 0.0, 1.0}});
  const GaussianMixtureEmission b({{1.0, 1.0, 1.0}});
  const double exact = 2.0 * std::erf(0.5 / std::sqrt(2.0));
  const auto est = l1_distance(a, b, MonteCarloMode{200000, 9});
  EXPECT_GT(est.std_error, 0.0);
  EXPECT_NEAR(est.value, exact, 4 * est.std_error);
}

TEST(L1Distance, MonteCarloAgreesWithExactOnDiscrete) {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 5; ++rep) {
    const auto f = oracle::random_discrete(rng, 5);
    const auto g = oracle::random_discrete(rng, 5);
    const auto est = l1_distance(f, g, MonteCarloMode{100000, static_cast<std::uint64_t>(rep)});
    EXPECT_NEAR(est.value, l1_distance(f, g).value, 4 * est.std_error + 1e-12);
  }
}

TEST(L1Distance, PseudometricOnDiscreteTriples) {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 100; ++rep) {
    const auto f = oracle::random_discrete(rng, 4);
    const auto g = oracle::random_discrete(rng, 4);
    const auto h = oracle::random_discrete(rng, 4);
    EXPECT_EQ(l1_distance(f, g).value, l1_distance(g, f).value);
    EXPECT_LE(l1_distance(f, h).value, l1_distance(f, g).value + l1_distance(g, h).value + 1e-15);
  }
}

TEST(L1Distance, TriangleOnContinuousWithinMonteCarloError) {
  const GaussianMixtureEmission f({{1.0, 0.0, 1.0}});
  const GaussianMixtureEmission g({{0.5, 0.5, 1.0}, {0.5, -0.5, 0.7}});
  const GaussianMixtureEmission h({{1.0, 1.0, 1.3}});
  const MonteCarloMode m{100000, 4};
  const auto fh = l1_distance(f, h, m);
  const auto fg = l1_distance(f, g, m);
  const auto gh = l1_distance(g, h, m);
  const double se = std::sqrt(fh.std_error * fh.std_error + fg.std_error * fg.std_error + gh.std_error * gh.std_error);
  EXPECT_LE(fh.value, fg.value + gh.value + 3 * se);
}

TEST(L1Distance, TranslationInvariancePairedSeeds) {
  const GaussianMixtureEmission g({{0.4, -1.0, 0.8}, {0.6, 1.0, 1.0}});
  const GaussianMixtureEmission h({{1.0, 0.3, 1.2}});
  const MonteCarloMode m{100000, 21};
  const auto plain = l1_distance(g, h, m);
  const auto shifted = l1_distance(TranslatedEmission{g, 2.5}, TranslatedEmission{h, 2.5}, m);
  EXPECT_NEAR(plain.value, shifted.value, 3 * std::hypot(plain.std_error, shifted.std_error));
}

TEST(EmissionD, SpecExamples) {
  const std::vector<EmissionModel> f{DiscreteEmission({0.9, 0.1}), DiscreteEmission({0.5, 0.5})};
  const std::vector<EmissionModel> g{DiscreteEmission({0.2, 0.8}), DiscreteEmission({0.6, 0.4})};
  EXPECT_EQ(emission_d(f, f).value, 0.0);
  EXPECT_NEAR(emission_d(f, g).value, 1.4, 1e-15);
  EXPECT_NEAR(emission_d(std::span(f).first(1), std::span(g).first(1)).value, l1_distance(f[0], g[0]).value, 0.0);
  EXPECT_THROW(emission_d(f, std::span(g).first(1)), InvariantError);
}
