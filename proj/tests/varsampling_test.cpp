#include <gtest/gtest.h>

#include <set>

#include "bagcal/parallel.hpp"
#include "bagcal/rng.hpp"
#include "bagcal/varsampling.hpp"
#include "test_support.hpp"

using namespace bagcal;
using bagcal::testing::error_code;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Empirical inclusion frequencies over `draws` independent draws.
Vector frequencies(const ComponentSelection& sel, int draws, std::uint64_t seed) {
  Vector counts = Vector::Zero(sel.probs.size());
  const Stream root(seed);
  for (int b = 0; b < draws; ++b) {
    Stream s = root.derive("draw", static_cast<std::uint64_t>(b));
    const auto chosen = sample_components(sel, s);
    EXPECT_EQ(static_cast<Index>(chosen.size()), sel.c);
    for (Index j : chosen) counts(j) += 1.0;
  }
  return counts / draws;
}

void expect_within_binomial_se(const Vector& freq, const Vector& p, int draws) {
  for (Index j = 0; j < p.size(); ++j) {
    const double se = std::sqrt(p(j) * (1.0 - p(j)) / draws);
    EXPECT_LE(std::abs(freq(j) - p(j)), 3.0 * se + 1e-12) << "component " << j;
  }
}

}  // namespace

TEST(Stream, ReproducibleAndTagged) {
  Stream a(42), b(42);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a(), b());
  EXPECT_NE(Stream(42).derive("bag", 0).key(), Stream(42).derive("bag", 1).key());
  EXPECT_NE(Stream(42).derive("bag", 0).key(), Stream(42).derive("run", 0).key());
  EXPECT_EQ(Stream(42).derive("bag", 3).key(), Stream(42).derive("bag", 3).key());
}

TEST(Stream, UniformRangeAndIndex) {
  Stream s(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = s.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(s.uniform_index(7), 7u);
  }
}

TEST(ParallelFor, SameResultsForAnyThreadCount) {
  std::vector<double> one(200), four(200);
  auto body = [](std::vector<double>& out) {
    return [&out](std::size_t i) {
      Stream s = Stream(5).derive("x", i);
      out[i] = s.normal();
    };
  };
  parallel_for(200, 1, body(one));
  parallel_for(200, 4, body(four));
  EXPECT_EQ(one, four);
}

TEST(ParallelFor, RethrowsLowestFailingIndex) {
  try {
    parallel_for(100, 4, [](std::size_t i) {
      if (i == 17 || i == 60) throw Error("test", Errc::OutOfRange, std::to_string(i));
    });
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.message(), "17");
  }
}

TEST(InclusionProbs, DirectNormalization) {
  const auto sel = component_inclusion_probs(vec({4, 1}), 0.5, 1);
  EXPECT_NEAR(sel.probs(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(sel.probs(1), 1.0 / 3.0, 1e-15);
}

TEST(InclusionProbs, SymmetricEigenvalues) {
  for (double alpha : {0.0, 0.5, 3.0}) {
    const auto sel = component_inclusion_probs(Vector::Ones(4), alpha, 2);
    EXPECT_LE((sel.probs.array() - 0.5).abs().maxCoeff(), 1e-15);
  }
}

TEST(InclusionProbs, CapAndRedistribute) {
  const auto sel = component_inclusion_probs(vec({100, 1, 1}), 1.0, 2);
  EXPECT_EQ(sel.probs(0), 1.0);
  EXPECT_NEAR(sel.probs(1), 0.5, 1e-15);
  EXPECT_NEAR(sel.probs(2), 0.5, 1e-15);
  EXPECT_NEAR(sel.probs.sum(), 2.0, 1e-10);
}

TEST(InclusionProbs, ZeroEigenvaluesIneligibleUnlessAlphaZero) {
  const Vector lambda = vec({3, 2, 1, 0});
  const auto sel = component_inclusion_probs(lambda, 0.5, 2);
  EXPECT_EQ(sel.probs(3), 0.0);
  EXPECT_NEAR(sel.probs.sum(), 2.0, 1e-10);
  const auto flat = component_inclusion_probs(lambda, 0.0, 2);
  EXPECT_LE((flat.probs.array() - 0.5).abs().maxCoeff(), 1e-15);
  EXPECT_EQ(error_code([&] { component_inclusion_probs(lambda, 0.5, 4); }), Errc::InfeasibleSize);
  EXPECT_FALSE(error_code([&] { component_inclusion_probs(lambda, 0.0, 4); }));
  EXPECT_EQ(error_code([&] { component_inclusion_probs(lambda, -1.0, 1); }), Errc::OutOfRange);
}

TEST(InclusionProbs, SumAndBoundsOnRandomSpectra) {
  bagcal::testing::Rand rng(40);
  for (int rep = 0; rep < 50; ++rep) {
    const Index q = rng.integer(2, 40);
    Vector lambda = rng.uniform_vector(q, 0.0, 1.0).array().pow(4.0) * 10.0;
    std::sort(lambda.data(), lambda.data() + q, std::greater<>());
    const Index c = rng.integer(1, static_cast<int>(q));
    const double alpha = rng.uniform(0.0, 4.0);
    const auto sel = component_inclusion_probs(lambda, alpha, c);
    EXPECT_NEAR(sel.probs.sum(), static_cast<double>(c), 1e-10);
    EXPECT_LE(sel.probs.maxCoeff(), 1.0);
    EXPECT_GE(sel.probs.minCoeff(), 0.0);
  }
}

TEST(InclusionProbs, ContrastGrowsWithAlpha) {
  const Vector lambda = vec({5, 3, 2, 1, 0.5, 0.2});
  double prev_top = 0.0, prev_bottom = 1.0;
  for (double alpha : {0.0, 0.25, 0.5, 1.0, 2.0}) {
    const auto sel = component_inclusion_probs(lambda, alpha, 2);
    EXPECT_GE(sel.probs(0), prev_top - 1e-15);
    EXPECT_LE(sel.probs(5), prev_bottom + 1e-15);
    prev_top = sel.probs(0);
    prev_bottom = sel.probs(5);
  }
}

TEST(SampleComponents, DegenerateProbabilities) {
  ComponentSelection sel;
  sel.c = 2;
  sel.probs = vec({1, 1, 0, 0});
  Stream s(3);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_components(sel, s), (std::vector<Index>{0, 1}));
}

TEST(SampleComponents, EqualProbabilitiesMatchBinomialSe) {
  const auto sel = component_inclusion_probs(Vector::Ones(7), 0.0, 3);
  const int draws = 200000;
  expect_within_binomial_se(frequencies(sel, draws, 11), sel.probs, draws);
}

TEST(SampleComponents, TwoComponentsOneDraw) {
  const auto sel = component_inclusion_probs(vec({4, 1}), 0.5, 1);
  const int draws = 200000;
  expect_within_binomial_se(frequencies(sel, draws, 12), sel.probs, draws);
}

TEST(SampleComponents, SkewedProbabilitiesWithCertainty) {
  const auto sel = component_inclusion_probs(vec({50, 9, 4, 2, 1, 0.5, 0.1}), 1.0, 3);
  EXPECT_EQ(sel.probs(0), 1.0);
  const int draws = 200000;
  expect_within_binomial_se(frequencies(sel, draws, 13), sel.probs, draws);
}

TEST(SampleComponents, RejectiveSamplerHitsTargets) {
  const auto sel = component_inclusion_probs(vec({6, 4, 3, 2, 1, 1, 0.5}), 0.5, 3, ComponentSampler::rejective_poisson);
  ASSERT_EQ(sel.working_probs.size(), 7);
  // Exact conditional-Poisson probabilities of the working parameters.
  const Vector odds = sel.working_probs.array() / (1.0 - sel.working_probs.array());
  EXPECT_LE((detail::conditional_poisson_probs(odds, 3) - sel.probs).cwiseAbs().maxCoeff(), 1e-12);
  const int draws = 100000;
  expect_within_binomial_se(frequencies(sel, draws, 14), sel.probs, draws);
}

TEST(SampleComponents, DeterministicGivenSeed) {
  const auto sel = component_inclusion_probs(vec({5, 4, 3, 2, 1}), 0.5, 2);
  Stream a(77), b(77);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_components(sel, a), sample_components(sel, b));
}

TEST(Srswor, FullSampleIsCensus) {
  Stream s(1);
  const SamplingDesign d = srswor(6, 6, s);
  EXPECT_EQ(d.sample_indices, (std::vector<Index>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(d.design_weights, Vector::Ones(6));
}

TEST(Srswor, SingleDrawIsUniform) {
  const int draws = 100000;
  Vector counts = Vector::Zero(4);
  const Stream root(2);
  for (int i = 0; i < draws; ++i) {
    Stream s = root.derive("d", static_cast<std::uint64_t>(i));
    counts(srswor(4, 1, s).sample_indices.front()) += 1.0;
  }
  expect_within_binomial_se(counts / draws, Vector::Constant(4, 0.25), draws);
}

TEST(Srswor, DesignInvariants) {
  Stream s(3);
  const SamplingDesign d = srswor(425, 85, s);
  EXPECT_EQ(d.sample_size(), 85);
  EXPECT_TRUE(std::is_sorted(d.sample_indices.begin(), d.sample_indices.end()));
  EXPECT_EQ(std::set<Index>(d.sample_indices.begin(), d.sample_indices.end()).size(), 85u);
  EXPECT_LE(((d.design_weights.array() * d.inclusion_probs.array()) - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_EQ(error_code([] {
              Stream t(1);
              srswor(5, 6, t);
            }),
            Errc::OutOfRange);
}

TEST(DesignFromProbs, Validation) {
  const SamplingDesign d = design_from_probs(5, {3, 1}, vec({0.5, 0.25}));
  EXPECT_EQ(d.sample_indices, (std::vector<Index>{1, 3}));
  EXPECT_EQ(d.design_weights(1), 4.0);
  EXPECT_EQ(d.design_weights(3), 2.0);
  EXPECT_EQ(error_code([] { design_from_probs(5, {1, 1}, vec({0.5, 0.5})); }), Errc::OutOfRange);
  EXPECT_EQ(error_code([] { design_from_probs(5, {1}, vec({1.5})); }), Errc::OutOfRange);
}
