#include <gtest/gtest.h>

#include "bagcal/simulation.hpp"
#include "test_support.hpp"

using namespace bagcal;
using bagcal::testing::error_code;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.N = 150;
  s.q_binary = 10;
  s.q_continuous = 6;
  s.latent_factors = 3;
  s.responses = {linear_recipe("y_a", 0.8, 0.5, 5.0, 1.0), linear_recipe("y_b", 0.4, 0.3, 3.0, 1.0)};
  s.seed = 11;
  return s;
}

const Population& small_population() {
  static const Population pop = generate_population(small_spec());
  return pop;
}

StudyOptions quick(Index runs, std::uint64_t seed = 3) {
  StudyOptions o;
  o.n = 40;
  o.runs = runs;
  o.seed = seed;
  return o;
}

}  // namespace

TEST(Metrics, TwoPointExample) {
  const std::vector<double> est{9.0, 11.0};
  EXPECT_EQ(metric_rb(est, 10.0), 0.0);
  EXPECT_NEAR(metric_rsd(est, 10.0), std::sqrt(2.0) / 10.0, 1e-15);
  EXPECT_NEAR(metric_rrmse(est, 10.0), std::sqrt(2.0) / 10.0, 1e-15);
}

TEST(Metrics, ExactEstimatesAndSelfRatio) {
  const std::vector<double> est{4.0, 4.0, 4.0};
  EXPECT_EQ(metric_rb(est, 4.0), 0.0);
  EXPECT_EQ(metric_rsd(est, 4.0), 0.0);
  EXPECT_EQ(metric_rrmse(est, 4.0), 0.0);
  const std::vector<double> ht{1.0, 5.0, 2.5, 3.0};
  EXPECT_EQ(metric_varrht(ht, ht), 1.0);
}

TEST(Metrics, Errors) {
  const std::vector<double> one{1.0};
  const std::vector<double> two{1.0, 2.0};
  EXPECT_EQ(error_code([&] { metric_rb(one, 1.0); }), Errc::InsufficientRuns);
  EXPECT_EQ(error_code([&] { metric_rsd(two, 0.0); }), Errc::ZeroTotal);
  EXPECT_EQ(error_code([&] { metric_varrht(two, one); }), Errc::InsufficientRuns);
}

TEST(Metrics, RrmseDecomposition) {
  // With divisor I - 1 throughout: RRMSE^2 = RSD^2 + RB^2 * I / (I - 1).
  bagcal::testing::Rand rng(80);
  for (int rep = 0; rep < 20; ++rep) {
    const int I = rng.integer(2, 200);
    std::vector<double> est(static_cast<std::size_t>(I));
    for (double& v : est) v = 100.0 + 10.0 * rng.normal() + 3.0;
    const double t = 100.0;
    const double rb = metric_rb(est, t), rsd = metric_rsd(est, t), rrmse = metric_rrmse(est, t);
    EXPECT_NEAR(rrmse * rrmse, rsd * rsd + rb * rb * I / (I - 1.0), 1e-10);
    EXPECT_GE(rrmse * rrmse, rsd * rsd);
  }
}

TEST(Summarize, LinearInterpolationQuartiles) {
  const SixNumberSummary s = summarize({4.0, 1.0, 3.0, 2.0});
  EXPECT_EQ(s.min, 1.0);
  EXPECT_EQ(s.q1, 1.75);
  EXPECT_EQ(s.median, 2.5);
  EXPECT_EQ(s.mean, 2.5);
  EXPECT_EQ(s.q3, 3.25);
  EXPECT_EQ(s.max, 4.0);
}

TEST(EstimatorNames, RoundTrip) {
  for (auto k : {EstimatorKind::CAL, EstimatorKind::PCA, EstimatorKind::BAG, EstimatorKind::BAG_PCA, EstimatorKind::HT}) {
    EXPECT_EQ(parse_estimator(to_string(k)), k);
  }
  EXPECT_EQ(parse_estimator("BAGPCA"), EstimatorKind::BAG_PCA);
  EXPECT_FALSE(parse_estimator("GREG").has_value());
}

TEST(GeneratePopulation, HitsR2TargetsAndTotals) {
  const Population& pop = small_population();
  ASSERT_EQ(pop.r2.size(), 2u);
  EXPECT_NEAR(pop.r2[0].full, 0.8, 1e-8);
  EXPECT_NEAR(pop.r2[0].top, 0.5, 1e-8);
  EXPECT_NEAR(pop.r2[1].full, 0.4, 1e-8);
  EXPECT_EQ(pop.aux.cols(), 16);
  EXPECT_EQ(pop.size(), 150);
  for (Index r = 0; r < 2; ++r) EXPECT_NEAR(pop.true_totals(r), pop.responses.col(r).sum(), 1e-10 * std::abs(pop.true_totals(r)));
  for (Index j = 0; j < 10; ++j) {
    EXPECT_TRUE(((pop.aux.values.col(j).array() == 0.0) || (pop.aux.values.col(j).array() == 1.0)).all());
  }
}

TEST(GeneratePopulation, NoiselessResponseIsFullyExplained) {
  SyntheticSpec s = small_spec();
  ResponseRecipe r = linear_recipe("y_clean", 1.0, 0.6, 2.0, 1.0);
  r.noise_scale = 0.0;
  s.responses = {r};
  EXPECT_NEAR(generate_population(s).r2[0].full, 1.0, 1e-6);
}

TEST(GeneratePopulation, PureNoiseResponseIsUnexplained) {
  SyntheticSpec s = small_spec();
  ResponseRecipe r;
  r.name = "y_noise";
  r.top_weight = r.mid_weight = 0.0;
  r.noise_scale = 1.0;
  r.offset = 10.0;
  s.responses = {r};
  s.N = 425;
  EXPECT_LT(generate_population(s).r2[0].full, 0.02);
}

TEST(GeneratePopulation, DefaultSpecMatchesReferenceR2Band) {
  const Population pop = generate_population(SyntheticSpec{});
  ASSERT_GE(pop.r2.size(), 2u);
  EXPECT_EQ(pop.aux.cols(), 87);
  EXPECT_NEAR(pop.r2[0].full, 0.6699, 0.1);
  EXPECT_NEAR(pop.r2[0].top, 0.2301, 0.1);
}

TEST(GeneratePopulation, TailReplacementCapsValues) {
  SyntheticSpec s = small_spec();
  s.responses.push_back(tail_recipe("y_c", "y_a", 0.9));
  const Population pop = generate_population(s);
  std::vector<double> sorted(pop.responses.col(0).data(), pop.responses.col(0).data() + 150);
  std::sort(sorted.begin(), sorted.end());
  const double cut = sorted[static_cast<std::size_t>(std::floor(0.9 * 149))];
  EXPECT_LE(pop.responses.col(2).maxCoeff(), cut);
  EXPECT_LT(pop.true_totals(2), pop.true_totals(0));
}

TEST(GeneratePopulation, InfeasibleTargets) {
  SyntheticSpec s = small_spec();
  ResponseRecipe r = linear_recipe("y_x", 0.9, 0.9, 1.0, 1.0);
  r.r2_top_target = 0.2;
  s.responses = {r};
  EXPECT_EQ(error_code([&] { generate_population(s); }), Errc::InfeasibleSpec);
  s.N = 17;
  EXPECT_EQ(error_code([&] { generate_population(s); }), Errc::InvalidConfig);
}

TEST(GeneratePopulation, Reproducible) {
  const Population a = generate_population(small_spec());
  const Population b = generate_population(small_spec());
  EXPECT_EQ(a.aux.values, b.aux.values);
  EXPECT_EQ(a.responses, b.responses);
}

TEST(RunStudy, ConstantResponseUnderHt) {
  Population pop = small_population();
  pop.responses = Matrix::Constant(150, 1, 2.5);
  pop.response_names = {"y_const"};
  pop.true_totals = Vector::Constant(1, 2.5 * 150);
  EstimatorConfig ht;
  ht.kind = EstimatorKind::HT;
  StudyOptions o = quick(20);
  o.keep_raw = true;
  const SimulationReport rep = run_study(pop, {ht}, o);
  const EstimatorReport& e = rep.estimators.front();
  EXPECT_LE((e.raw_estimates.array() - 375.0).abs().maxCoeff(), 1e-10);
  EXPECT_NEAR(e.metrics[0].rb, 0.0, 1e-14);
  EXPECT_NEAR(e.metrics[0].rsd, 0.0, 1e-14);
  EXPECT_EQ(e.metrics[0].varrht, 1.0);
}

TEST(RunStudy, InsufficientRuns) {
  EstimatorConfig ht;
  ht.kind = EstimatorKind::HT;
  EXPECT_EQ(error_code([&] { run_study(small_population(), {ht}, quick(1)); }), Errc::InsufficientRuns);
}

TEST(RunStudy, ReportCompletenessAndHtProperties) {
  const SimulationReport rep = run_study(small_population(), standard_estimators(4, 10), quick(200));
  ASSERT_EQ(rep.estimators.size(), 5u);
  EXPECT_EQ(rep.runs, 200);
  for (const auto& e : rep.estimators) {
    EXPECT_EQ(e.metrics.size(), 2u);
    EXPECT_LE(e.failed_runs, 200);
    for (const auto& m : e.metrics) {
      EXPECT_TRUE(std::isfinite(m.rb));
      EXPECT_TRUE(std::isfinite(m.rrmse));
    }
    EXPECT_LE(e.cv.min, e.cv.median);
    EXPECT_LE(e.cv.median, e.cv.max);
  }
  const EstimatorReport* ht = rep.find(EstimatorKind::HT);
  ASSERT_NE(ht, nullptr);
  EXPECT_EQ(ht->cv.max, 0.0);
  for (const auto& m : ht->metrics) {
    EXPECT_EQ(m.varrht, 1.0);
    EXPECT_LE(std::abs(m.rb), 3.0 * m.rsd / std::sqrt(200.0));
  }
}

TEST(RunStudy, ReproducibleAndThreadIndependent) {
  const auto est = standard_estimators(4, 8);
  StudyOptions o = quick(30, 9);
  const SimulationReport a = run_study(small_population(), est, o);
  o.threads = 3;
  const SimulationReport b = run_study(small_population(), est, o);
  for (std::size_t e = 0; e < est.size(); ++e) {
    for (std::size_t r = 0; r < 2; ++r) {
      EXPECT_EQ(a.estimators[e].metrics[r].rb, b.estimators[e].metrics[r].rb);
      EXPECT_EQ(a.estimators[e].metrics[r].rsd, b.estimators[e].metrics[r].rsd);
    }
    EXPECT_EQ(a.estimators[e].cv.mean, b.estimators[e].cv.mean);
  }
}

TEST(RunStudy, InvalidEstimatorConfig) {
  auto est = standard_estimators(17, 5);
  EXPECT_EQ(error_code([&] { run_study(small_population(), est, quick(5)); }), Errc::OutOfRange);
  StudyOptions o = quick(5);
  o.n = 151;
  EXPECT_EQ(error_code([&] { run_study(small_population(), standard_estimators(4, 5), o); }), Errc::OutOfRange);
}

TEST(RunStudy, BaggingShrinksWeightDispersionOnDefaultPopulation) {
  const Population pop = generate_population(SyntheticSpec{});
  auto est = standard_estimators(10, 50);
  est.erase(est.begin());  // CAL is not needed here
  StudyOptions o;
  o.n = 85;
  o.runs = 100;
  o.seed = 21;
  o.keep_raw = true;
  const SimulationReport rep = run_study(pop, est, o);
  const Vector& pca = rep.find(EstimatorKind::PCA)->raw_cv;
  const Vector& bag = rep.find(EstimatorKind::BAG_PCA)->raw_cv;
  ASSERT_EQ(pca.size(), 100);
  ASSERT_EQ(bag.size(), 100);
  const Index wins = (bag.array() < pca.array()).count();
  EXPECT_GE(wins, 95);
}

TEST(Sweep, SingleValueMatchesRunStudy) {
  EstimatorConfig base;
  base.kind = EstimatorKind::BAG_PCA;
  base.c = 5;
  base.B = 10;
  const StudyOptions o = quick(25);
  const std::vector<double> grid{5.0};
  const SweepTable t = sweep(small_population(), base, SweepAxis::c, grid, o);
  const SimulationReport rep = run_study(small_population(), {base}, o);
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0].report.metrics[0].rb, rep.estimators[0].metrics[0].rb);
  EXPECT_EQ(t.rows[0].report.cv.mean, rep.estimators[0].cv.mean);
  EXPECT_EQ(t.rows[0].report.g.mean_max, rep.estimators[0].g.mean_max);
}

TEST(Sweep, GridValidation) {
  EstimatorConfig base;
  const std::vector<double> empty;
  const std::vector<double> fractional{2.5};
  const std::vector<double> negative{-1.0};
  EXPECT_EQ(error_code([&] { sweep(small_population(), base, SweepAxis::c, empty, quick(5)); }), Errc::InvalidConfig);
  EXPECT_EQ(error_code([&] { sweep(small_population(), base, SweepAxis::c, fractional, quick(5)); }), Errc::OutOfRange);
  EXPECT_EQ(error_code([&] { sweep(small_population(), base, SweepAxis::alpha, negative, quick(5)); }), Errc::OutOfRange);
}
