#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bagcal/bagging.hpp"
#include "bagcal/calibration.hpp"
#include "bagcal/parallel.hpp"
#include "bagcal/pca.hpp"
#include "bagcal/rng.hpp"
#include "bagcal/varsampling.hpp"

namespace bagcal {

inline constexpr std::string_view kSimulation = "simulation";

// ---------------------------------------------------------------------------
// Synthetic populations
// ---------------------------------------------------------------------------

/// How one response variable is built. A response is
///   offset + scale * (top_weight * s_top + mid_weight * s_mid + noise_scale * e)
/// where s_top and s_mid are unit-variance random combinations of the leading
/// and mid-ranked principal components of the auxiliary matrix, and e is
/// unit-variance noise orthogonal to the auxiliary column space. The three
/// parts are exactly uncorrelated, so the full-model R^2 is
/// (top^2 + mid^2) / (top^2 + mid^2 + noise^2) before any tail replacement.
///
/// A recipe with tail_source set instead copies that response and replaces
/// every value above its tail_quantile with a random draw from the values at
/// or below it.
struct ResponseRecipe {
  std::string name;
  double top_weight = 0.0;
  double mid_weight = 0.0;
  double noise_scale = 1.0;
  Index top_count = 10;
  Index mid_first = 10;
  Index mid_last = 40;  // exclusive
  double offset = 1.0;
  double scale = 1.0;
  double noise_skew = 0.0;  // lognormal sigma of the raw noise; 0 = Gaussian
  std::string tail_source;
  double tail_quantile = 1.0;
  double r2_full_target = std::numeric_limits<double>::quiet_NaN();
  double r2_top_target = std::numeric_limits<double>::quiet_NaN();
};

inline ResponseRecipe linear_recipe(std::string name, double r2_full, double r2_top, double offset, double scale) {
  ResponseRecipe r;
  r.name = std::move(name);
  r.top_weight = std::sqrt(r2_top);
  r.mid_weight = std::sqrt(r2_full - r2_top);
  r.noise_scale = std::sqrt(1.0 - r2_full);
  r.offset = offset;
  r.scale = scale;
  r.noise_skew = 1.0;
  r.r2_full_target = r2_full;
  r.r2_top_target = r2_top;
  return r;
}

inline ResponseRecipe tail_recipe(std::string name, std::string source, double quantile) {
  ResponseRecipe r;
  r.name = std::move(name);
  r.tail_source = std::move(source);
  r.tail_quantile = quantile;
  return r;
}

/// Four responses shaped after the income-survey study: two with sizable
/// linear structure (y_1, y_2) and two tail-trimmed copies (y_3, y_4).
inline std::vector<ResponseRecipe> default_responses() {
  return {
      linear_recipe("y_1", 0.6699, 0.2301, 4.0, 2.5),
      linear_recipe("y_2", 0.6371, 0.3050, 4.0, 2.8),
      tail_recipe("y_3", "y_1", 0.97),
      tail_recipe("y_4", "y_2", 0.97),
  };
}

struct SyntheticSpec {
  Index N = 425;
  Index q_binary = 64;
  Index q_continuous = 23;
  Index latent_factors = 8;
  std::vector<ResponseRecipe> responses = default_responses();
  Index r2_top_count = 10;
  double r2_band = 0.1;
  std::uint64_t seed = 20240611;

  Index q() const noexcept { return q_binary + q_continuous; }
};

struct R2Summary {
  std::string response;
  double full = 0.0;  // on all auxiliary variables
  double top = 0.0;   // on the leading r2_top_count components
};

struct Population {
  DataMatrix aux;  // original units
  std::vector<std::string> ids;
  std::vector<std::string> response_names;
  Matrix responses;  // N x m
  Vector true_totals;
  std::vector<R2Summary> r2;

  Index size() const noexcept { return aux.rows(); }
};

/// R^2 of y regressed on [1 | predictors].
inline double r_squared(const Vector& y, const Matrix& predictors) {
  const double mean = y.mean();
  const double sst = (y.array() - mean).square().sum();
  if (!(sst > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const Matrix resid = regress_residuals(y, predictors);
  return 1.0 - resid.squaredNorm() / sst;
}

namespace detail {

inline Vector unit_variance(Vector v) {
  v.array() -= v.mean();
  const double sd = std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
  if (sd > 1e-12) {
    v /= sd;
  } else {
    v.setZero();
  }
  return v;
}

inline Vector component_signal(const Matrix& comp_scores, const Vector& eigenvalues, Index first, Index last,
                               Stream stream) {
  Vector s = Vector::Zero(comp_scores.rows());
  last = std::min(last, comp_scores.cols());
  for (Index j = first; j < last; ++j) {
    const double beta = stream.normal();
    if (eigenvalues(j) > 1e-12) s += beta * comp_scores.col(j) / std::sqrt(eigenvalues(j));
  }
  return unit_variance(std::move(s));
}

inline Population build_population_aux(const SyntheticSpec& spec) {
  const Index N = spec.N;
  const Index q = spec.q();
  const Index K = std::max<Index>(1, spec.latent_factors);
  const Stream root(spec.seed);

  Matrix factors(N, K + 1);  // last column is a general factor
  {
    Stream s = root.derive("factors");
    for (Index j = 0; j < K + 1; ++j)
      for (Index k = 0; k < N; ++k) factors(k, j) = s.normal();
  }

  Matrix latent(N, q);
  {
    Stream s = root.derive("loadings");
    Stream e = root.derive("unique");
    for (Index j = 0; j < q; ++j) {
      const double a = 0.55 + 0.35 * s.uniform();
      const double b = -0.3 + 0.6 * s.uniform();
      const double general = 0.1 + 0.25 * s.uniform();
      const double unique = std::sqrt(std::max(0.05, 1.0 - a * a - b * b - general * general));
      const Index f1 = j % K;
      const Index f2 = (3 * j + 1) % K;
      for (Index k = 0; k < N; ++k) {
        latent(k, j) = a * factors(k, f1) + (f1 == f2 ? 0.0 : b * factors(k, f2)) + general * factors(k, K) +
                       unique * e.normal();
      }
    }
  }

  Matrix raw(N, q);
  std::vector<std::string> names;
  {
    Stream s = root.derive("binary");
    for (Index j = 0; j < spec.q_binary; ++j) {
      const double prevalence = 0.04 + 0.46 * s.uniform();
      const Index ones = std::clamp<Index>(static_cast<Index>(std::llround(prevalence * static_cast<double>(N))), 2, N - 2);
      std::vector<Index> order(static_cast<std::size_t>(N));
      std::iota(order.begin(), order.end(), Index{0});
      std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return latent(a, j) > latent(b, j); });
      raw.col(j).setZero();
      for (Index r = 0; r < ones; ++r) raw(order[static_cast<std::size_t>(r)], j) = 1.0;
      names.push_back("x_bin" + std::to_string(j + 1));
    }
  }
  {
    Stream s = root.derive("continuous");
    for (Index j = spec.q_binary; j < q; ++j) {
      const double skew = 0.3 + 0.6 * s.uniform();
      const double unit = std::pow(10.0, std::floor(4.0 * s.uniform()));
      raw.col(j) = unit * (skew * latent.col(j)).array().exp();
      names.push_back("x_cont" + std::to_string(j - spec.q_binary + 1));
    }
    // One near-redundant continuous variable: the sum of two others plus a
    // whisper of noise gives the small trailing eigenvalue seen in real
    // survey covariates.
    if (spec.q_continuous >= 3) {
      const Index last = q - 1;
      const Vector base = raw.col(last - 1) + raw.col(last - 2);
      const double sd = std::sqrt((base.array() - base.mean()).square().mean());
      Stream e = root.derive("redundant");
      for (Index k = 0; k < N; ++k) raw(k, last) = base(k) + 1e-3 * sd * e.normal();
    }
  }

  Population pop;
  pop.aux.values = std::move(raw);
  pop.aux.column_names = std::move(names);
  pop.aux.standardized = false;
  pop.aux.col_means = pop.aux.values.colwise().mean();
  pop.aux.col_sds.resize(q);
  for (Index j = 0; j < q; ++j) {
    pop.aux.col_sds(j) = std::sqrt((pop.aux.values.col(j).array() - pop.aux.col_means(j)).square().mean());
  }
  for (Index k = 0; k < N; ++k) pop.ids.push_back("u" + std::to_string(k + 1));
  return pop;
}

}  // namespace detail

/// Synthetic population with the shape of the income-survey study: binary
/// indicators from thresholded latent Gaussians, skewed continuous variables
/// from correlated latent factors, and responses built per recipe. Achieved
/// R^2 values are stored on the population; recipes with targets must land
/// within r2_band of them.
inline Population generate_population(const SyntheticSpec& spec) {
  if (spec.N < 3 || spec.q() < 1 || spec.q_binary < 0 || spec.q_continuous < 0) {
    throw Error(kSimulation, Errc::InvalidConfig, "population needs N >= 3 and at least one auxiliary variable");
  }
  if (spec.N <= spec.q() + 1) {
    throw Error(kSimulation, Errc::InvalidConfig, "N must exceed q + 1 so R^2 values are meaningful");
  }
  if (!(spec.r2_band >= 0.0 && spec.r2_band <= 1.0)) {
    throw Error(kSimulation, Errc::InvalidConfig, "R^2 band must lie in [0, 1]");
  }
  Population pop = detail::build_population_aux(spec);
  const DataMatrix xs = standardize_columns(pop.aux.values, pop.aux.column_names);
  const PcaModel model = fit_pca(xs);
  const Matrix comp = scores_standardized(model, xs.values);
  const Index top_r2 = std::min(spec.r2_top_count, spec.q());

  const Index m = static_cast<Index>(spec.responses.size());
  pop.responses.resize(spec.N, m);
  const Stream root = Stream(spec.seed).derive("responses");
  for (Index r = 0; r < m; ++r) {
    const ResponseRecipe& recipe = spec.responses[static_cast<std::size_t>(r)];
    const Stream rs = root.derive(recipe.name);
    Vector y(spec.N);
    if (!recipe.tail_source.empty()) {
      const auto src = std::find(pop.response_names.begin(), pop.response_names.end(), recipe.tail_source);
      if (src == pop.response_names.end()) {
        throw Error(kSimulation, Errc::InvalidConfig,
                    "response " + recipe.name + " derives from unknown or later response " + recipe.tail_source);
      }
      if (!(recipe.tail_quantile > 0.0 && recipe.tail_quantile <= 1.0)) {
        throw Error(kSimulation, Errc::InvalidConfig, "tail quantile must lie in (0, 1]");
      }
      y = pop.responses.col(src - pop.response_names.begin());
      std::vector<double> sorted(y.data(), y.data() + y.size());
      std::sort(sorted.begin(), sorted.end());
      const auto cut_at = static_cast<std::size_t>(std::floor(recipe.tail_quantile * static_cast<double>(spec.N - 1)));
      const double cut = sorted[cut_at];
      std::vector<double> keep;
      for (Index k = 0; k < spec.N; ++k) {
        if (y(k) <= cut) keep.push_back(y(k));
      }
      Stream draw = rs.derive("tail");
      for (Index k = 0; k < spec.N; ++k) {
        if (y(k) > cut) y(k) = keep[static_cast<std::size_t>(draw.uniform_index(keep.size()))];
      }
    } else {
      const Vector top = detail::component_signal(comp, model.eigenvalues, 0, recipe.top_count, rs.derive("top"));
      const Vector mid = detail::component_signal(comp, model.eigenvalues, recipe.mid_first, recipe.mid_last, rs.derive("mid"));
      Vector noise(spec.N);
      Stream ns = rs.derive("noise");
      for (Index k = 0; k < spec.N; ++k) {
        const double z = ns.normal();
        noise(k) = recipe.noise_skew > 0.0 ? std::exp(recipe.noise_skew * z) : z;
      }
      noise = detail::unit_variance(regress_residuals(noise, xs.values).col(0));
      y = recipe.offset + recipe.scale * (recipe.top_weight * top + recipe.mid_weight * mid + recipe.noise_scale * noise).array();
    }
    pop.responses.col(r) = y;
    pop.response_names.push_back(recipe.name);

    R2Summary summary;
    summary.response = recipe.name;
    summary.full = r_squared(y, xs.values);
    summary.top = r_squared(y, comp.leftCols(top_r2));
    auto off = [&](double achieved, double target) {
      return std::isfinite(target) && !(std::abs(achieved - target) <= spec.r2_band);
    };
    if (off(summary.full, recipe.r2_full_target) || off(summary.top, recipe.r2_top_target)) {
      throw Error(kSimulation, Errc::InfeasibleSpec,
                  recipe.name + ": achieved R^2 full = " + std::to_string(summary.full) + ", top = " +
                      std::to_string(summary.top) + " outside the target band");
    }
    pop.r2.push_back(summary);
  }
  pop.true_totals = pop.responses.colwise().sum().transpose();
  return pop;
}

// ---------------------------------------------------------------------------
// Monte Carlo metrics
// ---------------------------------------------------------------------------

namespace detail {

inline void check_runs(std::span<const double> est) {
  if (est.size() < 2) throw Error(kSimulation, Errc::InsufficientRuns, "need at least two simulation runs");
}

inline void check_total(double t) {
  if (t == 0.0) throw Error(kSimulation, Errc::ZeroTotal, "relative metrics need a nonzero true total");
}

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double variance_of(std::span<const double> v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace detail

/// (mean - t) / t.
inline double metric_rb(std::span<const double> estimates, double t) {
  detail::check_runs(estimates);
  detail::check_total(t);
  return (detail::mean_of(estimates) - t) / t;
}

/// sd (divisor I - 1) / t.
inline double metric_rsd(std::span<const double> estimates, double t) {
  detail::check_runs(estimates);
  detail::check_total(t);
  return std::sqrt(detail::variance_of(estimates)) / t;
}

/// sqrt(sum (est - t)^2 / (I - 1)) / t.
inline double metric_rrmse(std::span<const double> estimates, double t) {
  detail::check_runs(estimates);
  detail::check_total(t);
  double s = 0.0;
  for (double x : estimates) s += (x - t) * (x - t);
  return std::sqrt(s / static_cast<double>(estimates.size() - 1)) / t;
}

/// var(estimates) / var(ht_estimates), both with divisor I - 1. Two
/// degenerate (zero-variance) series compare as 1.
inline double metric_varrht(std::span<const double> estimates, std::span<const double> ht_estimates) {
  detail::check_runs(estimates);
  detail::check_runs(ht_estimates);
  const double v = detail::variance_of(estimates);
  const double v_ht = detail::variance_of(ht_estimates);
  if (v_ht == 0.0) return v == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  return v / v_ht;
}

struct SixNumberSummary {
  double min = 0.0, q1 = 0.0, median = 0.0, mean = 0.0, q3 = 0.0, max = 0.0;
};

/// Quantile with linear interpolation between order statistics.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline SixNumberSummary summarize(std::vector<double> values) {
  SixNumberSummary s;
  if (values.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan, nan, nan, nan, nan};
  }
  std::sort(values.begin(), values.end());
  s.min = values.front();
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.mean = detail::mean_of(values);
  s.q3 = quantile_sorted(values, 0.75);
  s.max = values.back();
  return s;
}

// ---------------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------------

enum class EstimatorKind { CAL, PCA, BAG, BAG_PCA, HT };

constexpr std::string_view to_string(EstimatorKind kind) noexcept {
  switch (kind) {
    case EstimatorKind::CAL: return "CAL";
    case EstimatorKind::PCA: return "PCA";
    case EstimatorKind::BAG: return "BAG";
    case EstimatorKind::BAG_PCA: return "BAG+PCA";
    case EstimatorKind::HT: return "HT";
  }
  return "?";
}

inline std::optional<EstimatorKind> parse_estimator(std::string_view name) {
  for (auto kind : {EstimatorKind::CAL, EstimatorKind::PCA, EstimatorKind::BAG, EstimatorKind::BAG_PCA, EstimatorKind::HT}) {
    if (name == to_string(kind)) return kind;
  }
  if (name == "BAGPCA" || name == "BAG_PCA") return EstimatorKind::BAG_PCA;
  return std::nullopt;
}

/// One estimator in a study. c counts calibration variables per calibration
/// (leading components for PCA, drawn variables or components for the bagged
/// estimators); CAL and HT ignore it.
struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::BAG_PCA;
  Index c = 10;
  double alpha = 0.5;
  Index B = 100;
  ComponentSampler sampler = ComponentSampler::systematic_random_order;
  SingularityPolicy singularity = SingularityPolicy::pseudo_inverse;
};

/// The five estimators of the reference design with shared c, B, alpha.
inline std::vector<EstimatorConfig> standard_estimators(Index c = 10, Index B = 100, double alpha = 0.5) {
  std::vector<EstimatorConfig> out;
  for (auto kind : {EstimatorKind::CAL, EstimatorKind::PCA, EstimatorKind::BAG, EstimatorKind::BAG_PCA, EstimatorKind::HT}) {
    EstimatorConfig e;
    e.kind = kind;
    e.c = c;
    e.B = B;
    e.alpha = kind == EstimatorKind::BAG ? 0.0 : alpha;
    out.push_back(e);
  }
  return out;
}

struct StudyOptions {
  Index n = 85;
  Index runs = 1000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  bool keep_raw = false;
};

struct Metrics {
  double rb = 0.0, rsd = 0.0, rrmse = 0.0, varrht = 0.0;
};

/// Per-run extremes of g, aggregated: the mean over runs of each run's min
/// and max, and the overall min and max.
struct GExtremes {
  double mean_min = 0.0, mean_max = 0.0, min_min = 0.0, max_max = 0.0;
  double mean_spread() const noexcept { return mean_max - mean_min; }
};

struct EstimatorReport {
  EstimatorConfig config;
  std::vector<Metrics> metrics;  // one per response
  SixNumberSummary cv;
  GExtremes g;
  double mean_abs_g_dev = 0.0;  // mean over runs of mean_k |g_k - 1|
  Index failed_runs = 0;
  Index rank_deficient_runs = 0;
  Index rank_deficient_calibrations = 0;
  Matrix raw_estimates;  // runs x responses, when kept
  Vector raw_cv;
};

struct SimulationReport {
  Index population_size = 0;
  Index n = 0;
  Index runs = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> responses;
  Vector true_totals;
  std::vector<EstimatorReport> estimators;

  const EstimatorReport* find(EstimatorKind kind) const {
    for (const auto& e : estimators) {
      if (e.config.kind == kind) return &e;
    }
    return nullptr;
  }
};

/// Population quantities every run shares: standardized auxiliaries, the
/// population PCA and its scores.
struct StudyContext {
  const Population* population = nullptr;
  DataMatrix x;
  PcaModel model;
  Matrix comp;

  explicit StudyContext(const Population& pop)
      : population(&pop),
        x(standardize_columns(pop.aux.values, pop.aux.column_names)),
        model(fit_pca(x)),
        comp(scores_standardized(model, x.values)) {}
};

namespace detail {

struct RunOutcome {
  Vector estimates;
  double cv = 0.0;
  double g_min = 0.0;
  double g_max = 0.0;
  double mean_abs_dev = 0.0;
  bool failed = false;
  Index rank_deficient = 0;
};

inline Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

inline void validate_estimator(const EstimatorConfig& e, Index q, Index n) {
  const bool uses_c = e.kind == EstimatorKind::PCA || e.kind == EstimatorKind::BAG || e.kind == EstimatorKind::BAG_PCA;
  if (uses_c && (e.c < 1 || e.c > q)) {
    throw Error(kSimulation, Errc::OutOfRange,
                std::string(to_string(e.kind)) + ": c = " + std::to_string(e.c) + " outside [1, " + std::to_string(q) + "]");
  }
  if ((e.kind == EstimatorKind::BAG || e.kind == EstimatorKind::BAG_PCA) && e.B < 1) {
    throw Error(kSimulation, Errc::OutOfRange, "B must be at least 1");
  }
  if (!(e.alpha >= 0.0)) throw Error(kSimulation, Errc::OutOfRange, "alpha must be nonnegative");
  (void)n;
}

inline RunOutcome run_estimator(const StudyContext& ctx, const EstimatorConfig& e, const Matrix& xs, const Matrix& zs,
                                const Matrix& ys, const Vector& d, double N, const ComponentSelection* selection,
                                std::uint64_t seed) {
  RunOutcome out;
  CalibrationSpec spec;
  spec.singularity = e.singularity;
  Vector g;
  try {
    switch (e.kind) {
      case EstimatorKind::HT:
        g = Vector::Ones(d.size());
        break;
      case EstimatorKind::CAL: {
        const WeightSystem ws = chi2_calibrate(xs, d, Vector::Zero(xs.cols()), N, spec);
        out.rank_deficient = ws.provenance.rank_deficient;
        g = ws.g;
        break;
      }
      case EstimatorKind::PCA: {
        const WeightSystem ws = chi2_calibrate(zs.leftCols(e.c), d, Vector::Zero(e.c), N, spec);
        out.rank_deficient = ws.provenance.rank_deficient;
        g = ws.g;
        break;
      }
      case EstimatorKind::BAG:
      case EstimatorKind::BAG_PCA: {
        CalibrationFrame frame;
        frame.sample_values = e.kind == EstimatorKind::BAG ? xs : zs;
        frame.totals = Vector::Zero(frame.sample_values.cols());
        frame.d = d;
        frame.population_size = N;
        BaggingConfig cfg;
        cfg.B = e.B;
        cfg.c = e.c;
        cfg.alpha = e.alpha;
        cfg.seed = seed;
        cfg.sampler = e.sampler;
        const BaggingResult res = bag_calibrate(frame, *selection, {}, cfg, spec, to_string(e.kind));
        out.rank_deficient = res.weights.provenance.rank_deficient;
        g = res.weights.g;
        break;
      }
    }
  } catch (const Error& err) {
    if (err.code() != Errc::SingularSystem && err.code() != Errc::AllIterationsFailed) throw;
    out.failed = true;
    return out;
  }
  (void)ctx;
  const Vector w = d.cwiseProduct(g);
  out.estimates = ys.transpose() * w;
  out.cv = weight_cv(g);
  out.g_min = g.minCoeff();
  out.g_max = g.maxCoeff();
  out.mean_abs_dev = (g.array() - 1.0).abs().mean();
  return out;
}

}  // namespace detail

/// Monte Carlo study: `runs` SRSWOR samples of size n; every configured
/// estimator is computed on each sample and summarized with RB, RSD, RRMSE,
/// VARrHT per response and a six-number summary of CV(g). HT estimates are
/// always computed as the VARrHT reference. Runs are independent given their
/// derived streams and are reduced in run order, so the report does not
/// depend on the thread count.
inline SimulationReport run_study(const StudyContext& ctx, const std::vector<EstimatorConfig>& estimators,
                                  const StudyOptions& opts) {
  const Population& pop = *ctx.population;
  const Index N = pop.size();
  const Index q = ctx.x.cols();
  if (opts.runs < 2) throw Error(kSimulation, Errc::InsufficientRuns, "need at least two runs (RSD uses I - 1)");
  if (opts.n < 2 || opts.n > N) {
    throw Error(kSimulation, Errc::OutOfRange, "sample size n = " + std::to_string(opts.n) + " outside [2, N]");
  }
  if (estimators.empty()) throw Error(kSimulation, Errc::InvalidConfig, "no estimators configured");
  for (const auto& e : estimators) detail::validate_estimator(e, q, opts.n);
  const Index m = pop.responses.cols();
  for (Index r = 0; r < m; ++r) detail::check_total(pop.true_totals(r));

  // Selections depend only on the population, so they are built once.
  std::vector<std::optional<ComponentSelection>> selections(estimators.size());
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    const auto& cfg = estimators[e];
    if (cfg.kind == EstimatorKind::BAG) {
      selections[e] = component_inclusion_probs(Vector::Ones(q), 0.0, cfg.c, cfg.sampler);
    } else if (cfg.kind == EstimatorKind::BAG_PCA) {
      selections[e] = component_inclusion_probs(ctx.model.eigenvalues, cfg.alpha, cfg.c, cfg.sampler);
    }
  }

  const auto runs = static_cast<std::size_t>(opts.runs);
  std::vector<Vector> ht(runs);
  std::vector<std::vector<detail::RunOutcome>> outcomes(runs, std::vector<detail::RunOutcome>(estimators.size()));
  const Stream root(opts.seed);
  const double Nd = static_cast<double>(N);

  parallel_for(runs, opts.threads, [&](std::size_t i) {
    const Stream run_stream = root.derive("run", i);
    Stream sampling = run_stream.derive("srswor");
    const SamplingDesign design = srswor(N, opts.n, sampling);
    const Matrix xs = detail::gather_rows(ctx.x.values, design.sample_indices);
    const Matrix zs = detail::gather_rows(ctx.comp, design.sample_indices);
    const Matrix ys = detail::gather_rows(pop.responses, design.sample_indices);
    const Vector d = design.sample_weights();
    ht[i] = ys.transpose() * d;
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      const ComponentSelection* sel = selections[e] ? &*selections[e] : nullptr;
      outcomes[i][e] = detail::run_estimator(ctx, estimators[e], xs, zs, ys, d, Nd, sel,
                                             run_stream.derive("estimator", e).key());
    }
  });

  SimulationReport report;
  report.population_size = N;
  report.n = opts.n;
  report.runs = opts.runs;
  report.seed = opts.seed;
  report.responses = pop.response_names;
  report.true_totals = pop.true_totals;

  for (std::size_t e = 0; e < estimators.size(); ++e) {
    EstimatorReport er;
    er.config = estimators[e];
    std::vector<std::vector<double>> est(static_cast<std::size_t>(m));
    std::vector<std::vector<double>> ht_ok(static_cast<std::size_t>(m));
    std::vector<double> cvs;
    double sum_min = 0.0, sum_max = 0.0, sum_dev = 0.0;
    er.g.min_min = std::numeric_limits<double>::infinity();
    er.g.max_max = -std::numeric_limits<double>::infinity();
    if (opts.keep_raw) er.raw_estimates = Matrix::Constant(opts.runs, m, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < runs; ++i) {
      const auto& o = outcomes[i][e];
      if (o.rank_deficient > 0) {
        ++er.rank_deficient_runs;
        er.rank_deficient_calibrations += o.rank_deficient;
      }
      if (o.failed) {
        ++er.failed_runs;
        continue;
      }
      for (Index r = 0; r < m; ++r) {
        est[static_cast<std::size_t>(r)].push_back(o.estimates(r));
        ht_ok[static_cast<std::size_t>(r)].push_back(ht[i](r));
      }
      if (opts.keep_raw) er.raw_estimates.row(static_cast<Index>(i)) = o.estimates.transpose();
      cvs.push_back(o.cv);
      sum_min += o.g_min;
      sum_max += o.g_max;
      sum_dev += o.mean_abs_dev;
      er.g.min_min = std::min(er.g.min_min, o.g_min);
      er.g.max_max = std::max(er.g.max_max, o.g_max);
    }
    const auto ok = static_cast<double>(cvs.size());
    if (cvs.size() >= 2) {
      for (Index r = 0; r < m; ++r) {
        const auto& v = est[static_cast<std::size_t>(r)];
        const double t = pop.true_totals(r);
        er.metrics.push_back({metric_rb(v, t), metric_rsd(v, t), metric_rrmse(v, t),
                              metric_varrht(v, ht_ok[static_cast<std::size_t>(r)])});
      }
    } else {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      er.metrics.assign(static_cast<std::size_t>(m), Metrics{nan, nan, nan, nan});
    }
    er.g.mean_min = sum_min / ok;
    er.g.mean_max = sum_max / ok;
    er.mean_abs_g_dev = sum_dev / ok;
    if (opts.keep_raw) er.raw_cv = Eigen::Map<const Vector>(cvs.data(), static_cast<Index>(cvs.size()));
    er.cv = summarize(std::move(cvs));
    report.estimators.push_back(std::move(er));
  }
  return report;
}

inline SimulationReport run_study(const Population& pop, const std::vector<EstimatorConfig>& estimators,
                                  const StudyOptions& opts) {
  const StudyContext ctx(pop);
  return run_study(ctx, estimators, opts);
}

enum class SweepAxis { c, alpha };

struct SweepRow {
  double value = 0.0;
  EstimatorReport report;
};

struct SweepTable {
  SweepAxis axis = SweepAxis::c;
  std::vector<std::string> responses;
  Vector true_totals;
  std::vector<SweepRow> rows;
};

/// Repeats run_study for one estimator across a grid of c or alpha values.
/// Every grid value uses the same study seed, so all rows see the same
/// samples (common random numbers).
inline SweepTable sweep(const Population& pop, const EstimatorConfig& base, SweepAxis axis,
                        std::span<const double> grid, const StudyOptions& opts) {
  if (grid.empty()) throw Error(kSimulation, Errc::InvalidConfig, "sweep grid is empty");
  for (double v : grid) {
    if (axis == SweepAxis::c && (v < 1.0 || v != std::floor(v))) {
      throw Error(kSimulation, Errc::OutOfRange, "c grid values must be positive integers");
    }
    if (axis == SweepAxis::alpha && !(v >= 0.0 && std::isfinite(v))) {
      throw Error(kSimulation, Errc::OutOfRange, "alpha grid values must be finite and nonnegative");
    }
  }
  const StudyContext ctx(pop);
  SweepTable table;
  table.axis = axis;
  table.responses = pop.response_names;
  table.true_totals = pop.true_totals;
  for (double v : grid) {
    EstimatorConfig cfg = base;
    if (axis == SweepAxis::c) {
      cfg.c = static_cast<Index>(v);
    } else {
      cfg.alpha = v;
    }
    SimulationReport rep = run_study(ctx, {cfg}, opts);
    table.rows.push_back({v, std::move(rep.estimators.front())});
  }
  return table;
}

}  // namespace bagcal
