#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bagcal/calibration.hpp"
#include "bagcal/parallel.hpp"
#include "bagcal/pca.hpp"
#include "bagcal/rng.hpp"
#include "bagcal/varsampling.hpp"

namespace bagcal {

inline constexpr std::string_view kBagcal = "bagcal";

/// Bagged calibration settings. `c` defaults to round(sqrt(n)).
struct BaggingConfig {
  Index B = 500;
  std::optional<Index> c;
  double alpha = 0.5;
  std::uint64_t seed = 0;
  std::vector<Index> exact_vars;
  bool retain_iterations = false;
  ComponentSampler sampler = ComponentSampler::systematic_random_order;
  unsigned threads = 1;
};

inline Index default_component_count(Index n) {
  return std::max<Index>(1, static_cast<Index>(std::llround(std::sqrt(static_cast<double>(n)))));
}

/// Candidate calibration variables observed on the sample, with their known
/// population totals. Columns are principal components (Algorithm 1), raw
/// standardized variables (plain bagging), or important variables followed
/// by residual components (exact mode).
struct CalibrationFrame {
  Matrix sample_values;  // n x m
  Vector totals;         // m
  Vector d;              // n design weights
  double population_size = 0.0;
  std::vector<Index> units;
  std::vector<std::string> names;

  Index n() const noexcept { return sample_values.rows(); }
  Index m() const noexcept { return sample_values.cols(); }
};

struct IterationRecord {
  Index b = 0;
  std::vector<Index> selected;  // frame columns, forced ones included
  Vector g;
  bool rank_deficient = false;
  bool failed = false;
};

struct BaggingResult {
  WeightSystem weights;
  std::vector<IterationRecord> iterations;  // empty unless retained
};

namespace detail {

inline Matrix select_columns(const Matrix& values, const std::vector<Index>& cols) {
  Matrix out(values.rows(), static_cast<Index>(cols.size()) + 1);
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = values.col(cols[j]);
  out.col(static_cast<Index>(cols.size())).setOnes();
  return out;
}

inline Vector select_totals(const Vector& totals, const std::vector<Index>& cols, double population_size) {
  Vector out(static_cast<Index>(cols.size()) + 1);
  for (std::size_t j = 0; j < cols.size(); ++j) out(static_cast<Index>(j)) = totals(cols[j]);
  out(static_cast<Index>(cols.size())) = population_size;
  return out;
}

inline void check_frame(const CalibrationFrame& frame) {
  if (frame.d.size() != frame.n() || frame.totals.size() != frame.m()) {
    throw Error(kBagcal, Errc::DimensionMismatch, "calibration frame has inconsistent dimensions");
  }
  if (!frame.units.empty() && static_cast<Index>(frame.units.size()) != frame.n()) {
    throw Error(kBagcal, Errc::DimensionMismatch, "calibration frame unit ids do not match rows");
  }
}

}  // namespace detail

/// Core bagging loop shared by every bagged estimator. Each iteration
/// calibrates on the forced columns, a draw from `selection`, and an
/// intercept with total N; the final g is the plain average over successful
/// iterations, so w = d * g equals the average of the per-iteration weights.
inline BaggingResult bag_calibrate(const CalibrationFrame& frame, const ComponentSelection& selection,
                                   std::span<const Index> forced, const BaggingConfig& cfg,
                                   const CalibrationSpec& spec, std::string_view estimator = "BAG+PCA") {
  detail::check_frame(frame);
  if (cfg.B < 1) throw Error(kBagcal, Errc::InvalidConfig, "B must be at least 1");
  if (selection.probs.size() != frame.m()) {
    throw Error(kBagcal, Errc::DimensionMismatch, "selection does not cover the frame columns");
  }
  if (!spec.include_intercept) {
    throw Error(kBagcal, Errc::InvalidConfig, "bagged calibration always includes the intercept");
  }
  for (Index j : forced) {
    if (j < 0 || j >= frame.m()) throw Error(kBagcal, Errc::OutOfRange, "forced column out of range");
  }

  const auto count = static_cast<std::size_t>(cfg.B);
  std::vector<IterationRecord> records(count);
  const Stream root(cfg.seed);
  CalibrationSpec inner = spec;
  inner.include_intercept = false;  // the intercept column is assembled per iteration

  parallel_for(count, cfg.threads, [&](std::size_t i) {
    IterationRecord& rec = records[i];
    rec.b = static_cast<Index>(i);
    Stream stream = root.derive("bag", static_cast<std::uint64_t>(i));
    std::vector<Index> drawn = sample_components(selection, stream);
    rec.selected.assign(forced.begin(), forced.end());
    rec.selected.insert(rec.selected.end(), drawn.begin(), drawn.end());

    const Matrix z = detail::select_columns(frame.sample_values, rec.selected);
    const Vector t = detail::select_totals(frame.totals, rec.selected, frame.population_size);
    try {
      Chi2Solution sol = solve_chi2(z, frame.d, t, inner);
      rec.g = std::move(sol.g);
      rec.rank_deficient = sol.rank_deficient;
    } catch (const Error& e) {
      if (e.code() != Errc::SingularSystem) throw;
      rec.failed = true;
    }
  });

  WeightSystem ws;
  ws.d = frame.d;
  ws.g = Vector::Zero(frame.n());
  Index ok = 0;
  for (const auto& rec : records) {
    if (rec.failed) {
      ++ws.provenance.failed;
      continue;
    }
    if (rec.rank_deficient) ++ws.provenance.rank_deficient;
    ws.g += rec.g;
    ++ok;
  }
  if (ok == 0) {
    throw Error(kBagcal, Errc::AllIterationsFailed, "all " + std::to_string(cfg.B) + " calibrations were singular");
  }
  ws.g /= static_cast<double>(ok);
  ws.w = ws.d.cwiseProduct(ws.g);
  if (frame.units.empty()) {
    ws.units.resize(static_cast<std::size_t>(frame.n()));
    std::iota(ws.units.begin(), ws.units.end(), Index{0});
  } else {
    ws.units = frame.units;
  }
  ws.provenance.estimator = std::string(estimator);
  ws.provenance.B = cfg.B;
  ws.provenance.c = selection.c + static_cast<Index>(forced.size());
  ws.provenance.alpha = selection.alpha;
  ws.provenance.seed = cfg.seed;
  for (Index j : forced) {
    ws.provenance.calibrated_exactly_on.push_back(
        frame.names.empty() ? "col" + std::to_string(j) : frame.names[static_cast<std::size_t>(j)]);
  }

  BaggingResult result;
  result.weights = std::move(ws);
  if (cfg.retain_iterations) result.iterations = std::move(records);
  return result;
}

/// Frame of principal-component scores for the sampled units. Components of
/// a population-fitted model total exactly zero; a sample-fitted model needs
/// the totals supplied (see component_totals).
inline CalibrationFrame component_frame(const PcaModel& model, const Matrix& sample_rows, const SamplingDesign& design,
                                        const std::optional<Vector>& totals = std::nullopt) {
  if (sample_rows.rows() != design.sample_size()) {
    throw Error(kBagcal, Errc::DimensionMismatch, "sample rows do not match the design's sample size");
  }
  CalibrationFrame frame;
  frame.sample_values = scores(model, sample_rows);
  if (totals) {
    if (totals->size() != model.dim()) throw Error(kBagcal, Errc::DimensionMismatch, "component totals length");
    frame.totals = *totals;
  } else if (model.source == PcaSource::population) {
    frame.totals = Vector::Zero(model.dim());
  } else {
    throw Error(kBagcal, Errc::InvalidConfig, "sample-fitted PCA requires component totals");
  }
  frame.d = design.sample_weights();
  frame.population_size = static_cast<double>(design.population_size);
  frame.units = design.sample_indices;
  for (Index j = 0; j < model.dim(); ++j) frame.names.push_back("PC" + std::to_string(j + 1));
  return frame;
}

/// Bagged calibration over randomly sampled principal components, selected
/// with probabilities proportional to lambda_j^alpha.
inline BaggingResult run_bagging(const PcaModel& model, const CalibrationFrame& frame, const BaggingConfig& cfg,
                                 const CalibrationSpec& spec) {
  if (frame.m() != model.dim()) {
    throw Error(kBagcal, Errc::DimensionMismatch, "frame columns do not match the PCA model");
  }
  const Index c = cfg.c.value_or(default_component_count(frame.n()));
  if (c < 1 || c > model.dim()) {
    throw Error(kBagcal, Errc::OutOfRange, "c = " + std::to_string(c) + " outside [1, q]");
  }
  const ComponentSelection sel = component_inclusion_probs(model.eigenvalues, cfg.alpha, c, cfg.sampler);
  return bag_calibrate(frame, sel, {}, cfg, spec, "BAG+PCA");
}

inline BaggingResult run_bagging(const PcaModel& model, const Matrix& sample_rows, const SamplingDesign& design,
                                 const BaggingConfig& cfg, const CalibrationSpec& spec) {
  return run_bagging(model, component_frame(model, sample_rows, design), cfg, spec);
}

/// Frame for exact mode: important standardized variables first, residual
/// components after. Returned alongside the residual PCA it was built from.
struct ExactFrame {
  ResidualPca residual;
  CalibrationFrame frame;
};

inline ExactFrame exact_frame(const DataMatrix& x, std::span<const Index> important, const SamplingDesign& design) {
  ExactFrame out;
  out.residual = residual_pca(x, important);
  const Index n = design.sample_size();
  const Index q = x.cols();
  const auto c1 = static_cast<Index>(important.size());
  Matrix xs(n, q);
  for (Index i = 0; i < n; ++i) xs.row(i) = x.values.row(design.sample_indices[static_cast<std::size_t>(i)]);

  CalibrationFrame& frame = out.frame;
  frame.sample_values.resize(n, q);
  frame.totals.resize(q);
  for (Index j = 0; j < c1; ++j) {
    const Index src = important[static_cast<std::size_t>(j)];
    frame.sample_values.col(j) = xs.col(src);
    frame.totals(j) = x.values.col(src).sum();
    frame.names.push_back(x.column_names.empty() ? "x" + std::to_string(src) : x.column_names[static_cast<std::size_t>(src)]);
  }
  frame.sample_values.rightCols(q - c1) = out.residual.residual_scores(xs);
  frame.totals.tail(q - c1).setZero();
  for (Index j = 0; j < q - c1; ++j) frame.names.push_back("RPC" + std::to_string(j + 1));
  frame.d = design.sample_weights();
  frame.population_size = static_cast<double>(design.population_size);
  frame.units = design.sample_indices;
  return out;
}

/// Bagged calibration that is exact on the important variables: every
/// iteration calibrates on all of them plus c - c1 residual components.
inline BaggingResult run_bagging_exact(const DataMatrix& x, std::span<const Index> important,
                                       const SamplingDesign& design, const BaggingConfig& cfg,
                                       const CalibrationSpec& spec) {
  const auto c1 = static_cast<Index>(important.size());
  const Index c = cfg.c.value_or(default_component_count(design.sample_size()));
  if (!(c1 < c && c < x.cols())) {
    throw Error(kBagcal, Errc::OutOfRange,
                "exact mode needs c1 < c < q, got c1 = " + std::to_string(c1) + ", c = " + std::to_string(c));
  }
  const ExactFrame ef = exact_frame(x, important, design);
  const ComponentSelection inner = component_inclusion_probs(ef.residual.model.eigenvalues, cfg.alpha, c - c1, cfg.sampler);

  ComponentSelection sel = inner;
  sel.probs = Vector::Zero(x.cols());
  sel.probs.tail(inner.probs.size()) = inner.probs;
  if (inner.working_probs.size() != 0) {
    sel.working_probs = Vector::Zero(x.cols());
    sel.working_probs.tail(inner.working_probs.size()) = inner.working_probs;
  }
  std::vector<Index> forced(static_cast<std::size_t>(c1));
  std::iota(forced.begin(), forced.end(), Index{0});
  return bag_calibrate(ef.frame, sel, forced, cfg, spec, "BAG+PCA(exact)");
}

inline BaggingResult run_bagging_exact(const DataMatrix& x, const SamplingDesign& design, const BaggingConfig& cfg,
                                       const CalibrationSpec& spec) {
  return run_bagging_exact(x, cfg.exact_vars, design, cfg, spec);
}

/// sum_S w_k y_k.
inline double bp_total(const WeightSystem& ws, const Vector& y_sample) {
  if (y_sample.size() != ws.w.size()) {
    throw Error(kBagcal, Errc::DimensionMismatch, "responses do not match the weight system");
  }
  return ws.w.dot(y_sample);
}

/// Regression coefficients of one iteration: T^+ sum_S d_k q_k z_k y_k over
/// the iteration's selected columns plus intercept (last coefficient).
inline Vector iteration_coefficients(const IterationRecord& rec, const CalibrationFrame& frame, const Vector& y_sample,
                                     const CalibrationSpec& spec = {}) {
  const Matrix z = detail::select_columns(frame.sample_values, rec.selected);
  const Vector dq = spec.unit_scale.size() == 0 ? frame.d : Vector(frame.d.cwiseProduct(spec.unit_scale));
  const Matrix t_matrix = z.transpose() * dq.asDiagonal() * z;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod;
  cod.setThreshold(spec.pivot_tolerance);
  cod.compute(t_matrix);
  return cod.solve(z.transpose() * dq.cwiseProduct(y_sample));
}

struct ModelAssistedTotal {
  Vector sample_predictions;                    // m-hat(z_k), k in S
  std::optional<Vector> population_predictions; // m-hat(z_k), k in U, when rows were supplied
  double prediction_total = 0.0;                // sum_U m-hat(z_k)
  double residual_correction = 0.0;             // sum_S d_k (y_k - m-hat(z_k))
  double total = 0.0;
};

/// Rewrites the bagged estimator as prediction total plus a design-weighted
/// residual correction. Without population rows the prediction total uses
/// the frame's known totals (sum_U z_k^(b)^T B_b = t_z^(b)^T B_b).
inline ModelAssistedTotal model_assisted_decomposition(const BaggingResult& result, const CalibrationFrame& frame,
                                                       const Vector& y_sample, const CalibrationSpec& spec = {},
                                                       const Matrix* population_values = nullptr) {
  if (result.iterations.empty()) {
    throw Error(kBagcal, Errc::InvalidConfig, "model-assisted decomposition needs retained iterations");
  }
  if (y_sample.size() != frame.n()) throw Error(kBagcal, Errc::DimensionMismatch, "responses do not match frame");
  if (population_values && population_values->cols() != frame.m()) {
    throw Error(kBagcal, Errc::DimensionMismatch, "population rows do not match frame columns");
  }

  ModelAssistedTotal out;
  out.sample_predictions = Vector::Zero(frame.n());
  Vector pop_pred;
  if (population_values) pop_pred = Vector::Zero(population_values->rows());
  Index used = 0;
  for (const auto& rec : result.iterations) {
    if (rec.failed) continue;
    const Vector coef = iteration_coefficients(rec, frame, y_sample, spec);
    out.sample_predictions += detail::select_columns(frame.sample_values, rec.selected) * coef;
    if (population_values) {
      pop_pred += detail::select_columns(*population_values, rec.selected) * coef;
    } else {
      out.prediction_total += detail::select_totals(frame.totals, rec.selected, frame.population_size).dot(coef);
    }
    ++used;
  }
  if (used == 0) throw Error(kBagcal, Errc::AllIterationsFailed, "no successful iterations to decompose");
  const double inv = 1.0 / static_cast<double>(used);
  out.sample_predictions *= inv;
  if (population_values) {
    pop_pred *= inv;
    out.prediction_total = pop_pred.sum();
    out.population_predictions = std::move(pop_pred);
  } else {
    out.prediction_total *= inv;
  }
  out.residual_correction = frame.d.dot(y_sample - out.sample_predictions);
  out.total = out.prediction_total + out.residual_correction;
  return out;
}

}  // namespace bagcal
