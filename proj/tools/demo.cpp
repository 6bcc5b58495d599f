// Library walk-through: synthetic population, one SRSWOR sample, bagged
// calibration over principal components, and the resulting total estimates.
#include <cstdio>

#include "bagcal/bagging.hpp"
#include "bagcal/simulation.hpp"

int main() {
  using namespace bagcal;

  const Population pop = generate_population(SyntheticSpec{});
  const DataMatrix x = standardize_columns(pop.aux.values, pop.aux.column_names);
  const PcaModel model = fit_pca(x);
  std::printf("N = %td, q = %td, lambda_1 = %.3f, first 10 PCs explain %.1f%%\n", pop.size(), x.cols(),
              model.eigenvalues(0), 100.0 * explained_variance(model, 10));

  Stream stream(7);
  const SamplingDesign design = srswor(pop.size(), 85, stream);
  Matrix sample_rows(design.sample_size(), x.cols());
  Matrix y(design.sample_size(), pop.responses.cols());
  for (Index i = 0; i < design.sample_size(); ++i) {
    sample_rows.row(i) = pop.aux.values.row(design.sample_indices[static_cast<std::size_t>(i)]);
    y.row(i) = pop.responses.row(design.sample_indices[static_cast<std::size_t>(i)]);
  }

  BaggingConfig cfg;
  cfg.B = 200;
  cfg.c = 10;
  cfg.seed = 11;
  const BaggingResult bag = run_bagging(model, sample_rows, design, cfg, CalibrationSpec{});
  const Vector d = design.sample_weights();
  std::printf("CV(g) = %.4f, g in [%.3f, %.3f]\n", weight_cv(bag.weights.g), bag.weights.g.minCoeff(),
              bag.weights.g.maxCoeff());
  for (Index r = 0; r < y.cols(); ++r) {
    std::printf("%s: true %.2f  HT %.2f  BAG+PCA %.2f\n", pop.response_names[static_cast<std::size_t>(r)].c_str(),
                pop.true_totals(r), d.dot(y.col(r)), bp_total(bag.weights, y.col(r)));
  }
  return 0;
}
