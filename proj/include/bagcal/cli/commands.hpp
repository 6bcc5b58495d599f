#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bagcal/bagging.hpp"
#include "bagcal/calibration.hpp"
#include "bagcal/cli/csv.hpp"
#include "bagcal/pca.hpp"
#include "bagcal/rng.hpp"
#include "bagcal/simulation.hpp"
#include "bagcal/varsampling.hpp"

namespace bagcal::cli {

namespace fs = std::filesystem;

/// Parameters shared by all subcommands; each command reads the fields it
/// needs. Unset optionals fall back to documented defaults, which are
/// echoed in every output's metadata.
struct RunConfig {
  std::string input;
  std::string population;
  std::string totals;
  std::string out_dir;
  std::uint64_t seed = 1;
  std::optional<Index> B;
  std::optional<Index> c;
  std::optional<double> alpha;
  std::optional<Index> n;
  Index runs = 1000;
  std::string estimators;
  std::string exact_vars;
  std::string sampler = "systematic";
  std::string singularity = "pseudo-inverse";
  unsigned threads = 1;
  std::string axis = "c";
  std::string grid;
  std::uint64_t population_seed = SyntheticSpec{}.seed;
  std::optional<Index> population_size;
};

inline constexpr Index kDefaultB = 500;
inline constexpr Index kDefaultStudyB = 100;
inline constexpr double kDefaultAlpha = 0.5;

/// Output directory: --out-dir, else $BAGCAL_OUT_DIR, else the working directory.
inline fs::path resolve_out_dir(const RunConfig& cfg) {
  fs::path dir = cfg.out_dir;
  if (dir.empty()) {
    if (const char* env = std::getenv("BAGCAL_OUT_DIR"); env && *env) dir = env;
  }
  if (dir.empty()) dir = ".";
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(kCli, Errc::IoError, "cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

/// Ordered key=value metadata written as "# key=value" lines at the top of
/// reports and as plain lines in provenance sidecars.
class Metadata {
 public:
  void set(std::string key, std::string value) {
    for (auto& kv : entries_) {
      if (kv.first == key) {
        kv.second = std::move(value);
        return;
      }
    }
    entries_.emplace_back(std::move(key), std::move(value));
  }
  void set(std::string key, double value) { set(std::move(key), format_double(value)); }
  void set(std::string key, Index value) { set(std::move(key), std::to_string(value)); }
  void set(std::string key, std::uint64_t value) { set(std::move(key), std::to_string(value)); }

  void write(std::ostream& out, std::string_view prefix) const {
    for (const auto& [k, v] : entries_) out << prefix << k << '=' << v << '\n';
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

inline std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(kCli, Errc::IoError, "cannot write " + path.string());
  return out;
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = cli::detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline ComponentSampler parse_sampler(const std::string& s) {
  if (s == "systematic") return ComponentSampler::systematic_random_order;
  if (s == "rejective") return ComponentSampler::rejective_poisson;
  throw Error(kCli, Errc::InvalidConfig, "--sampler must be systematic or rejective, got '" + s + "'");
}

inline SingularityPolicy parse_singularity(const std::string& s) {
  if (s == "error") return SingularityPolicy::error;
  if (s == "pseudo-inverse") return SingularityPolicy::pseudo_inverse;
  throw Error(kCli, Errc::InvalidConfig, "--singularity must be error or pseudo-inverse, got '" + s + "'");
}

inline std::vector<EstimatorKind> parse_estimators(const std::string& s, std::vector<EstimatorKind> fallback) {
  const auto names = split_list(s);
  if (names.empty()) return fallback;
  std::vector<EstimatorKind> out;
  for (const auto& name : names) {
    const auto kind = parse_estimator(name);
    if (!kind) throw Error(kCli, Errc::InvalidConfig, "unknown estimator '" + name + "' (CAL, PCA, BAG, BAG+PCA, HT)");
    if (std::find(out.begin(), out.end(), *kind) != out.end()) {
      throw Error(kCli, Errc::InvalidConfig, "estimator '" + name + "' listed twice");
    }
    out.push_back(*kind);
  }
  return out;
}

inline void check_common(const RunConfig& cfg) {
  if (cfg.B && *cfg.B < 1) throw Error(kCli, Errc::InvalidConfig, "--B must be at least 1");
  if (cfg.c && *cfg.c < 1) throw Error(kCli, Errc::InvalidConfig, "--c must be at least 1");
  if (cfg.alpha && !(*cfg.alpha >= 0.0 && std::isfinite(*cfg.alpha))) {
    throw Error(kCli, Errc::InvalidConfig, "--alpha must be finite and nonnegative");
  }
  if (cfg.threads < 1) throw Error(kCli, Errc::InvalidConfig, "--threads must be at least 1");
  parse_sampler(cfg.sampler);
  parse_singularity(cfg.singularity);
}

/// Column index of an auxiliary variable given by name (with or without the
/// x_ prefix) or by 0-based position.
inline Index resolve_variable(const std::vector<std::string>& names, const std::string& token) {
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j] == token || names[j] == "x_" + token) return static_cast<Index>(j);
  }
  if (const auto v = cli::detail::parse_number(token); v && *v >= 0 && *v == std::floor(*v)) {
    const auto j = static_cast<Index>(*v);
    if (j < static_cast<Index>(names.size())) return j;
  }
  throw Error(kCli, Errc::InvalidConfig, "unknown auxiliary variable '" + token + "'");
}

inline std::string join(const std::vector<std::string>& parts, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.push_back(sep);
    out += parts[i];
  }
  return out;
}

}  // namespace detail

/// Auxiliary information for calibrating one sample: sample rows, design
/// weights, population totals and the PCA all estimators share.
struct AuxContext {
  Dataset sample;
  Vector d;
  double population_size = 0.0;
  Vector raw_totals;
  Standardization moments;
  Matrix sample_std;  // n x q, standardized with `moments`
  Vector std_totals;  // totals of the standardized variables
  PcaModel model;
  Matrix sample_scores;
  Vector component_totals;
  std::string source;  // census, population-file, totals-file
  std::optional<DataMatrix> population_std;
  std::vector<Index> sample_positions;  // rows of the sample in the population file
};

inline AuxContext build_aux_context(const RunConfig& cfg) {
  if (cfg.input.empty()) throw Error(kCli, Errc::InvalidConfig, "--input is required");
  if (!cfg.population.empty() && !cfg.totals.empty()) {
    throw Error(kCli, Errc::InvalidConfig, "give either --population or --totals, not both");
  }
  AuxContext ctx;
  ctx.sample = ingest_csv(cfg.input);
  const Dataset& s = ctx.sample;
  const Index n = s.rows();
  const Index q = s.aux.cols();
  if (q < 1) throw Error(kCli, Errc::InvalidConfig, cfg.input + " has no x_ columns");
  if (n < 2) throw Error(kCli, Errc::InvalidConfig, cfg.input + " needs at least two units");
  ctx.d = s.inclusion_probs ? Vector(s.inclusion_probs->cwiseInverse()) : Vector(Vector::Ones(n));

  if (!cfg.population.empty()) {
    ctx.source = "population-file";
    const Dataset pop = ingest_csv(cfg.population);
    Matrix px(pop.rows(), q);
    for (Index j = 0; j < q; ++j) {
      const Index src = detail::resolve_variable(pop.aux.column_names, s.aux.column_names[static_cast<std::size_t>(j)]);
      px.col(j) = pop.aux.values.col(src);
    }
    ctx.population_size = static_cast<double>(pop.rows());
    ctx.population_std = standardize_columns(px, s.aux.column_names);
    std::map<std::string, Index> where;
    for (Index k = 0; k < pop.rows(); ++k) where.emplace(pop.ids[static_cast<std::size_t>(k)], k);
    for (const auto& id : s.ids) {
      const auto it = where.find(id);
      if (it == where.end()) {
        ctx.sample_positions.clear();
        break;
      }
      ctx.sample_positions.push_back(it->second);
    }
  } else if (!cfg.totals.empty()) {
    ctx.source = "totals-file";
    const KnownTotals kt = ingest_totals(cfg.totals);
    ctx.population_size = kt.population_size;
    ctx.raw_totals.resize(q);
    for (Index j = 0; j < q; ++j) {
      ctx.raw_totals(j) = kt.totals(detail::resolve_variable(kt.names, s.aux.column_names[static_cast<std::size_t>(j)]));
    }
  } else {
    if (!s.is_census()) {
      throw Error(kCli, Errc::InvalidConfig, "sample input needs --population or --totals (only census files stand alone)");
    }
    ctx.source = "census";
    ctx.population_size = static_cast<double>(n);
    ctx.population_std = standardize_columns(s.aux.values, s.aux.column_names);
    ctx.sample_positions.resize(static_cast<std::size_t>(n));
    std::iota(ctx.sample_positions.begin(), ctx.sample_positions.end(), Index{0});
  }

  if (ctx.population_std) {
    const DataMatrix& px = *ctx.population_std;
    ctx.moments = {px.col_means, px.col_sds};
    ctx.raw_totals = ctx.population_size * px.col_means;
    ctx.model = fit_pca(px);
    ctx.sample_std = apply_standardization(s.aux.values, ctx.moments.means, ctx.moments.sds);
    ctx.std_totals = px.values.colwise().sum().transpose();
    ctx.component_totals = Vector::Zero(q);
  } else {
    ctx.moments = design_weighted_moments(s.aux.values, ctx.d);
    ctx.model = fit_pca_from_sample(s.aux.values, ctx.d, ctx.moments, s.aux.column_names);
    ctx.sample_std = apply_standardization(s.aux.values, ctx.moments.means, ctx.moments.sds);
    ctx.std_totals = (ctx.raw_totals - ctx.population_size * ctx.moments.means).cwiseQuotient(ctx.moments.sds);
    ctx.component_totals = component_totals(ctx.model, ctx.raw_totals, ctx.population_size);
  }
  ctx.sample_scores = ctx.sample_std * ctx.model.loadings;
  return ctx;
}

/// Resolved bagging parameters plus which of them were defaulted.
struct ResolvedParams {
  Index B = kDefaultB;
  Index c = 1;
  double alpha = kDefaultAlpha;
  std::vector<std::string> defaulted;
};

inline ResolvedParams resolve_params(const RunConfig& cfg, Index n, Index q, Index default_B) {
  ResolvedParams p;
  p.B = cfg.B.value_or(default_B);
  if (!cfg.B) p.defaulted.push_back("B");
  // The default never asks for more components than there are variables.
  p.c = cfg.c.value_or(std::min(default_component_count(n), q));
  if (!cfg.c) p.defaulted.push_back("c");
  p.alpha = cfg.alpha.value_or(kDefaultAlpha);
  if (!cfg.alpha) p.defaulted.push_back("alpha");
  if (p.c > q) {
    throw Error(kCli, Errc::InvalidConfig,
                "c = " + std::to_string(p.c) + " exceeds the " + std::to_string(q) + " auxiliary variables");
  }
  return p;
}

/// Weights of one estimator on the context's sample.
inline WeightSystem compute_weights(const AuxContext& ctx, EstimatorKind kind, const ResolvedParams& p,
                                    const RunConfig& cfg, std::vector<Index> exact) {
  CalibrationSpec spec;
  spec.singularity = detail::parse_singularity(cfg.singularity);
  const ComponentSampler sampler = detail::parse_sampler(cfg.sampler);
  const double N = ctx.population_size;
  const Index q = ctx.sample_std.cols();

  BaggingConfig bc;
  bc.B = p.B;
  bc.c = p.c;
  bc.alpha = p.alpha;
  bc.seed = cfg.seed;
  bc.sampler = sampler;
  bc.threads = cfg.threads;

  auto frame_of = [&](const Matrix& values, const Vector& totals) {
    CalibrationFrame f;
    f.sample_values = values;
    f.totals = totals;
    f.d = ctx.d;
    f.population_size = N;
    return f;
  };

  WeightSystem ws;
  switch (kind) {
    case EstimatorKind::HT:
      ws.d = ctx.d;
      ws.g = Vector::Ones(ctx.d.size());
      ws.w = ctx.d;
      ws.provenance.estimator = "HT";
      break;
    case EstimatorKind::CAL:
      ws = chi2_calibrate(ctx.sample_std, ctx.d, ctx.std_totals, N, spec);
      ws.provenance.c = q;
      break;
    case EstimatorKind::PCA:
      ws = chi2_calibrate(ctx.sample_scores.leftCols(p.c), ctx.d, ctx.component_totals.head(p.c), N, spec);
      ws.provenance.estimator = "PCA";
      break;
    case EstimatorKind::BAG: {
      const ComponentSelection sel = component_inclusion_probs(Vector::Ones(q), 0.0, p.c, sampler);
      ws = bag_calibrate(frame_of(ctx.sample_std, ctx.std_totals), sel, {}, bc, spec, "BAG").weights;
      break;
    }
    case EstimatorKind::BAG_PCA: {
      if (exact.empty()) {
        ws = run_bagging(ctx.model, frame_of(ctx.sample_scores, ctx.component_totals), bc, spec).weights;
        break;
      }
      if (!ctx.population_std || ctx.sample_positions.empty()) {
        throw Error(kCli, Errc::InvalidConfig,
                    "--exact-vars needs population rows containing the sample units (--population or a census file)");
      }
      const Vector probs = ctx.d.cwiseInverse();
      const SamplingDesign design =
          design_from_probs(static_cast<Index>(N), ctx.sample_positions, probs);
      const BaggingResult res = run_bagging_exact(*ctx.population_std, exact, design, bc, spec);
      // Results follow design order (sorted population rows); map back to input order.
      ws = res.weights;
      std::map<Index, Index> pos;
      for (std::size_t i = 0; i < design.sample_indices.size(); ++i) pos[design.sample_indices[i]] = static_cast<Index>(i);
      Vector g(ws.g.size());
      for (std::size_t i = 0; i < ctx.sample_positions.size(); ++i) g(static_cast<Index>(i)) = ws.g(pos[ctx.sample_positions[i]]);
      ws.d = ctx.d;
      ws.g = g;
      ws.w = ws.d.cwiseProduct(g);
      break;
    }
  }
  ws.units.resize(static_cast<std::size_t>(ctx.d.size()));
  std::iota(ws.units.begin(), ws.units.end(), Index{0});
  return ws;
}

inline void describe_params(Metadata& md, const RunConfig& cfg, const ResolvedParams& p) {
  md.set("seed", cfg.seed);
  md.set("stream_scheme", std::string(kStreamScheme));
  md.set("B", p.B);
  md.set("c", p.c);
  md.set("alpha", p.alpha);
  md.set("sampler", cfg.sampler);
  md.set("singularity", cfg.singularity);
  md.set("defaulted", p.defaulted.empty() ? std::string("none") : detail::join(p.defaulted));
}

// ---------------------------------------------------------------------------

/// Eigenvalues, explained variance and loadings of the input's auxiliaries.
inline std::vector<fs::path> cmd_pca(const RunConfig& cfg) {
  detail::check_common(cfg);
  if (cfg.input.empty()) throw Error(kCli, Errc::InvalidConfig, "--input is required");
  const Dataset ds = ingest_csv(cfg.input);
  if (ds.aux.cols() < 1) throw Error(kCli, Errc::InvalidConfig, cfg.input + " has no x_ columns");
  PcaModel model;
  if (ds.is_census()) {
    model = fit_pca(standardize_columns(ds.aux.values, ds.aux.column_names));
  } else {
    const Vector d = ds.inclusion_probs->cwiseInverse();
    model = fit_pca_from_sample(ds.aux.values, d, std::nullopt, ds.aux.column_names);
  }
  const fs::path dir = resolve_out_dir(cfg);
  Metadata md;
  md.set("command", std::string("pca"));
  md.set("rows", ds.rows());
  md.set("columns", ds.aux.cols());
  md.set("pca_source", std::string(model.source == PcaSource::population ? "population" : "design_weighted_sample"));
  md.set("binary_columns", static_cast<Index>(ds.diagnostics.binary_columns.size()));
  md.set("seed", cfg.seed);
  md.set("stream_scheme", std::string(kStreamScheme));

  const fs::path eig_path = dir / "pca_eigenvalues.csv";
  {
    auto out = open_output(eig_path);
    md.write(out, "# ");
    out << "component,eigenvalue,explained,cumulative\n";
    const double total = model.eigenvalues.sum();
    double cum = 0.0;
    for (Index j = 0; j < model.dim(); ++j) {
      cum += model.eigenvalues(j);
      out << "PC" << (j + 1) << ',' << format_double(model.eigenvalues(j)) << ','
          << format_double(total > 0 ? model.eigenvalues(j) / total : 0.0) << ','
          << format_double(j + 1 == model.dim() ? 1.0 : (total > 0 ? cum / total : 0.0)) << '\n';
    }
  }
  const fs::path load_path = dir / "pca_loadings.csv";
  {
    auto out = open_output(load_path);
    md.write(out, "# ");
    out << "variable";
    for (Index j = 0; j < model.dim(); ++j) out << ",PC" << (j + 1);
    out << '\n';
    for (Index i = 0; i < model.loadings.rows(); ++i) {
      out << model.column_names[static_cast<std::size_t>(i)];
      for (Index j = 0; j < model.dim(); ++j) out << ',' << format_double(model.loadings(i, j));
      out << '\n';
    }
  }
  return {eig_path, load_path};
}

/// Weight CSV (unit_id,d,g,w) plus a key=value provenance sidecar.
inline std::vector<fs::path> cmd_weights(const RunConfig& cfg) {
  detail::check_common(cfg);
  const auto kinds = detail::parse_estimators(cfg.estimators, {EstimatorKind::BAG_PCA});
  if (kinds.size() != 1) throw Error(kCli, Errc::InvalidConfig, "weights takes exactly one estimator");
  const AuxContext ctx = build_aux_context(cfg);
  const Index n = ctx.sample.rows();
  const Index q = ctx.sample_std.cols();
  const ResolvedParams p = resolve_params(cfg, n, q, kDefaultB);
  std::vector<Index> exact;
  std::vector<std::string> exact_names;
  for (const auto& tok : detail::split_list(cfg.exact_vars)) {
    exact.push_back(detail::resolve_variable(ctx.sample.aux.column_names, tok));
    exact_names.push_back(ctx.sample.aux.column_names[static_cast<std::size_t>(exact.back())]);
  }
  if (!exact.empty() && kinds.front() != EstimatorKind::BAG_PCA) {
    throw Error(kCli, Errc::InvalidConfig, "--exact-vars applies to BAG+PCA only");
  }
  const WeightSystem ws = compute_weights(ctx, kinds.front(), p, cfg, exact);

  const fs::path dir = resolve_out_dir(cfg);
  Metadata md;
  md.set("command", std::string("weights"));
  md.set("estimator", std::string(to_string(kinds.front())));
  describe_params(md, cfg, p);
  md.set("exact_vars", exact_names.empty() ? std::string("none") : detail::join(exact_names));
  md.set("population_source", ctx.source);
  md.set("pca_source", std::string(ctx.model.source == PcaSource::population ? "population" : "design_weighted_sample"));
  md.set("n", n);
  md.set("N", ctx.population_size);
  md.set("q", q);
  md.set("rank_deficient", ws.provenance.rank_deficient);
  md.set("failed", ws.provenance.failed);

  const fs::path weights_path = dir / "weights.csv";
  {
    auto out = open_output(weights_path);
    Metadata head;
    head.set("seed", cfg.seed);
    head.set("stream_scheme", std::string(kStreamScheme));
    head.write(out, "# ");
    out << "unit_id,d,g,w\n";
    for (Index k = 0; k < n; ++k) {
      out << ctx.sample.ids[static_cast<std::size_t>(k)] << ',' << format_double(ws.d(k)) << ',' << format_double(ws.g(k))
          << ',' << format_double(ws.w(k)) << '\n';
    }
  }
  const fs::path side_path = dir / "weights.provenance.txt";
  {
    auto out = open_output(side_path);
    md.write(out, "");
  }
  return {weights_path, side_path};
}

/// Reads a weight CSV written by cmd_weights.
struct WeightTable {
  std::vector<std::string> ids;
  Vector d, g, w;
};

inline WeightTable ingest_weights(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(kCli, Errc::IoError, "cannot open " + path.string());
  std::string line;
  Index line_no = 0;
  bool header = false;
  std::vector<double> d, g, w;
  WeightTable t;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = cli::detail::split_record(line, line_no);
    if (!header) {
      if (cells != std::vector<std::string>{"unit_id", "d", "g", "w"}) {
        cli::detail::parse_error(line_no, 1, "expected header unit_id,d,g,w");
      }
      header = true;
      continue;
    }
    if (cells.size() != 4) cli::detail::parse_error(line_no, 1, "expected 4 fields");
    t.ids.push_back(cells[0]);
    for (std::size_t j = 1; j < 4; ++j) {
      const auto v = cli::detail::parse_number(cells[j]);
      if (!v) throw Error(kCli, Errc::NonNumericCell, "line " + std::to_string(line_no) + ": '" + cells[j] + "'");
      (j == 1 ? d : j == 2 ? g : w).push_back(*v);
    }
  }
  if (!header) cli::detail::parse_error(1, 1, "missing header row");
  const auto n = static_cast<Index>(t.ids.size());
  t.d = Eigen::Map<const Vector>(d.data(), n);
  t.g = Eigen::Map<const Vector>(g.data(), n);
  t.w = Eigen::Map<const Vector>(w.data(), n);
  return t;
}

/// Estimated totals per estimator per response.
inline std::vector<fs::path> cmd_estimate(const RunConfig& cfg) {
  detail::check_common(cfg);
  const auto kinds = detail::parse_estimators(
      cfg.estimators, {EstimatorKind::CAL, EstimatorKind::PCA, EstimatorKind::BAG, EstimatorKind::BAG_PCA, EstimatorKind::HT});
  const AuxContext ctx = build_aux_context(cfg);
  if (ctx.sample.responses.cols() < 1) throw Error(kCli, Errc::InvalidConfig, cfg.input + " has no y_ columns");
  const Index n = ctx.sample.rows();
  const ResolvedParams p = resolve_params(cfg, n, ctx.sample_std.cols(), kDefaultB);
  std::vector<Index> exact;
  for (const auto& tok : detail::split_list(cfg.exact_vars)) {
    exact.push_back(detail::resolve_variable(ctx.sample.aux.column_names, tok));
  }

  const fs::path dir = resolve_out_dir(cfg);
  const fs::path path = dir / "estimates.csv";
  auto out = open_output(path);
  Metadata md;
  md.set("command", std::string("estimate"));
  describe_params(md, cfg, p);
  md.set("exact_vars", exact.empty() ? std::string("none") : cfg.exact_vars);
  md.set("population_source", ctx.source);
  md.set("n", n);
  md.set("N", ctx.population_size);
  md.write(out, "# ");
  out << "estimator,response,total,weight_cv,rank_deficient,failed\n";
  for (EstimatorKind kind : kinds) {
    const WeightSystem ws = compute_weights(ctx, kind, p, cfg, kind == EstimatorKind::BAG_PCA ? exact : std::vector<Index>{});
    const double cv = weight_cv(ws.g);
    for (Index r = 0; r < ctx.sample.responses.cols(); ++r) {
      out << to_string(kind) << ',' << ctx.sample.response_names[static_cast<std::size_t>(r)] << ','
          << format_double(ws.w.dot(ctx.sample.responses.col(r))) << ',' << format_double(cv) << ','
          << ws.provenance.rank_deficient << ',' << ws.provenance.failed << '\n';
    }
  }
  return {path};
}

/// Study population: --input when given (needs x_ and y_ columns), else the
/// default synthetic population for --population-seed.
inline Population study_population(const RunConfig& cfg, Metadata& md) {
  if (!cfg.input.empty()) {
    const Dataset ds = ingest_csv(cfg.input);
    if (ds.aux.cols() < 1 || ds.responses.cols() < 1) {
      throw Error(kCli, Errc::InvalidConfig, cfg.input + " needs x_ and y_ columns");
    }
    Population pop;
    pop.aux = ds.aux;
    pop.ids = ds.ids;
    pop.response_names = ds.response_names;
    pop.responses = ds.responses;
    pop.true_totals = ds.responses.colwise().sum().transpose();
    md.set("population", std::string("file:") + fs::path(cfg.input).filename().string());
    return pop;
  }
  SyntheticSpec spec;
  spec.seed = cfg.population_seed;
  if (cfg.population_size) spec.N = *cfg.population_size;
  md.set("population", std::string("synthetic"));
  md.set("population_seed", spec.seed);
  return generate_population(spec);
}

inline std::vector<EstimatorConfig> study_estimators(const RunConfig& cfg, const ResolvedParams& p,
                                                     const std::vector<EstimatorKind>& kinds) {
  std::vector<EstimatorConfig> out;
  for (EstimatorKind kind : kinds) {
    EstimatorConfig e;
    e.kind = kind;
    e.c = p.c;
    e.B = p.B;
    e.alpha = kind == EstimatorKind::BAG ? 0.0 : p.alpha;
    e.sampler = detail::parse_sampler(cfg.sampler);
    e.singularity = kind == EstimatorKind::CAL ? SingularityPolicy::pseudo_inverse : detail::parse_singularity(cfg.singularity);
    out.push_back(e);
  }
  return out;
}

inline Index study_sample_size(const RunConfig& cfg, Index N, std::vector<std::string>& defaulted) {
  if (cfg.n) return *cfg.n;
  defaulted.push_back("n");
  return std::max<Index>(2, static_cast<Index>(std::llround(0.2 * static_cast<double>(N))));
}

/// Monte Carlo report: simulation_metrics.csv and simulation_weights.csv.
inline std::vector<fs::path> cmd_simulate(const RunConfig& cfg) {
  detail::check_common(cfg);
  const auto kinds = detail::parse_estimators(
      cfg.estimators, {EstimatorKind::CAL, EstimatorKind::PCA, EstimatorKind::BAG, EstimatorKind::BAG_PCA, EstimatorKind::HT});
  if (cfg.runs < 2) throw Error(kCli, Errc::InvalidConfig, "--runs must be at least 2");
  Metadata md;
  md.set("command", std::string("simulate"));
  const Population pop = study_population(cfg, md);
  std::vector<std::string> defaulted;
  const Index n = study_sample_size(cfg, pop.size(), defaulted);
  if (n < 2 || n > pop.size()) throw Error(kCli, Errc::InvalidConfig, "--n must lie in [2, N]");
  ResolvedParams p = resolve_params(cfg, n, pop.aux.cols(), kDefaultStudyB);
  p.defaulted.insert(p.defaulted.end(), defaulted.begin(), defaulted.end());

  StudyOptions opts;
  opts.n = n;
  opts.runs = cfg.runs;
  opts.seed = cfg.seed;
  opts.threads = cfg.threads;
  const SimulationReport rep = run_study(pop, study_estimators(cfg, p, kinds), opts);

  md.set("N", pop.size());
  md.set("q", pop.aux.cols());
  md.set("n", n);
  md.set("runs", cfg.runs);
  describe_params(md, cfg, p);
  md.set("cal_singularity", std::string("pseudo-inverse"));
  for (Index r = 0; r < static_cast<Index>(rep.responses.size()); ++r) {
    md.set("true_total." + rep.responses[static_cast<std::size_t>(r)], rep.true_totals(r));
  }

  const fs::path dir = resolve_out_dir(cfg);
  const fs::path metrics_path = dir / "simulation_metrics.csv";
  {
    auto out = open_output(metrics_path);
    md.write(out, "# ");
    out << "estimator,response,RB,RSD,RRMSE,VARrHT\n";
    for (const auto& e : rep.estimators) {
      for (std::size_t r = 0; r < rep.responses.size(); ++r) {
        const Metrics& m = e.metrics[r];
        out << to_string(e.config.kind) << ',' << rep.responses[r] << ',' << format_double(m.rb) << ','
            << format_double(m.rsd) << ',' << format_double(m.rrmse) << ',' << format_double(m.varrht) << '\n';
      }
    }
  }
  const fs::path weights_path = dir / "simulation_weights.csv";
  {
    auto out = open_output(weights_path);
    md.write(out, "# ");
    out << "estimator,cv_min,cv_q1,cv_median,cv_mean,cv_q3,cv_max,g_mean_min,g_mean_max,g_min,g_max,"
           "failed_runs,rank_deficient_runs,rank_deficient_calibrations\n";
    for (const auto& e : rep.estimators) {
      out << to_string(e.config.kind) << ',' << format_double(e.cv.min) << ',' << format_double(e.cv.q1) << ','
          << format_double(e.cv.median) << ',' << format_double(e.cv.mean) << ',' << format_double(e.cv.q3) << ','
          << format_double(e.cv.max) << ',' << format_double(e.g.mean_min) << ',' << format_double(e.g.mean_max) << ','
          << format_double(e.g.min_min) << ',' << format_double(e.g.max_max) << ',' << e.failed_runs << ','
          << e.rank_deficient_runs << ',' << e.rank_deficient_calibrations << '\n';
    }
  }
  return {metrics_path, weights_path};
}

/// Sweep of one estimator over a c or alpha grid: sweep_metrics.csv and
/// sweep_weights.csv.
inline std::vector<fs::path> cmd_sweep(const RunConfig& cfg) {
  detail::check_common(cfg);
  const auto kinds = detail::parse_estimators(cfg.estimators, {EstimatorKind::BAG_PCA});
  if (kinds.size() != 1) throw Error(kCli, Errc::InvalidConfig, "sweep takes exactly one estimator");
  if (cfg.runs < 2) throw Error(kCli, Errc::InvalidConfig, "--runs must be at least 2");
  SweepAxis axis;
  if (cfg.axis == "c") {
    axis = SweepAxis::c;
  } else if (cfg.axis == "alpha") {
    axis = SweepAxis::alpha;
  } else {
    throw Error(kCli, Errc::InvalidConfig, "--axis must be c or alpha");
  }
  std::vector<double> grid;
  for (const auto& tok : detail::split_list(cfg.grid)) {
    const auto v = cli::detail::parse_number(tok);
    if (!v) throw Error(kCli, Errc::InvalidConfig, "grid value '" + tok + "' is not a number");
    grid.push_back(*v);
  }
  if (grid.empty()) throw Error(kCli, Errc::InvalidConfig, "--grid is required");

  Metadata md;
  md.set("command", std::string("sweep"));
  const Population pop = study_population(cfg, md);
  std::vector<std::string> defaulted;
  const Index n = study_sample_size(cfg, pop.size(), defaulted);
  if (n < 2 || n > pop.size()) throw Error(kCli, Errc::InvalidConfig, "--n must lie in [2, N]");
  ResolvedParams p = resolve_params(cfg, n, pop.aux.cols(), kDefaultStudyB);
  p.defaulted.insert(p.defaulted.end(), defaulted.begin(), defaulted.end());
  for (double v : grid) {
    if (axis == SweepAxis::c && v > static_cast<double>(pop.aux.cols())) {
      throw Error(kCli, Errc::InvalidConfig, "grid value c = " + format_double(v) + " exceeds q");
    }
  }

  StudyOptions opts;
  opts.n = n;
  opts.runs = cfg.runs;
  opts.seed = cfg.seed;
  opts.threads = cfg.threads;
  const SweepTable table = sweep(pop, study_estimators(cfg, p, kinds).front(), axis, grid, opts);

  md.set("estimator", std::string(to_string(kinds.front())));
  md.set("axis", cfg.axis);
  md.set("N", pop.size());
  md.set("n", n);
  md.set("runs", cfg.runs);
  describe_params(md, cfg, p);

  const fs::path dir = resolve_out_dir(cfg);
  const fs::path metrics_path = dir / "sweep_metrics.csv";
  {
    auto out = open_output(metrics_path);
    md.write(out, "# ");
    out << cfg.axis << ",response,RB,RSD,RRMSE,VARrHT\n";
    for (const auto& row : table.rows) {
      for (std::size_t r = 0; r < table.responses.size(); ++r) {
        const Metrics& m = row.report.metrics[r];
        out << format_double(row.value) << ',' << table.responses[r] << ',' << format_double(m.rb) << ','
            << format_double(m.rsd) << ',' << format_double(m.rrmse) << ',' << format_double(m.varrht) << '\n';
      }
    }
  }
  const fs::path weights_path = dir / "sweep_weights.csv";
  {
    auto out = open_output(weights_path);
    md.write(out, "# ");
    out << cfg.axis << ",cv_mean,g_mean_min,g_mean_max,g_spread,g_min,g_max,mean_abs_g_dev,failed_runs\n";
    for (const auto& row : table.rows) {
      const auto& e = row.report;
      out << format_double(row.value) << ',' << format_double(e.cv.mean) << ',' << format_double(e.g.mean_min) << ','
          << format_double(e.g.mean_max) << ',' << format_double(e.g.mean_spread()) << ','
          << format_double(e.g.min_min) << ',' << format_double(e.g.max_max) << ','
          << format_double(e.mean_abs_g_dev) << ',' << e.failed_runs << '\n';
    }
  }
  return {metrics_path, weights_path};
}

/// Writes a synthetic population (population.csv) and its R^2 report.
inline std::vector<fs::path> cmd_generate(const RunConfig& cfg) {
  detail::check_common(cfg);
  SyntheticSpec spec;
  spec.seed = cfg.population_seed;
  if (cfg.population_size) spec.N = *cfg.population_size;
  const Population pop = generate_population(spec);
  const fs::path dir = resolve_out_dir(cfg);
  Metadata md;
  md.set("command", std::string("generate"));
  md.set("population_seed", spec.seed);
  md.set("stream_scheme", std::string(kStreamScheme));
  md.set("N", spec.N);
  md.set("q_binary", spec.q_binary);
  md.set("q_continuous", spec.q_continuous);

  const fs::path pop_path = dir / "population.csv";
  {
    auto out = open_output(pop_path);
    md.write(out, "# ");
    out << "unit_id";
    for (const auto& name : pop.aux.column_names) out << ',' << name;
    for (const auto& name : pop.response_names) out << ',' << (name.rfind("y_", 0) == 0 ? name : "y_" + name);
    out << '\n';
    for (Index k = 0; k < pop.size(); ++k) {
      out << pop.ids[static_cast<std::size_t>(k)];
      for (Index j = 0; j < pop.aux.cols(); ++j) out << ',' << format_double(pop.aux.values(k, j));
      for (Index r = 0; r < pop.responses.cols(); ++r) out << ',' << format_double(pop.responses(k, r));
      out << '\n';
    }
  }
  const fs::path r2_path = dir / "population_r2.csv";
  {
    auto out = open_output(r2_path);
    md.write(out, "# ");
    out << "response,r2_full,r2_top" << spec.r2_top_count << ",true_total\n";
    for (std::size_t r = 0; r < pop.r2.size(); ++r) {
      out << pop.r2[r].response << ',' << format_double(pop.r2[r].full) << ',' << format_double(pop.r2[r].top) << ','
          << format_double(pop.true_totals(static_cast<Index>(r))) << '\n';
    }
  }
  return {pop_path, r2_path};
}

}  // namespace bagcal::cli
