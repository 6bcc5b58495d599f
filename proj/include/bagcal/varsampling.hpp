#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "bagcal/error.hpp"
#include "bagcal/matrixops.hpp"
#include "bagcal/rng.hpp"

namespace bagcal {

inline constexpr std::string_view kVarSampling = "varsampling";

/// Unit-level design: who was sampled and with what inclusion probability.
/// inclusion_probs and design_weights cover the whole population.
struct SamplingDesign {
  Index population_size = 0;
  std::vector<Index> sample_indices;  // sorted, distinct
  Vector inclusion_probs;
  Vector design_weights;

  Index sample_size() const noexcept { return static_cast<Index>(sample_indices.size()); }

  /// Design weights of the sampled units, in sample_indices order.
  Vector sample_weights() const {
    Vector d(sample_size());
    for (Index i = 0; i < sample_size(); ++i) d(i) = design_weights(sample_indices[static_cast<std::size_t>(i)]);
    return d;
  }
};

enum class ComponentSampler { systematic_random_order, rejective_poisson };

/// Fixed-size unequal-probability selection over component indices.
struct ComponentSelection {
  double alpha = 0.5;
  Index c = 0;
  Vector probs;
  ComponentSampler sampler = ComponentSampler::systematic_random_order;
  Vector working_probs;  // conditional-Poisson parameters, rejective sampler only
};

namespace detail {

// Leave-one-out elementary symmetric polynomials give the exact first-order
// inclusion probabilities of conditional Poisson sampling of size n with
// odds w: pi_k = w_k e_{n-1}(w without k) / e_n(w).
inline Vector conditional_poisson_probs(const Vector& odds, Index n) {
  const Index m = odds.size();
  auto esp = [&](Index skip) {
    std::vector<double> e(static_cast<std::size_t>(n + 1), 0.0);
    e[0] = 1.0;
    for (Index k = 0; k < m; ++k) {
      if (k == skip) continue;
      for (Index j = n; j >= 1; --j) e[static_cast<std::size_t>(j)] += odds(k) * e[static_cast<std::size_t>(j - 1)];
    }
    return e;
  };
  const double full = esp(-1)[static_cast<std::size_t>(n)];
  Vector pi(m);
  for (Index k = 0; k < m; ++k) pi(k) = odds(k) * esp(k)[static_cast<std::size_t>(n - 1)] / full;
  return pi;
}

// Newton-style fixed point for the working probabilities whose conditional
// Poisson design reproduces `target` (restricted to 0 < target < 1).
inline Vector working_probs_for(const Vector& target, Index n) {
  Vector work = target;
  if (n == 0 || target.size() == 0) return work;
  for (int iter = 0; iter < 2000; ++iter) {
    const Vector odds = work.array() / (1.0 - work.array());
    const Vector pi = conditional_poisson_probs(odds, n);
    const Vector diff = target - pi;
    if (diff.cwiseAbs().maxCoeff() < 1e-13) return work;
    work = (work + diff).cwiseMax(1e-12).cwiseMin(1.0 - 1e-12);
  }
  throw Error(kVarSampling, Errc::NoConvergence, "working probabilities for conditional Poisson did not converge");
}

}  // namespace detail

/// Inclusion probabilities c * lambda_j^alpha / sum(lambda^alpha), capped at
/// one with the remaining budget redistributed over uncapped components.
/// With alpha > 0, zero eigenvalues are ineligible (probability 0); with
/// alpha = 0 every component gets c / q.
inline ComponentSelection component_inclusion_probs(const Vector& eigenvalues, double alpha, Index c,
                                                    ComponentSampler sampler = ComponentSampler::systematic_random_order) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw Error(kVarSampling, Errc::OutOfRange, "alpha must be a finite nonnegative number");
  }
  const Index q = eigenvalues.size();
  Vector size(q);
  Index eligible = 0;
  for (Index j = 0; j < q; ++j) {
    if (eigenvalues(j) < 0.0) throw Error(kVarSampling, Errc::OutOfRange, "eigenvalues must be nonnegative");
    size(j) = alpha == 0.0 ? 1.0 : std::pow(eigenvalues(j), alpha);
    if (size(j) > 0.0) ++eligible;
  }
  if (c < 1 || c > eligible) {
    throw Error(kVarSampling, Errc::InfeasibleSize,
                "c = " + std::to_string(c) + " but only " + std::to_string(eligible) + " eligible components");
  }

  ComponentSelection sel;
  sel.alpha = alpha;
  sel.c = c;
  sel.sampler = sampler;
  sel.probs = Vector::Zero(q);
  std::vector<bool> capped(static_cast<std::size_t>(q), false);
  Index n_capped = 0;
  for (;;) {
    double mass = 0.0;
    for (Index j = 0; j < q; ++j) {
      if (!capped[static_cast<std::size_t>(j)]) mass += size(j);
    }
    const double budget = static_cast<double>(c - n_capped);
    bool changed = false;
    for (Index j = 0; j < q; ++j) {
      if (capped[static_cast<std::size_t>(j)]) continue;
      const double p = budget * size(j) / mass;
      if (p >= 1.0) {
        capped[static_cast<std::size_t>(j)] = true;
        ++n_capped;
        changed = true;
      }
      sel.probs(j) = p;
    }
    if (!changed) break;
  }
  for (Index j = 0; j < q; ++j) {
    if (capped[static_cast<std::size_t>(j)]) sel.probs(j) = 1.0;
  }

  if (sampler == ComponentSampler::rejective_poisson) {
    std::vector<Index> free;
    for (Index j = 0; j < q; ++j) {
      if (sel.probs(j) > 0.0 && sel.probs(j) < 1.0) free.push_back(j);
    }
    Vector target(static_cast<Index>(free.size()));
    for (std::size_t i = 0; i < free.size(); ++i) target(static_cast<Index>(i)) = sel.probs(free[i]);
    const Vector work = detail::working_probs_for(target, c - n_capped);
    sel.working_probs = sel.probs;
    for (std::size_t i = 0; i < free.size(); ++i) sel.working_probs(free[i]) = work(static_cast<Index>(i));
  }
  return sel;
}

/// Draws exactly sel.c distinct component indices, returned sorted.
///
/// The default sampler shuffles the indices, then runs systematic sampling on
/// the cumulated probabilities in shuffled order; this hits the target
/// first-order inclusion probabilities exactly with fixed size. The rejective
/// sampler draws independent Bernoulli(working_probs) until the size is c,
/// which yields the maximum-entropy (conditional Poisson) design.
inline std::vector<Index> sample_components(const ComponentSelection& sel, Stream& stream) {
  const Index q = sel.probs.size();
  std::vector<Index> chosen;
  std::vector<Index> uncertain;
  for (Index j = 0; j < q; ++j) {
    if (sel.probs(j) >= 1.0) {
      chosen.push_back(j);
    } else if (sel.probs(j) > 0.0) {
      uncertain.push_back(j);
    }
  }
  const Index remaining = sel.c - static_cast<Index>(chosen.size());
  if (remaining < 0 || remaining > static_cast<Index>(uncertain.size())) {
    throw Error(kVarSampling, Errc::InfeasibleSize, "selection probabilities inconsistent with c");
  }

  if (remaining > 0 && sel.sampler == ComponentSampler::systematic_random_order) {
    shuffle(uncertain.begin(), uncertain.end(), stream);
    double mass = 0.0;
    for (Index j : uncertain) mass += sel.probs(j);
    // Rescale so the cumulated sizes end exactly at `remaining`.
    const double rescale = static_cast<double>(remaining) / mass;
    const double u = stream.uniform();
    double cumulative = 0.0;
    Index next_point = 0;
    for (std::size_t i = 0; i < uncertain.size() && next_point < remaining; ++i) {
      cumulative += sel.probs(uncertain[i]) * rescale;
      const bool last = i + 1 == uncertain.size();
      if (last || cumulative > u + static_cast<double>(next_point)) {
        chosen.push_back(uncertain[i]);
        ++next_point;
      }
    }
  } else if (remaining > 0) {
    if (sel.working_probs.size() != q) {
      throw Error(kVarSampling, Errc::InvalidConfig, "rejective sampler requires working probabilities");
    }
    std::vector<Index> draw;
    constexpr int kMaxAttempts = 1'000'000;
    int attempt = 0;
    for (;; ++attempt) {
      if (attempt == kMaxAttempts) {
        throw Error(kVarSampling, Errc::SamplingFailed, "rejective sampler exceeded attempt cap");
      }
      draw.clear();
      for (Index j : uncertain) {
        if (stream.uniform() < sel.working_probs(j)) draw.push_back(j);
      }
      if (static_cast<Index>(draw.size()) == remaining) break;
    }
    chosen.insert(chosen.end(), draw.begin(), draw.end());
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

/// Simple random sampling without replacement of n out of N units.
inline SamplingDesign srswor(Index population_size, Index n, Stream& stream) {
  if (n < 1 || n > population_size) {
    throw Error(kVarSampling, Errc::OutOfRange,
                "need 0 < n <= N, got n = " + std::to_string(n) + ", N = " + std::to_string(population_size));
  }
  // Partial Fisher-Yates: the first n slots are a uniform random n-subset.
  std::vector<Index> pool(static_cast<std::size_t>(population_size));
  std::iota(pool.begin(), pool.end(), Index{0});
  for (Index i = 0; i < n; ++i) {
    const auto j = i + static_cast<Index>(stream.uniform_index(static_cast<std::uint64_t>(population_size - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  SamplingDesign design;
  design.population_size = population_size;
  design.sample_indices.assign(pool.begin(), pool.begin() + n);
  std::sort(design.sample_indices.begin(), design.sample_indices.end());
  const double pi = static_cast<double>(n) / static_cast<double>(population_size);
  design.inclusion_probs = Vector::Constant(population_size, pi);
  design.design_weights = Vector::Constant(population_size, 1.0 / pi);
  return design;
}

/// Design from externally supplied inclusion probabilities of sampled units.
/// Non-sampled units get probability 1 (weights are never used for them).
inline SamplingDesign design_from_probs(Index population_size, std::vector<Index> sample_indices,
                                        const Vector& sample_probs) {
  if (static_cast<Index>(sample_indices.size()) != sample_probs.size()) {
    throw Error(kVarSampling, Errc::DimensionMismatch, "sample indices and probabilities differ in length");
  }
  SamplingDesign design;
  design.population_size = population_size;
  design.inclusion_probs = Vector::Ones(population_size);
  for (std::size_t i = 0; i < sample_indices.size(); ++i) {
    const double p = sample_probs(static_cast<Index>(i));
    const Index k = sample_indices[i];
    if (k < 0 || k >= population_size) throw Error(kVarSampling, Errc::OutOfRange, "sample index out of range");
    if (!(p > 0.0 && p <= 1.0)) {
      throw Error(kVarSampling, Errc::OutOfRange, "inclusion probability must lie in (0, 1]");
    }
    design.inclusion_probs(k) = p;
  }
  design.design_weights = design.inclusion_probs.cwiseInverse();
  std::vector<Index> sorted = sample_indices;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw Error(kVarSampling, Errc::OutOfRange, "sample indices must be distinct");
  }
  design.sample_indices = std::move(sorted);
  return design;
}

}  // namespace bagcal
