#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "pfda/error.hpp"
#include "pfda/linalg.hpp"
#include "pfda/model.hpp"
#include "pfda/parallel.hpp"
#include "pfda/resample.hpp"
#include "pfda/rng.hpp"
#include "pfda/trajectory_store.hpp"

namespace pfda {

enum class ResampleTrigger {
  always,     // bootstrap filter
  ess_below,  // resample when ESS < ess_fraction * N
  never,      // sequential importance sampling
};

struct FilterOptions {
  ResamplingScheme scheme = ResamplingScheme::systematic;
  ResampleTrigger trigger = ResampleTrigger::always;
  double ess_fraction = 0.5;
  std::uint64_t seed = 0;
  StorageMode storage = StorageMode::ancestry;
  unsigned threads = 1;
  bool summaries = true;
};

// Weighted particle approximation of the filter distribution at time t.
// particles is d x N; weights are normalized.
struct ParticleSystem {
  Matrix particles;
  std::vector<double> weights;
  std::size_t t = 0;
  double log_lik = 0.0;

  std::size_t size() const { return weights.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(particles.rows()); }
};

struct StepInfo {
  AncestorIndices ancestors;
  bool resampled = false;
  double log_increment = 0.0;  // log of the per-step likelihood estimate
};

template <StateSpaceModel M>
ParticleSystem initialize_particles(const M& model, std::size_t n, std::uint64_t seed,
                                    unsigned threads = 1) {
  if (n < 1) throw DomainError("particle count must be positive");
  ParticleSystem ps;
  ps.particles.resize(static_cast<Eigen::Index>(model.state_dim()), static_cast<Eigen::Index>(n));
  ps.weights.assign(n, 1.0 / static_cast<double>(n));
  parallel_for(n, threads, [&](std::size_t i) {
    RngStream rng(seed, {0, i, Purpose::initial});
    model.sample_initial(ps.particles.col(static_cast<Eigen::Index>(i)), rng);
  });
  return ps;
}

namespace detail {

inline AncestorIndices identity_ancestors(std::size_t n) {
  AncestorIndices a(n);
  std::iota(a.begin(), a.end(), std::size_t{0});
  return a;
}

inline double normalize_into(ParticleSystem& ps, const std::vector<double>& log_w,
                             std::size_t step) {
  try {
    auto nw = normalize_log_weights(log_w);
    ps.weights = std::move(nw.weights);
    return nw.log_mean + std::log(static_cast<double>(log_w.size()));
  } catch (const DegenerateWeightsError& e) {
    throw DegenerateWeightsError(e.message(), step);
  }
}

}  // namespace detail

// One filter step: optional resampling (per options.trigger), propagation
// through the model transition and reweighting by g(y | x). The log-likelihood
// accumulates log sum_i w_{A(i)} g(y | x_i), which is log mean g for the
// bootstrap filter. Returns the ancestors used.
template <StateSpaceModel M>
StepInfo bootstrap_step(ParticleSystem& ps, ConstVectorRef y, const M& model,
                        const FilterOptions& options) {
  const std::size_t n = ps.size();
  const std::size_t t = ps.t + 1;
  StepInfo info;
  info.resampled = options.trigger == ResampleTrigger::always ||
                   (options.trigger == ResampleTrigger::ess_below &&
                    ess(ps.weights) < options.ess_fraction * static_cast<double>(n));
  std::vector<double> log_w(n);
  if (info.resampled) {
    RngStream rng(options.seed, {t, 0, Purpose::resample});
    info.ancestors = resample(options.scheme, ps.weights, rng);
    std::fill(log_w.begin(), log_w.end(), -std::log(static_cast<double>(n)));
  } else {
    info.ancestors = detail::identity_ancestors(n);
    for (std::size_t i = 0; i < n; ++i) log_w[i] = std::log(ps.weights[i]);
  }

  Matrix next(ps.particles.rows(), ps.particles.cols());
  parallel_for(n, options.threads, [&](std::size_t i) {
    const auto col = static_cast<Eigen::Index>(i);
    RngStream rng(options.seed, {t, i, Purpose::propagate});
    model.propagate(ps.particles.col(static_cast<Eigen::Index>(info.ancestors[i])),
                    next.col(col), rng);
    log_w[i] += model.log_obs_density(y, next.col(col));
  });
  ps.particles = std::move(next);
  info.log_increment = detail::normalize_into(ps, log_w, t);
  ps.log_lik += info.log_increment;
  ps.t = t;
  return info;
}

// Sequential importance sampling step: propagate and multiply weights by g,
// never resampling.
template <StateSpaceModel M>
StepInfo sis_step(ParticleSystem& ps, ConstVectorRef y, const M& model,
                  FilterOptions options) {
  options.trigger = ResampleTrigger::never;
  return bootstrap_step(ps, y, model, options);
}

// Propagation without correction: moves the weighted sample `steps` times
// through the transition, leaving weights unchanged. Uses the same random
// streams a filter step at the same time index would.
template <StateSpaceModel M>
void predict(ParticleSystem& ps, std::size_t steps, const M& model, std::uint64_t seed,
             unsigned threads = 1) {
  const std::size_t n = ps.size();
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = ps.t + 1;
    Matrix next(ps.particles.rows(), ps.particles.cols());
    parallel_for(n, threads, [&](std::size_t i) {
      const auto col = static_cast<Eigen::Index>(i);
      RngStream rng(seed, {t, i, Purpose::propagate});
      model.propagate(ps.particles.col(col), next.col(col), rng);
    });
    ps.particles = std::move(next);
    ps.t = t;
  }
}

// Quantile of a weighted sample by linear interpolation of the weighted ECDF
// evaluated at the mid-points of each sorted atom's probability mass.
inline double weighted_quantile(std::span<const double> values, std::span<const double> weights,
                                double p) {
  std::vector<std::size_t> idx;
  idx.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (weights[i] > 0.0) idx.push_back(i);
  }
  if (idx.empty()) throw DomainError("weighted_quantile: no positive weights");
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return values[a] < values[b] || (values[a] == values[b] && a < b);
  });
  double total = 0.0;
  for (std::size_t i : idx) total += weights[i];
  double cum = 0.0;
  double prev_mid = 0.0;
  double prev_val = values[idx.front()];
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double w = weights[idx[k]] / total;
    const double mid = cum + 0.5 * w;
    const double val = values[idx[k]];
    if (p <= mid) {
      if (k == 0) return val;
      const double f = (p - prev_mid) / (mid - prev_mid);
      return prev_val + f * (val - prev_val);
    }
    cum += w;
    prev_mid = mid;
    prev_val = val;
  }
  return prev_val;
}

struct FilterSummary {
  std::size_t t = 0;
  Vector mean;
  Vector q05;
  Vector q95;
  double ess = 0.0;
  double max_weight = 0.0;
  double log_lik = 0.0;  // cumulative log p-hat(y_1:t)
};

inline FilterSummary summarize_weighted(const Matrix& particles, std::span<const double> w) {
  FilterSummary s;
  const Eigen::Index d = particles.rows();
  const Eigen::Map<const Vector> wv(w.data(), static_cast<Eigen::Index>(w.size()));
  s.mean = particles * wv;
  s.q05.resize(d);
  s.q95.resize(d);
  std::vector<double> row(w.size());
  for (Eigen::Index k = 0; k < d; ++k) {
    for (std::size_t i = 0; i < w.size(); ++i) row[i] = particles(k, static_cast<Eigen::Index>(i));
    s.q05[k] = weighted_quantile(row, w, 0.05);
    s.q95[k] = weighted_quantile(row, w, 0.95);
  }
  s.ess = ess(w);
  s.max_weight = *std::max_element(w.begin(), w.end());
  return s;
}

inline FilterSummary summarize(const ParticleSystem& ps) {
  FilterSummary s = summarize_weighted(ps.particles, ps.weights);
  s.t = ps.t;
  s.log_lik = ps.log_lik;
  return s;
}

struct CollapseDiagnostic {
  double max_weight = 0.0;
  double ratio_top2 = 0.0;  // largest / second largest; +inf if the second is 0
  double ess = 0.0;
};

inline CollapseDiagnostic collapse_diagnostic(std::span<const double> w) {
  if (w.size() < 2) throw DomainError("collapse_diagnostic: need at least two particles");
  double first = 0.0, second = 0.0;
  for (double v : w) {
    if (v > first) {
      second = first;
      first = v;
    } else if (v > second) {
      second = v;
    }
  }
  return {first, second > 0.0 ? first / second : std::numeric_limits<double>::infinity(),
          ess(w)};
}

struct FilterRun {
  ParticleSystem final;
  std::vector<FilterSummary> summaries;  // t = 1..T
  std::vector<double> log_increments;    // per-step log p-hat(y_t | y_1:t-1)
  TrajectoryStore store;
  double log_lik = 0.0;
};

// Bootstrap particle filter over observation columns y_1..y_T.
template <StateSpaceModel M>
FilterRun run_bootstrap_filter(const M& model, const Matrix& observations, std::size_t n,
                               const FilterOptions& options = {}) {
  if (n < 2) throw DomainError("run_bootstrap_filter: need at least two particles");
  if (observations.cols() > 0) {
    require_same_size(observations.rows(), static_cast<Eigen::Index>(model.obs_dim()),
                      "observation dimension");
  }
  FilterRun run;
  run.final = initialize_particles(model, n, options.seed, options.threads);
  run.store.record(run.final.particles, run.final.weights, {}, options.storage);
  for (Eigen::Index k = 0; k < observations.cols(); ++k) {
    StepInfo info = bootstrap_step(run.final, observations.col(k), model, options);
    run.log_increments.push_back(info.log_increment);
    run.store.record(run.final.particles, run.final.weights, std::move(info.ancestors),
                     options.storage);
    if (options.summaries) run.summaries.push_back(summarize(run.final));
  }
  run.log_lik = run.final.log_lik;
  return run;
}

}  // namespace pfda
