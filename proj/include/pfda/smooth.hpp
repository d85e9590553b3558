#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pfda/error.hpp"
#include "pfda/linalg.hpp"
#include "pfda/model.hpp"
#include "pfda/parallel.hpp"
#include "pfda/particle_filter.hpp"
#include "pfda/resample.hpp"
#include "pfda/rng.hpp"
#include "pfda/trajectory_store.hpp"

namespace pfda {

// Particle indices of the ancestral line of final particle `final_index`,
// one per time 0..T.
inline std::vector<std::size_t> ancestral_indices(const TrajectoryStore& store,
                                                  std::size_t final_index) {
  if (store.empty()) throw DomainError("ancestral_indices: empty trajectory store");
  const std::size_t last = store.final_time();
  const std::size_t n = last == 0 ? store.particle_count() : store.ancestors[last].size();
  if (n != 0 && final_index >= n) {
    throw DomainError("ancestral_indices: particle index " + std::to_string(final_index) +
                      " out of range");
  }
  std::vector<std::size_t> idx(last + 1);
  idx[last] = final_index;
  for (std::size_t t = last; t > 0; --t) idx[t - 1] = store.ancestors[t].at(idx[t]);
  return idx;
}

// Full stored path x_0..x_T (columns) of a final particle.
inline Matrix extract_trajectory(const TrajectoryStore& store, std::size_t final_index) {
  if (!store.has_particles()) {
    throw DomainError("extract_trajectory: store holds ancestry only");
  }
  const auto idx = ancestral_indices(store, final_index);
  Matrix path(store.particles[0].rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t t = 0; t < idx.size(); ++t) {
    path.col(static_cast<Eigen::Index>(t)) = store.particles[t].col(static_cast<Eigen::Index>(idx[t]));
  }
  return path;
}

// Number of distinct time-s ancestors among the particles at the final time.
inline std::size_t unique_path_count(const TrajectoryStore& store, std::size_t s) {
  const std::size_t last = store.final_time();
  if (s > last) throw DomainError("unique_path_count: s beyond final time");
  const std::size_t n = store.particle_count();
  std::vector<std::size_t> current(n);
  for (std::size_t i = 0; i < n; ++i) current[i] = i;
  for (std::size_t t = last; t > s; --t) {
    for (auto& c : current) c = store.ancestors[t][c];
    std::sort(current.begin(), current.end());
    current.erase(std::unique(current.begin(), current.end()), current.end());
  }
  std::sort(current.begin(), current.end());
  return static_cast<std::size_t>(std::unique(current.begin(), current.end()) - current.begin());
}

// unique_path_count for every s = 0..T in one backward pass.
inline std::vector<std::size_t> unique_path_counts(const TrajectoryStore& store) {
  const std::size_t last = store.final_time();
  std::vector<std::size_t> counts(last + 1);
  std::vector<std::size_t> current(store.particle_count());
  for (std::size_t i = 0; i < current.size(); ++i) current[i] = i;
  counts[last] = current.size();
  for (std::size_t t = last; t > 0; --t) {
    for (auto& c : current) c = store.ancestors[t][c];
    std::sort(current.begin(), current.end());
    current.erase(std::unique(current.begin(), current.end()), current.end());
    counts[t - 1] = current.size();
  }
  return counts;
}

namespace detail {

inline std::vector<std::vector<double>> log_filter_weights(const TrajectoryStore& store) {
  std::vector<std::vector<double>> out(store.weights.size());
  for (std::size_t s = 0; s < out.size(); ++s) {
    out[s].resize(store.weights[s].size());
    for (std::size_t i = 0; i < out[s].size(); ++i) {
      out[s][i] = store.weights[s][i] > 0.0 ? std::log(store.weights[s][i]) : kNegInf;
    }
  }
  return out;
}

template <StateSpaceModel M>
Matrix backward_path(const TrajectoryStore& store, const std::vector<std::vector<double>>& log_ws,
                     const M& model, std::uint64_t seed, std::uint64_t path_index) {
  const std::size_t last = store.final_time();
  Matrix path(store.particles[0].rows(), static_cast<Eigen::Index>(last + 1));
  RngStream pick(seed, {last, path_index, Purpose::backward});
  std::size_t j = sample_categorical(store.weights[last], pick);
  path.col(static_cast<Eigen::Index>(last)) = store.particles[last].col(static_cast<Eigen::Index>(j));
  std::vector<double> log_w;
  for (std::size_t s = last; s-- > 0;) {
    const Matrix& xs = store.particles[s];
    const auto& lws = log_ws[s];
    log_w.assign(lws.size(), kNegInf);
    const auto next = path.col(static_cast<Eigen::Index>(s + 1));
    for (std::size_t i = 0; i < lws.size(); ++i) {
      if (lws[i] != kNegInf) {
        log_w[i] = lws[i] + model.log_transition_density(next, xs.col(static_cast<Eigen::Index>(i)));
      }
    }
    std::vector<double> bw;
    try {
      bw = normalize_log_weights(log_w).weights;
    } catch (const DegenerateWeightsError&) {
      throw DegenerateWeightsError("backward weights are all zero", s);
    }
    RngStream rng(seed, {s, path_index, Purpose::backward});
    j = sample_categorical(bw, rng);
    path.col(static_cast<Eigen::Index>(s)) = xs.col(static_cast<Eigen::Index>(j));
  }
  return path;
}

template <StateSpaceModel M>
void require_backward_inputs(const TrajectoryStore& store, const M& model) {
  require_transition_density(model, "backward simulation");
  if (!store.has_particles()) {
    throw DomainError("backward simulation needs stored particles and weights");
  }
}

}  // namespace detail

// Backward simulation: draw x_T from the final filter approximation, then for
// s = T-1..0 draw x_s among the time-s filter particles with probability
// proportional to w_s^i p(x_{s+1} | x_s^i). Returns x_0..x_T as columns.
template <StateSpaceModel M>
Matrix backward_sample_trajectory(const TrajectoryStore& store, const M& model,
                                  std::uint64_t seed, std::uint64_t path_index = 0) {
  detail::require_backward_inputs(store, model);
  return detail::backward_path(store, detail::log_filter_weights(store), model, seed, path_index);
}

// `count` backward-simulated paths; element p equals
// backward_sample_trajectory(store, model, seed, p).
template <StateSpaceModel M>
std::vector<Matrix> backward_sample_trajectories(const TrajectoryStore& store, const M& model,
                                                 std::uint64_t seed, std::size_t count,
                                                 unsigned threads = 1) {
  detail::require_backward_inputs(store, model);
  const auto log_ws = detail::log_filter_weights(store);
  std::vector<Matrix> paths(count);
  parallel_for(count, threads, [&](std::size_t p) {
    paths[p] = detail::backward_path(store, log_ws, model, seed, p);
  });
  return paths;
}

// One step of the forward-filtering backward-smoothing recursion:
//   w_{s|T}^i = w_s^i sum_j w_{s+1|T}^j p(x_{s+1}^j | x_s^i) / sum_k w_s^k p(x_{s+1}^j | x_s^k).
// Costs O(N^2) transition density evaluations. Column j is evaluated as
// E_ij = exp(log w_s^i + log p(x_{s+1}^j | x_s^i) - c_j) with c_j the column
// maximum.
template <StateSpaceModel M>
std::vector<double> marginal_smoothing_weights(const Matrix& particles_s,
                                               std::span<const double> filter_weights_s,
                                               const Matrix& particles_next,
                                               std::span<const double> smooth_weights_next,
                                               const M& model, unsigned threads = 1) {
  require_transition_density(model, "marginal smoothing");
  const auto n = static_cast<std::size_t>(particles_s.cols());
  const auto m = static_cast<std::size_t>(particles_next.cols());
  std::vector<double> log_fw(n);
  for (std::size_t i = 0; i < n; ++i) {
    log_fw[i] = filter_weights_s[i] > 0.0 ? std::log(filter_weights_s[i]) : kNegInf;
  }
  Matrix e(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  Vector ratio = Vector::Zero(static_cast<Eigen::Index>(m));
  std::vector<char> degenerate(m, 0);
  parallel_for(m, threads, [&](std::size_t j) {
    const auto jj = static_cast<Eigen::Index>(j);
    if (!(smooth_weights_next[j] > 0.0)) {
      e.col(jj).setZero();
      return;
    }
    double c = kNegInf;
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double v = log_fw[i] == kNegInf
                           ? kNegInf
                           : log_fw[i] + model.log_transition_density(particles_next.col(jj), particles_s.col(ii));
      e(ii, jj) = v;
      c = std::max(c, v);
    }
    if (!std::isfinite(c)) {
      degenerate[j] = 1;
      return;
    }
    e.col(jj) = (e.col(jj).array() - c).exp();
    for (std::size_t i = 0; i < n; ++i) {
      if (log_fw[i] == kNegInf) e(static_cast<Eigen::Index>(i), jj) = 0.0;
    }
    ratio[jj] = smooth_weights_next[j] / e.col(jj).sum();
  });
  for (std::size_t j = 0; j < m; ++j) {
    if (degenerate[j]) {
      throw DegenerateWeightsError("zero predictive density for smoothing particle j=" + std::to_string(j));
    }
  }
  const Vector out = e * ratio;
  const double total = out.sum();
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw DegenerateWeightsError("smoothing weights are all zero");
  }
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = out[static_cast<Eigen::Index>(i)] / total;
  return w;
}

// Marginal smoothing weights w_{s|T} for all s = 0..T over the stored filter
// particles.
template <StateSpaceModel M>
std::vector<std::vector<double>> marginal_smoother(const TrajectoryStore& store, const M& model,
                                                   unsigned threads = 1) {
  require_transition_density(model, "marginal smoothing");
  if (!store.has_particles()) throw DomainError("marginal smoother needs stored particles");
  const std::size_t last = store.final_time();
  std::vector<std::vector<double>> w(last + 1);
  w[last] = store.weights[last];
  for (std::size_t s = last; s-- > 0;) {
    try {
      w[s] = marginal_smoothing_weights(store.particles[s], store.weights[s], store.particles[s + 1],
                                        w[s + 1], model, threads);
    } catch (const DegenerateWeightsError& e) {
      throw DegenerateWeightsError(e.message(), s);
    }
  }
  return w;
}

struct MarginalEstimate {
  std::size_t s = 0;
  Vector mean;
  Vector q05;
  Vector q95;
};

inline MarginalEstimate summarize_marginal(std::size_t s, const Matrix& particles,
                                           std::span<const double> w) {
  const FilterSummary f = summarize_weighted(particles, w);
  return {s, f.mean, f.q05, f.q95};
}

// Fixed-lag approximation pi_{s|T} ~ pi_{s|s+L}: the time-s ancestors of the
// particles at time min(s + L, T), weighted by the filter weights there.
// lag = 0 gives the filter marginals; lag >= T gives the trajectory smoother.
inline std::vector<MarginalEstimate> fixed_lag_smoother(const TrajectoryStore& store,
                                                        std::size_t lag) {
  if (!store.has_particles()) throw DomainError("fixed-lag smoother needs stored particles");
  const std::size_t last = store.final_time();
  std::vector<MarginalEstimate> out;
  out.reserve(last + 1);
  for (std::size_t s = 0; s <= last; ++s) {
    const std::size_t frozen = std::min(last, s + lag);
    const auto n = store.weights[frozen].size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t t = frozen; t > s; --t) {
      for (auto& c : idx) c = store.ancestors[t][c];
    }
    Matrix xs(store.particles[s].rows(), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      xs.col(static_cast<Eigen::Index>(i)) = store.particles[s].col(static_cast<Eigen::Index>(idx[i]));
    }
    out.push_back(summarize_marginal(s, xs, store.weights[frozen]));
  }
  return out;
}

// Trajectory (Kitagawa) smoother: every stored final path, weighted by the
// final filter weights.
inline std::vector<MarginalEstimate> trajectory_smoother(const TrajectoryStore& store) {
  return fixed_lag_smoother(store, store.final_time());
}

}  // namespace pfda
