#pragma once

#include <concepts>
#include <cstddef>
#include <string>

#include "pfda/error.hpp"
#include "pfda/linalg.hpp"
#include "pfda/rng.hpp"

namespace pfda {

// A time-homogeneous state-space model: an initial law, a Markov transition
// that can be sampled, and an observation density g(y | x).
//
// log_transition_density is only meaningful when has_transition_density()
// is true; models with deterministic dynamics throw CapabilityError from it.
template <class M>
concept StateSpaceModel = requires(const M& m, ConstVectorRef x, ConstVectorRef y,
                                   VectorRef out, RngStream& rng) {
  { m.state_dim() } -> std::convertible_to<std::size_t>;
  { m.obs_dim() } -> std::convertible_to<std::size_t>;
  { m.has_transition_density() } -> std::convertible_to<bool>;
  m.sample_initial(out, rng);
  m.propagate(x, out, rng);
  m.sample_observation(x, out, rng);
  { m.log_obs_density(y, x) } -> std::convertible_to<double>;
  { m.log_transition_density(y, x) } -> std::convertible_to<double>;
};

// Models whose initial law has a density, so the complete-data likelihood
// p(x_0:n, y_1:n) can be evaluated.
template <class M>
concept CompleteDataModel = StateSpaceModel<M> && requires(const M& m, ConstVectorRef x) {
  { m.log_initial_density(x) } -> std::convertible_to<double>;
};

// Models observed as y ~ N(Hx, R); required by the ensemble Kalman filter.
template <class M>
concept LinearGaussianObserved = StateSpaceModel<M> && requires(const M& m) {
  { m.obs_matrix() } -> std::convertible_to<Matrix>;
  { m.obs_noise_cov() } -> std::convertible_to<Matrix>;
};

template <StateSpaceModel M>
void require_transition_density(const M& model, const char* algorithm) {
  if (!model.has_transition_density()) {
    throw CapabilityError(std::string(algorithm) +
                          " requires a model with a closed-form transition density");
  }
}

// log p(x_0:n, y_1:n); path columns are x_0..x_n, observation columns y_1..y_n.
template <CompleteDataModel M>
double complete_data_log_density(const M& model, const Matrix& path, const Matrix& obs) {
  require_transition_density(model, "complete-data likelihood");
  require_same_size(path.cols(), obs.cols() + 1, "path length vs observations + 1");
  double total = model.log_initial_density(path.col(0));
  for (Eigen::Index t = 1; t < path.cols(); ++t) {
    total += model.log_transition_density(path.col(t), path.col(t - 1));
    total += model.log_obs_density(obs.col(t - 1), path.col(t));
  }
  return total;
}

}  // namespace pfda
