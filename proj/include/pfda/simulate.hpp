#pragma once

#include <cstdint>

#include "pfda/error.hpp"
#include "pfda/linalg.hpp"
#include "pfda/model.hpp"
#include "pfda/rng.hpp"

namespace pfda {

struct SimulatedData {
  Matrix states;        // d x (T+1), columns x_0..x_T
  Matrix observations;  // q x T, columns y_1..y_T
};

// Exact forward draw of (x_0:T, y_1:T) from the model.
template <StateSpaceModel M>
SimulatedData simulate_truth(const M& model, std::size_t steps, std::uint64_t seed) {
  if (steps < 1) throw DomainError("simulate_truth: need at least one time step");
  const auto d = static_cast<Eigen::Index>(model.state_dim());
  const auto q = static_cast<Eigen::Index>(model.obs_dim());
  const auto n = static_cast<Eigen::Index>(steps);
  SimulatedData out{Matrix(d, n + 1), Matrix(q, n)};
  RngStream init(seed, {0, 0, Purpose::initial});
  model.sample_initial(out.states.col(0), init);
  for (Eigen::Index t = 1; t <= n; ++t) {
    const auto tt = static_cast<std::uint64_t>(t);
    RngStream prop(seed, {tt, 0, Purpose::propagate});
    model.propagate(out.states.col(t - 1), out.states.col(t), prop);
    RngStream obs(seed, {tt, 0, Purpose::observe});
    model.sample_observation(out.states.col(t), out.observations.col(t - 1), obs);
  }
  return out;
}

}  // namespace pfda
