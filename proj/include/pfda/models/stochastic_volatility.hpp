#pragma once

#include <cmath>
#include <optional>

#include "pfda/error.hpp"
#include "pfda/linalg.hpp"
#include "pfda/model.hpp"
#include "pfda/rng.hpp"

namespace pfda {

struct SvParameters {
  double phi = 0.9;
  double sigma = 0.3;
  double beta = 0.6;
  // Variance of x_0. Unset means the stationary variance sigma^2 / (1 - phi^2)
  // when |phi| < 1 and sigma^2 otherwise.
  std::optional<double> initial_variance;
};

// x' = phi x + sigma z.
inline double sv_propagate(double x, const SvParameters& theta, double z) {
  if (!std::isfinite(x) || !std::isfinite(z)) {
    throw DomainError("sv_propagate: non-finite state or noise draw");
  }
  return theta.phi * x + theta.sigma * z;
}

// log N(y; 0, beta^2 exp(x)).
inline double sv_log_obs(double y, double x, const SvParameters& theta) {
  const double log_var = 2.0 * std::log(theta.beta) + x;
  return -0.5 * (kLogTwoPi + log_var + y * y * std::exp(-x) / (theta.beta * theta.beta));
}

// Scalar stochastic volatility model:
//   X_t | x_{t-1} ~ N(phi x_{t-1}, sigma^2),  Y_t | x_t ~ N(0, beta^2 exp(x_t)).
class StochasticVolatilityModel {
 public:
  explicit StochasticVolatilityModel(SvParameters theta = {}) : theta_(theta) {
    if (!(theta_.sigma > 0.0) || !(theta_.beta > 0.0) || !std::isfinite(theta_.phi)) {
      throw DomainError("stochastic volatility parameters require finite phi, sigma > 0, beta > 0");
    }
    if (theta_.initial_variance) {
      init_var_ = *theta_.initial_variance;
    } else if (std::abs(theta_.phi) < 1.0) {
      init_var_ = theta_.sigma * theta_.sigma / (1.0 - theta_.phi * theta_.phi);
    } else {
      init_var_ = theta_.sigma * theta_.sigma;
    }
    if (!(init_var_ > 0.0)) throw DomainError("initial variance must be positive");
  }

  const SvParameters& parameters() const { return theta_; }
  double initial_variance() const { return init_var_; }

  std::size_t state_dim() const { return 1; }
  std::size_t obs_dim() const { return 1; }
  bool has_transition_density() const { return true; }

  void sample_initial(VectorRef out, RngStream& rng) const {
    out[0] = std::sqrt(init_var_) * rng.normal();
  }

  void propagate(ConstVectorRef x, VectorRef out, RngStream& rng) const {
    out[0] = sv_propagate(x[0], theta_, rng.normal());
  }

  void sample_observation(ConstVectorRef x, VectorRef out, RngStream& rng) const {
    out[0] = theta_.beta * std::exp(0.5 * x[0]) * rng.normal();
  }

  double log_obs_density(ConstVectorRef y, ConstVectorRef x) const {
    return sv_log_obs(y[0], x[0], theta_);
  }

  double log_transition_density(ConstVectorRef x_next, ConstVectorRef x) const {
    return gaussian_log_density(x_next[0], theta_.phi * x[0], theta_.sigma * theta_.sigma);
  }

  double log_initial_density(ConstVectorRef x) const {
    return gaussian_log_density(x[0], 0.0, init_var_);
  }

 private:
  SvParameters theta_;
  double init_var_ = 1.0;
};

static_assert(CompleteDataModel<StochasticVolatilityModel>);

}  // namespace pfda
