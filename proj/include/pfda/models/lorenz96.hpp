#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>

#include "pfda/error.hpp"
#include "pfda/linalg.hpp"
#include "pfda/model.hpp"
#include "pfda/rng.hpp"

namespace pfda {

// dx_k/dt = (x_{k+1} - x_{k-2}) x_{k-1} - x_k + F with cyclic indices.
inline Vector lorenz96_drift(ConstVectorRef x, double forcing = 8.0) {
  const Eigen::Index k = x.size();
  if (k < 4) throw DomainError("lorenz96_drift: state dimension must be at least 4");
  Vector dx(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double xp1 = x[(i + 1) % k];
    const double xm1 = x[(i + k - 1) % k];
    const double xm2 = x[(i + k - 2) % k];
    dx[i] = (xp1 - xm2) * xm1 - x[i] + forcing;
  }
  return dx;
}

// One classical fourth-order Runge-Kutta step of the Lorenz 96 drift.
inline Vector rk4_step(ConstVectorRef x, double h, double forcing = 8.0) {
  if (!(h > 0.0)) throw DomainError("rk4_step: step size must be positive");
  const Vector k1 = lorenz96_drift(x, forcing);
  const Vector k2 = lorenz96_drift(x + 0.5 * h * k1, forcing);
  const Vector k3 = lorenz96_drift(x + 0.5 * h * k2, forcing);
  const Vector k4 = lorenz96_drift(x + h * k3, forcing);
  Vector next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!k4.allFinite() || !next.allFinite()) {
    throw NumericalError("rk4_step: non-finite Runge-Kutta stage");
  }
  return next;
}

struct Lorenz96Parameters {
  std::size_t dimension = 40;
  double forcing = 8.0;
  double dt = 0.05;                   // time between observations
  std::optional<double> step;         // RK4 step, default dt / 10
  double obs_sigma = 1.0;
  std::size_t obs_stride = 2;         // observe components 0, m, 2m, ...
  double initial_sd = 1.0;            // x_0 ~ N(F 1, initial_sd^2 I)
};

// Deterministic Lorenz 96 dynamics integrated with RK4 between observation
// times, observed on every m-th component with N(0, sigma^2) noise.
class Lorenz96Model {
 public:
  explicit Lorenz96Model(Lorenz96Parameters p = {}) : p_(p) {
    if (p_.dimension < 4) throw DomainError("lorenz96: dimension must be at least 4");
    if (!(p_.dt > 0.0)) throw DomainError("lorenz96: dt must be positive");
    if (!(p_.obs_sigma > 0.0)) throw DomainError("lorenz96: obs_sigma must be positive");
    if (p_.obs_stride < 1 || p_.obs_stride > p_.dimension) {
      throw DomainError("lorenz96: obs_stride must be in [1, dimension]");
    }
    if (!(p_.initial_sd >= 0.0)) throw DomainError("lorenz96: initial_sd must be non-negative");
    const double h = p_.step.value_or(p_.dt / 10.0);
    if (!(h > 0.0)) throw DomainError("lorenz96: integration step must be positive");
    substeps_ = static_cast<std::size_t>(std::ceil(p_.dt / h - 1e-9));
    h_ = p_.dt / static_cast<double>(substeps_);
    obs_dim_ = (p_.dimension + p_.obs_stride - 1) / p_.obs_stride;
  }

  const Lorenz96Parameters& parameters() const { return p_; }
  double integration_step() const { return h_; }
  std::size_t substeps() const { return substeps_; }

  std::size_t state_dim() const { return p_.dimension; }
  std::size_t obs_dim() const { return obs_dim_; }
  bool has_transition_density() const { return false; }

  void sample_initial(VectorRef out, RngStream& rng) const {
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      out[i] = p_.forcing + p_.initial_sd * rng.normal();
    }
  }

  Vector integrate(ConstVectorRef x) const {
    Vector cur = x;
    for (std::size_t s = 0; s < substeps_; ++s) cur = rk4_step(cur, h_, p_.forcing);
    return cur;
  }

  void propagate(ConstVectorRef x, VectorRef out, RngStream&) const { out = integrate(x); }

  void sample_observation(ConstVectorRef x, VectorRef out, RngStream& rng) const {
    for (std::size_t j = 0; j < obs_dim_; ++j) {
      out[j] = x[j * p_.obs_stride] + p_.obs_sigma * rng.normal();
    }
  }

  double log_obs_density(ConstVectorRef y, ConstVectorRef x) const {
    double total = 0.0;
    const double var = p_.obs_sigma * p_.obs_sigma;
    for (std::size_t j = 0; j < obs_dim_; ++j) {
      total += gaussian_log_density(y[j], x[j * p_.obs_stride], var);
    }
    return total;
  }

  double log_transition_density(ConstVectorRef, ConstVectorRef) const {
    throw CapabilityError("lorenz96 dynamics are deterministic: no transition density");
  }

  Matrix obs_matrix() const {
    Matrix h = Matrix::Zero(obs_dim_, p_.dimension);
    for (std::size_t j = 0; j < obs_dim_; ++j) h(j, j * p_.obs_stride) = 1.0;
    return h;
  }

  Matrix obs_noise_cov() const {
    return Matrix::Identity(obs_dim_, obs_dim_) * (p_.obs_sigma * p_.obs_sigma);
  }

 private:
  Lorenz96Parameters p_;
  std::size_t substeps_ = 10;
  double h_ = 0.005;
  std::size_t obs_dim_ = 20;
};

static_assert(LinearGaussianObserved<Lorenz96Model>);

}  // namespace pfda
