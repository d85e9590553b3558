#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "pfda/error.hpp"
#include "pfda/linalg.hpp"
#include "pfda/models/linear_gaussian.hpp"

// Exact inference for linear-Gaussian models. Everything in the Monte Carlo
// modules is checked against these routines.
namespace pfda::oracle {

struct GaussianBelief {
  Vector mean;
  Matrix cov;
};

struct KalmanResult {
  std::vector<GaussianBelief> predicted;  // [t] = p(x_t | y_1:t-1), [0] is the prior
  std::vector<GaussianBelief> filtered;   // [t] = p(x_t | y_1:t),   [0] is the prior
  std::vector<double> log_lik_increments; // [t-1] = log p(y_t | y_1:t-1)
  double log_lik = 0.0;
};

inline Matrix kalman_gain(const Matrix& p, const Matrix& h, const Matrix& r) {
  const Matrix s = h * p * h.transpose() + r;
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("singular innovation covariance (condition number " +
                         std::to_string(condition_number(s)) + ")");
  }
  return llt.solve(h * p).transpose();
}

// Kalman filter with Joseph-form covariance update; the log-likelihood is the
// sum of Gaussian innovation log-densities.
inline KalmanResult kalman_filter(const LinearGaussianParameters& p, const Matrix& observations) {
  p.validate();
  if (observations.cols() > 0) {
    require_same_size(observations.rows(), static_cast<Eigen::Index>(p.obs_dim()), "observation dimension");
  }
  const auto d = static_cast<Eigen::Index>(p.state_dim());
  const auto q = static_cast<Eigen::Index>(p.obs_dim());
  const Matrix eye = Matrix::Identity(d, d);
  KalmanResult out;
  out.predicted.push_back({p.initial_mean, p.initial_cov});
  out.filtered.push_back({p.initial_mean, p.initial_cov});
  Vector m = p.initial_mean;
  Matrix cov = p.initial_cov;
  for (Eigen::Index t = 0; t < observations.cols(); ++t) {
    const Vector m_pred = p.transition * m;
    Matrix p_pred = p.transition * cov * p.transition.transpose() + p.state_noise;
    p_pred = 0.5 * (p_pred + p_pred.transpose()).eval();
    const Matrix s = p.observation * p_pred * p.observation.transpose() + p.obs_noise;
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("singular innovation covariance (condition number " +
                               std::to_string(condition_number(s)) + ")",
                           static_cast<std::size_t>(t + 1));
    }
    const Vector innov = observations.col(t) - p.observation * m_pred;
    const Matrix k = llt.solve(p.observation * p_pred).transpose();
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const double quad = innov.dot(llt.solve(innov));
    const double inc = -0.5 * (static_cast<double>(q) * kLogTwoPi + log_det + quad);
    out.log_lik_increments.push_back(inc);
    out.log_lik += inc;
    m = m_pred + k * innov;
    const Matrix a = eye - k * p.observation;
    cov = a * p_pred * a.transpose() + k * p.obs_noise * k.transpose();
    cov = 0.5 * (cov + cov.transpose()).eval();
    out.predicted.push_back({m_pred, p_pred});
    out.filtered.push_back({m, cov});
  }
  return out;
}

inline double kalman_log_likelihood(const LinearGaussianParameters& p, const Matrix& observations) {
  return kalman_filter(p, observations).log_lik;
}

// Rauch-Tung-Striebel backward recursion; returns p(x_s | y_1:T) for s = 0..T.
inline std::vector<GaussianBelief> rts_smoother(const KalmanResult& kf,
                                                const LinearGaussianParameters& p) {
  const std::size_t last = kf.filtered.size() - 1;
  std::vector<GaussianBelief> out(last + 1);
  out[last] = kf.filtered[last];
  for (std::size_t s = last; s-- > 0;) {
    const auto& f = kf.filtered[s];
    const auto& pred = kf.predicted[s + 1];
    Eigen::LLT<Matrix> llt(pred.cov);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("singular predictive covariance in smoother", s);
    }
    const Matrix g = llt.solve(p.transition * f.cov).transpose();
    Vector mean = f.mean + g * (out[s + 1].mean - pred.mean);
    Matrix cov = f.cov + g * (out[s + 1].cov - pred.cov) * g.transpose();
    cov = 0.5 * (cov + cov.transpose()).eval();
    out[s] = {std::move(mean), std::move(cov)};
  }
  return out;
}

struct GridPosterior {
  std::vector<double> grid;
  std::vector<double> density;  // integrates to one under the trapezoidal rule
};

// p(theta) L(theta) on a sorted grid, normalized by the trapezoidal rule. A
// single grid point yields a point mass (density 1).
inline GridPosterior grid_posterior(std::vector<double> grid,
                                    const std::function<double(double)>& log_prior,
                                    const std::function<double(double)>& log_lik) {
  if (grid.empty()) throw DomainError("grid_posterior: empty grid");
  if (!std::is_sorted(grid.begin(), grid.end())) throw DomainError("grid_posterior: grid not sorted");
  std::vector<double> log_u(grid.size());
  double hi = kNegInf;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double lp = log_prior(grid[g]);
    log_u[g] = lp == kNegInf ? kNegInf : lp + log_lik(grid[g]);
    hi = std::max(hi, log_u[g]);
  }
  if (!std::isfinite(hi)) throw DomainError("grid_posterior: zero total posterior mass");
  GridPosterior out{std::move(grid), std::vector<double>(log_u.size())};
  for (std::size_t g = 0; g < log_u.size(); ++g) out.density[g] = std::exp(log_u[g] - hi);
  if (out.grid.size() == 1) {
    out.density[0] = 1.0;
    return out;
  }
  double mass = 0.0;
  for (std::size_t g = 1; g < out.grid.size(); ++g) {
    mass += 0.5 * (out.density[g] + out.density[g - 1]) * (out.grid[g] - out.grid[g - 1]);
  }
  if (!(mass > 0.0)) throw DomainError("grid_posterior: zero total posterior mass");
  for (double& v : out.density) v /= mass;
  return out;
}

// Integral of the piecewise-linear interpolant of the grid density over
// [lo, hi] (zero outside the grid).
inline double integrate_density(const GridPosterior& post, double lo, double hi) {
  const auto& x = post.grid;
  const auto& f = post.density;
  auto value_at = [&](std::size_t g, double v) {
    const double frac = (v - x[g]) / (x[g + 1] - x[g]);
    return f[g] + frac * (f[g + 1] - f[g]);
  };
  double total = 0.0;
  for (std::size_t g = 0; g + 1 < x.size(); ++g) {
    const double a = std::max(lo, x[g]);
    const double b = std::min(hi, x[g + 1]);
    if (b <= a) continue;
    total += 0.5 * (value_at(g, a) + value_at(g, b)) * (b - a);
  }
  return total;
}

// Posterior probability of each bin [edges[k], edges[k+1]).
inline std::vector<double> bin_probabilities(const GridPosterior& post, std::span<const double> edges) {
  std::vector<double> p;
  for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
    p.push_back(integrate_density(post, edges[k], edges[k + 1]));
  }
  return p;
}

}  // namespace pfda::oracle
