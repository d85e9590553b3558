#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pfda/error.hpp"
#include "pfda/linalg.hpp"
#include "pfda/model.hpp"
#include "pfda/parallel.hpp"
#include "pfda/rng.hpp"

namespace pfda {

// Unweighted ensemble; members is d x N.
struct Ensemble {
  Matrix members;
  std::size_t t = 0;

  std::size_t size() const { return static_cast<std::size_t>(members.cols()); }
  std::size_t dim() const { return static_cast<std::size_t>(members.rows()); }
};

// y ~ N(H x, R).
struct ObservationOperator {
  Matrix h;
  Matrix r;

  void validate(std::size_t state_dim) const {
    require_same_size(h.cols(), static_cast<Eigen::Index>(state_dim), "H columns vs state");
    require_same_size(r.rows(), h.rows(), "R rows vs H rows");
    require_same_size(r.cols(), h.rows(), "R must be square");
    if (Eigen::LLT<Matrix>(r).info() != Eigen::Success) {
      throw DomainError("observation noise covariance R must be positive definite");
    }
  }

  template <LinearGaussianObserved M>
  static ObservationOperator from_model(const M& model) {
    return {model.obs_matrix(), model.obs_noise_cov()};
  }
};

// Gaspari-Cohn fifth-order compactly supported correlation at scaled
// distance z = distance / radius; zero for z >= 2.
inline double gaspari_cohn(double z) {
  z = std::abs(z);
  if (z >= 2.0) return 0.0;
  const double z2 = z * z, z3 = z2 * z, z4 = z3 * z, z5 = z4 * z;
  if (z <= 1.0) return -0.25 * z5 + 0.5 * z4 + 0.625 * z3 - (5.0 / 3.0) * z2 + 1.0;
  return z5 / 12.0 - 0.5 * z4 + 0.625 * z3 + (5.0 / 3.0) * z2 - 5.0 * z + 4.0 - 2.0 / (3.0 * z);
}

// Taper on a cyclic lattice of `dim` sites.
inline Matrix gaspari_cohn_taper(std::size_t dim, double radius) {
  if (!(radius > 0.0)) throw DomainError("taper radius must be positive");
  Matrix c(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      const std::size_t diff = i > j ? i - j : j - i;
      const double dist = static_cast<double>(std::min(diff, dim - diff));
      c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = gaspari_cohn(dist / radius);
    }
  }
  return c;
}

// Throws unless `taper` is a correlation matrix: symmetric, unit diagonal, PSD.
inline void validate_taper(const Matrix& taper) {
  if (taper.rows() != taper.cols()) throw DomainError("taper must be square");
  if (symmetry_defect(taper) > 1e-12) throw DomainError("taper must be symmetric");
  if ((taper.diagonal().array() - 1.0).abs().maxCoeff() > 1e-12) {
    throw DomainError("taper must have unit diagonal");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(taper, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10) {
    throw DomainError("taper must be positive semi-definite");
  }
}

// Ensemble mean and (inflated, optionally tapered) covariance. The deviations
// already carry the sqrt(inflation) factor, so the untapered covariance is
// deviations * deviations^T / (N - 1).
struct CovarianceEstimate {
  Vector mean;
  Matrix deviations;
  double inflation = 1.0;
  std::optional<Matrix> taper;

  std::size_t members() const { return static_cast<std::size_t>(deviations.cols()); }

  Matrix covariance() const {
    Matrix p = deviations * deviations.transpose() / static_cast<double>(members() - 1);
    if (taper) p = p.cwiseProduct(*taper);
    return p;
  }
};

inline CovarianceEstimate ensemble_mean_cov(const Ensemble& e, double inflation = 1.0,
                                            const std::optional<Matrix>& taper = std::nullopt) {
  if (e.size() < 2) throw DomainError("ensemble needs at least two members");
  if (!(inflation >= 1.0)) throw DomainError("inflation factor must be >= 1");
  CovarianceEstimate ce;
  ce.mean = e.members.rowwise().mean();
  ce.deviations = (e.members.colwise() - ce.mean) * std::sqrt(inflation);
  ce.inflation = inflation;
  if (taper) {
    require_same_size(taper->rows(), static_cast<Eigen::Index>(e.dim()), "taper vs state");
    validate_taper(*taper);
    ce.taper = taper;
  }
  return ce;
}

namespace detail {

inline Eigen::LDLT<Matrix> factor_innovation(const Matrix& s) {
  Eigen::LDLT<Matrix> ldlt(s);
  if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-14)) {
    throw NumericalError("singular innovation covariance (condition number " +
                         std::to_string(condition_number(s)) + ")");
  }
  return ldlt;
}

}  // namespace detail

// K = P H^T (H P H^T + R)^{-1}, by a linear solve.
inline Matrix kalman_gain(const Matrix& p, const ObservationOperator& obs) {
  const Matrix hp = obs.h * p;
  const Matrix s = hp * obs.h.transpose() + obs.r;
  return detail::factor_innovation(s).solve(hp).transpose();
}

// Same gain from an ensemble estimate. Without a taper the d x d covariance is
// never formed: P H^T = D (H D)^T / (N - 1).
inline Matrix kalman_gain(const CovarianceEstimate& ce, const ObservationOperator& obs) {
  if (ce.taper) return kalman_gain(ce.covariance(), obs);
  const double denom = static_cast<double>(ce.members() - 1);
  const Matrix v = obs.h * ce.deviations;
  const Matrix s = v * v.transpose() / denom + obs.r;
  return (detail::factor_innovation(s).solve(v * ce.deviations.transpose()) / denom).transpose();
}

// Perturbed-observation update x_i + K (y - H x_i + eps_i) applied to the
// inflated members mean + deviations_i. Column i of `perturbations` is eps_i.
inline Ensemble stochastic_enkf_update(const Ensemble& e, ConstVectorRef y,
                                       const ObservationOperator& obs,
                                       const CovarianceEstimate& ce,
                                       const Matrix& perturbations) {
  require_same_size(perturbations.cols(), static_cast<Eigen::Index>(e.size()), "perturbation count");
  require_same_size(perturbations.rows(), obs.h.rows(), "perturbation dimension");
  const Matrix k = kalman_gain(ce, obs);
  const Matrix prior = ce.deviations.colwise() + ce.mean;
  Matrix innovations = (-(obs.h * prior)).colwise() + y;
  innovations += perturbations;
  return {prior + k * innovations, e.t};
}

// Draws eps_i ~ N(0, R) from streams keyed on (e.t, i).
inline Matrix observation_perturbations(const ObservationOperator& obs, std::size_t members,
                                        std::size_t t, std::uint64_t seed) {
  const Matrix l = psd_factor(obs.r);
  Matrix eps(obs.r.rows(), static_cast<Eigen::Index>(members));
  for (std::size_t i = 0; i < members; ++i) {
    RngStream rng(seed, {t, i, Purpose::perturb});
    Vector z(obs.r.rows());
    for (auto& v : z) v = rng.normal();
    eps.col(static_cast<Eigen::Index>(i)) = l * z;
  }
  return eps;
}

inline Ensemble stochastic_enkf_update(const Ensemble& e, ConstVectorRef y,
                                       const ObservationOperator& obs,
                                       const CovarianceEstimate& ce, std::uint64_t seed) {
  return stochastic_enkf_update(e, y, obs, ce,
                                observation_perturbations(obs, e.size(), e.t, seed));
}

// Deterministic square-root update by post-multiplication. The mean moves by
// K (y - H m) and the deviations become D W where W is the symmetric square
// root of I - V^T S^{-1} V / (N - 1), V = H D, S = V V^T / (N - 1) + R, which
// gives D W (D W)^T = (N - 1)(I - K H) P.
inline Ensemble square_root_enkf_update(const Ensemble& e, ConstVectorRef y,
                                        const ObservationOperator& obs,
                                        const CovarianceEstimate& ce) {
  if (ce.taper) {
    throw DomainError("square-root update is not defined for a tapered covariance");
  }
  const auto n = static_cast<Eigen::Index>(ce.members());
  const double denom = static_cast<double>(n - 1);
  const Matrix v = obs.h * ce.deviations;
  const Matrix s = v * v.transpose() / denom + obs.r;
  const auto ldlt = detail::factor_innovation(s);
  Matrix constraint = Matrix::Identity(n, n) - v.transpose() * ldlt.solve(v) / denom;
  constraint = 0.5 * (constraint + constraint.transpose()).eval();
  const Matrix w = symmetric_sqrt(constraint);
  const Matrix k = (ldlt.solve(v * ce.deviations.transpose()) / denom).transpose();
  const Vector mean = ce.mean + k * (y - obs.h * ce.mean);
  return {(ce.deviations * w).colwise() + mean, e.t};
}

enum class EnkfVariant { stochastic, square_root };

struct EnkfOptions {
  std::size_t members = 40;
  double inflation = 1.0;
  std::optional<double> taper_radius;
  EnkfVariant variant = EnkfVariant::stochastic;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  double divergence_bound = 1e6;
};

struct EnkfStepSummary {
  std::size_t t = 0;
  Vector mean;
  Vector spread;                 // per-component ensemble standard deviation
  double rmse = std::nan("");    // against the truth when provided
  double gain_norm = std::nan("");
  bool updated = false;
};

struct EnkfRun {
  Ensemble final;
  std::vector<EnkfStepSummary> steps;  // t = 1..T
};

inline EnkfStepSummary summarize_ensemble(const Ensemble& e) {
  EnkfStepSummary s;
  s.t = e.t;
  s.mean = e.members.rowwise().mean();
  const Matrix dev = e.members.colwise() - s.mean;
  s.spread = (dev.rowwise().squaredNorm() / static_cast<double>(e.size() - 1)).cwiseSqrt();
  return s;
}

template <StateSpaceModel M>
Ensemble initialize_ensemble(const M& model, std::size_t n, std::uint64_t seed,
                             unsigned threads = 1) {
  Ensemble e{Matrix(static_cast<Eigen::Index>(model.state_dim()), static_cast<Eigen::Index>(n)), 0};
  parallel_for(n, threads, [&](std::size_t i) {
    RngStream rng(seed, {0, i, Purpose::initial});
    model.sample_initial(e.members.col(static_cast<Eigen::Index>(i)), rng);
  });
  return e;
}

template <StateSpaceModel M>
void propagate_ensemble(Ensemble& e, const M& model, std::uint64_t seed, unsigned threads = 1) {
  const std::size_t t = e.t + 1;
  Matrix next(e.members.rows(), e.members.cols());
  parallel_for(e.size(), threads, [&](std::size_t i) {
    const auto col = static_cast<Eigen::Index>(i);
    RngStream rng(seed, {t, i, Purpose::propagate});
    model.propagate(e.members.col(col), next.col(col), rng);
  });
  e.members = std::move(next);
  e.t = t;
}

// Forecast / analysis cycle over observation columns y_1..y_T. A column
// containing NaN is treated as missing (forecast only). `truth`, if given,
// holds x_1..x_T as columns and enables the RMSE record.
template <LinearGaussianObserved M>
EnkfRun run_enkf(const M& model, const Matrix& observations, const EnkfOptions& options,
                 const std::optional<Matrix>& truth = std::nullopt) {
  if (options.members < 2) throw DomainError("run_enkf: need at least two members");
  const ObservationOperator obs = ObservationOperator::from_model(model);
  obs.validate(model.state_dim());
  if (truth) require_same_size(truth->cols(), observations.cols(), "truth length");
  std::optional<Matrix> taper;
  if (options.taper_radius) taper = gaspari_cohn_taper(model.state_dim(), *options.taper_radius);
  if (taper && options.variant == EnkfVariant::square_root) {
    throw DomainError("square-root variant cannot be combined with tapering");
  }

  EnkfRun run;
  run.final = initialize_ensemble(model, options.members, options.seed, options.threads);
  for (Eigen::Index k = 0; k < observations.cols(); ++k) {
    Ensemble& e = run.final;
    try {
      propagate_ensemble(e, model, options.seed, options.threads);
    } catch (const NumericalError& err) {
      throw DivergenceError("ensemble forecast failed: " + err.message(), e.t + 1);
    }
    const auto y = observations.col(k);
    double gain_norm = std::nan("");
    const bool observed = y.allFinite();
    if (observed) {
      const CovarianceEstimate ce = ensemble_mean_cov(e, options.inflation, taper);
      try {
        if (options.variant == EnkfVariant::square_root) {
          e = square_root_enkf_update(e, y, obs, ce);
        } else {
          e = stochastic_enkf_update(e, y, obs, ce, options.seed);
        }
      } catch (const NumericalError& err) {
        throw NumericalError(err.message(), e.t);
      }
      gain_norm = kalman_gain(ce, obs).norm();
    }
    if (!e.members.allFinite() || e.members.cwiseAbs().maxCoeff() > options.divergence_bound) {
      throw DivergenceError("ensemble diverged", e.t);
    }
    EnkfStepSummary s = summarize_ensemble(e);
    s.gain_norm = gain_norm;
    s.updated = observed;
    if (truth) s.rmse = std::sqrt((s.mean - truth->col(k)).squaredNorm() / static_cast<double>(s.mean.size()));
    run.steps.push_back(std::move(s));
  }
  return run;
}

}  // namespace pfda
