#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>

#include "pfda/error.hpp"

namespace pfda {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorRef = Eigen::Ref<Vector>;
using ConstVectorRef = Eigen::Ref<const Vector>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

inline double log_sum_exp(std::span<const double> v) {
  double hi = kNegInf;
  for (double x : v) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

inline bool all_finite(ConstVectorRef x) { return x.allFinite(); }

inline void require_same_size(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw DomainError(std::string("dimension mismatch: ") + what + " (" +
                      std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

inline double symmetry_defect(const Matrix& a) {
  return (a - a.transpose()).cwiseAbs().maxCoeff();
}

// Factor F with F F^T = S for a symmetric positive semi-definite S. Uses
// Cholesky when S is positive definite, otherwise a symmetric eigen square
// root with eigenvalues down to -tol clipped at zero.
inline Matrix psd_factor(const Matrix& s, double tol = 1e-10) {
  if (s.size() == 0) return s;
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
  const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -tol * scale) {
    throw DomainError("covariance matrix is not positive semi-definite");
  }
  Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

// Symmetric PSD square root: W = V diag(sqrt(l)) V^T.
inline Matrix symmetric_sqrt(const Matrix& s, double tol = 1e-10) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
  const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -tol * scale) {
    throw NumericalError("square-root constraint matrix is not positive semi-definite");
  }
  Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

inline double condition_number(const Matrix& s) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s, Eigen::EigenvaluesOnly);
  const auto& ev = eig.eigenvalues();
  const double lo = ev.cwiseAbs().minCoeff();
  const double hi = ev.cwiseAbs().maxCoeff();
  return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
}

// Multivariate normal log-density from a precomputed Cholesky factor of the
// covariance.
inline double gaussian_log_density(ConstVectorRef x, ConstVectorRef mean,
                                   const Eigen::LLT<Matrix>& chol) {
  const Vector z = chol.matrixL().solve(x - mean);
  const double log_det = 2.0 * chol.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * kLogTwoPi + log_det + z.squaredNorm());
}

// Zero-mean Gaussian with a fixed covariance; caches the Cholesky factor and
// normalizing constant for repeated evaluation.
class GaussianKernel {
 public:
  GaussianKernel() = default;
  explicit GaussianKernel(const Matrix& cov) : chol_(cov) {
    if (cov.rows() == 0 || chol_.info() != Eigen::Success) {
      throw DomainError("covariance matrix is not positive definite");
    }
    log_norm_ = -0.5 * (static_cast<double>(cov.rows()) * kLogTwoPi +
                        2.0 * chol_.matrixLLT().diagonal().array().log().sum());
  }

  double log_density(ConstVectorRef residual) const {
    if (residual.size() == 1) {
      const double z = residual[0] / chol_.matrixLLT()(0, 0);
      return log_norm_ - 0.5 * z * z;
    }
    return log_norm_ - 0.5 * chol_.matrixL().solve(residual).squaredNorm();
  }

  Matrix factor() const { return chol_.matrixL(); }

 private:
  Eigen::LLT<Matrix> chol_;
  double log_norm_ = 0.0;
};

inline double gaussian_log_density(double x, double mean, double variance) {
  const double r = x - mean;
  return -0.5 * (kLogTwoPi + std::log(variance) + r * r / variance);
}

}  // namespace pfda
