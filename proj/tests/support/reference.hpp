#pragma once

// Test-side reference computations, independent of the library's filter
// and smoother code: dense joint-Gaussian formulas for linear-Gaussian
// models, brute-force enumeration and small statistics helpers.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "pfda/models/linear_gaussian.hpp"

namespace ref {

using pfda::Matrix;
using pfda::Vector;

// Stacked (x_0..x_T, y_1..y_T) is jointly Gaussian. Builds its mean and
// covariance by writing every variable as a linear map of the independent
// noises (x_0, w_1..w_T, v_1..v_T).
struct JointGaussian {
  Vector mean;
  Matrix cov;
  Eigen::Index d = 0, q = 0, steps = 0;

  Eigen::Index state_offset(Eigen::Index t) const { return t * d; }
  Eigen::Index obs_offset(Eigen::Index t) const { return (steps + 1) * d + (t - 1) * q; }
};

inline JointGaussian joint_gaussian(const pfda::LinearGaussianParameters& p, Eigen::Index steps) {
  JointGaussian j;
  j.d = p.transition.rows();
  j.q = p.observation.rows();
  j.steps = steps;
  const Eigen::Index d = j.d, q = j.q;
  const Eigen::Index nvars = (steps + 1) * d + steps * q;
  const Eigen::Index nnoise = (steps + 1) * d + steps * q;
  Matrix a = Matrix::Zero(nvars, nnoise);  // variables = mean + a * noise
  Vector mu = Vector::Zero(nvars);
  Matrix noise_cov = Matrix::Zero(nnoise, nnoise);
  noise_cov.block(0, 0, d, d) = p.initial_cov;
  for (Eigen::Index t = 1; t <= steps; ++t) noise_cov.block(t * d, t * d, d, d) = p.state_noise;
  for (Eigen::Index t = 1; t <= steps; ++t) {
    const Eigen::Index o = (steps + 1) * d + (t - 1) * q;
    noise_cov.block(o, o, q, q) = p.obs_noise;
  }
  a.block(0, 0, d, nnoise).setZero();
  a.block(0, 0, d, d).setIdentity();
  mu.segment(0, d) = p.initial_mean;
  for (Eigen::Index t = 1; t <= steps; ++t) {
    a.block(t * d, 0, d, nnoise) = p.transition * a.block((t - 1) * d, 0, d, nnoise);
    a.block(t * d, t * d, d, d) += Matrix::Identity(d, d);
    mu.segment(t * d, d) = p.transition * mu.segment((t - 1) * d, d);
  }
  for (Eigen::Index t = 1; t <= steps; ++t) {
    const Eigen::Index o = j.obs_offset(t);
    a.block(o, 0, q, nnoise) = p.observation * a.block(t * d, 0, d, nnoise);
    a.block(o, o, q, q) += Matrix::Identity(q, q);
    mu.segment(o, q) = p.observation * mu.segment(t * d, d);
  }
  j.mean = mu;
  j.cov = a * noise_cov * a.transpose();
  return j;
}

inline double mvn_log_density(const Vector& x, const Vector& mean, const Matrix& cov) {
  Eigen::LDLT<Matrix> ldlt(cov);
  const Vector r = x - mean;
  const double quad = r.dot(ldlt.solve(r));
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < ldlt.vectorD().size(); ++i) logdet += std::log(ldlt.vectorD()[i]);
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * M_PI) + logdet + quad);
}

// Observation columns y_1..y_T stacked.
inline Vector stack(const Matrix& obs) {
  return Eigen::Map<const Vector>(obs.data(), obs.size());
}

// log p(y_1:T) from the dense joint covariance.
inline double dense_log_likelihood(const pfda::LinearGaussianParameters& p, const Matrix& obs) {
  const JointGaussian j = joint_gaussian(p, obs.cols());
  const Eigen::Index o = j.obs_offset(1);
  const Eigen::Index n = obs.size();
  return mvn_log_density(stack(obs), j.mean.segment(o, n), j.cov.block(o, o, n, n));
}

struct Moments {
  Vector mean;
  Matrix cov;
};

// Law of x_s given y_1..y_upto by Gaussian conditioning of the joint.
inline Moments dense_conditional(const pfda::LinearGaussianParameters& p, const Matrix& obs,
                                 Eigen::Index s, Eigen::Index upto) {
  const JointGaussian j = joint_gaussian(p, obs.cols());
  const Eigen::Index xs = j.state_offset(s);
  const Eigen::Index o = j.obs_offset(1);
  const Eigen::Index n = upto * j.q;
  if (n == 0) return {j.mean.segment(xs, j.d), j.cov.block(xs, xs, j.d, j.d)};
  const Matrix sxy = j.cov.block(xs, o, j.d, n);
  const Matrix syy = j.cov.block(o, o, n, n);
  const Vector y = stack(obs.leftCols(upto));
  Eigen::LDLT<Matrix> ldlt(syy);
  Moments m;
  m.mean = j.mean.segment(xs, j.d) + sxy * ldlt.solve(y - j.mean.segment(o, n));
  m.cov = j.cov.block(xs, xs, j.d, j.d) - sxy * ldlt.solve(sxy.transpose());
  return m;
}

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(ranks(a), ranks(b));
}

// Random symmetric positive definite matrix with eigenvalues in [lo, hi].
inline Matrix random_spd(Eigen::Index d, std::mt19937_64& gen, double lo = 0.5, double hi = 2.0) {
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix g(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index k = 0; k < d; ++k) g(i, k) = z(gen);
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix q = qr.householderQ();
  Vector ev(d);
  for (auto& e : ev) e = u(gen);
  return q * ev.asDiagonal() * q.transpose();
}

// Random matrix with spectral radius at most `radius`.
inline Matrix random_stable(Eigen::Index d, std::mt19937_64& gen, double radius = 0.9) {
  std::normal_distribution<double> z;
  Matrix a(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index k = 0; k < d; ++k) a(i, k) = z(gen);
  const double rho = a.eigenvalues().cwiseAbs().maxCoeff();
  return a * (radius / rho);
}

}  // namespace ref
