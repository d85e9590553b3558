#pragma once

#include <optional>

#include "pfda/error.hpp"
#include "pfda/linalg.hpp"
#include "pfda/model.hpp"
#include "pfda/rng.hpp"

namespace pfda {

struct LinearGaussianParameters {
  Matrix transition;      // Phi, d x d
  Matrix state_noise;     // Q, d x d
  Matrix observation;     // H, q x d
  Matrix obs_noise;       // R, q x q
  Vector initial_mean;    // m0
  Matrix initial_cov;     // P0

  // Scalar model x' = phi x + N(0, q), y = h x + N(0, r), x_0 ~ N(m0, p0).
  static LinearGaussianParameters scalar(double phi, double q, double h, double r,
                                         double m0, double p0) {
    LinearGaussianParameters p;
    p.transition = Matrix::Constant(1, 1, phi);
    p.state_noise = Matrix::Constant(1, 1, q);
    p.observation = Matrix::Constant(1, 1, h);
    p.obs_noise = Matrix::Constant(1, 1, r);
    p.initial_mean = Vector::Constant(1, m0);
    p.initial_cov = Matrix::Constant(1, 1, p0);
    return p;
  }

  std::size_t state_dim() const { return static_cast<std::size_t>(transition.rows()); }
  std::size_t obs_dim() const { return static_cast<std::size_t>(observation.rows()); }

  void validate() const {
    const Eigen::Index d = transition.rows();
    if (d < 1) throw DomainError("linear-Gaussian: empty transition matrix");
    require_same_size(transition.cols(), d, "transition matrix must be square");
    require_same_size(state_noise.rows(), d, "state noise rows");
    require_same_size(state_noise.cols(), d, "state noise cols");
    require_same_size(observation.cols(), d, "observation matrix cols");
    const Eigen::Index q = observation.rows();
    if (q < 1) throw DomainError("linear-Gaussian: empty observation matrix");
    require_same_size(obs_noise.rows(), q, "observation noise rows");
    require_same_size(obs_noise.cols(), q, "observation noise cols");
    require_same_size(initial_mean.size(), d, "initial mean");
    require_same_size(initial_cov.rows(), d, "initial covariance rows");
    require_same_size(initial_cov.cols(), d, "initial covariance cols");
    for (const Matrix* m : {&state_noise, &obs_noise, &initial_cov}) {
      if (!m->allFinite() || symmetry_defect(*m) > 1e-10 * std::max(1.0, m->cwiseAbs().maxCoeff())) {
        throw DomainError("linear-Gaussian: covariance matrices must be finite and symmetric");
      }
    }
  }
};

// Phi x + w.
inline Vector lg_propagate(ConstVectorRef x, const Matrix& transition, ConstVectorRef w) {
  require_same_size(transition.cols(), x.size(), "transition vs state");
  require_same_size(transition.rows(), w.size(), "transition vs noise");
  return transition * x + w;
}

// X_t | x_{t-1} ~ N(Phi x_{t-1}, Q),  Y_t | x_t ~ N(H x_t, R),  X_0 ~ N(m0, P0).
class LinearGaussianModel {
 public:
  explicit LinearGaussianModel(LinearGaussianParameters p) : p_(std::move(p)) {
    p_.validate();
    state_factor_ = psd_factor(p_.state_noise);
    obs_factor_ = psd_factor(p_.obs_noise);
    init_factor_ = psd_factor(p_.initial_cov);
    obs_kernel_ = GaussianKernel(p_.obs_noise);
    if (Eigen::LLT<Matrix>(p_.state_noise).info() == Eigen::Success) {
      trans_kernel_ = GaussianKernel(p_.state_noise);
    }
    if (Eigen::LLT<Matrix>(p_.initial_cov).info() == Eigen::Success) {
      init_kernel_ = GaussianKernel(p_.initial_cov);
    }
    scalar_ = state_dim() == 1 && obs_dim() == 1;
    if (scalar_) {
      obs_offset_ = kLogTwoPi + std::log(p_.obs_noise(0, 0));
      trans_offset_ = kLogTwoPi + std::log(p_.state_noise(0, 0));
    }
  }

  const LinearGaussianParameters& parameters() const { return p_; }

  std::size_t state_dim() const { return p_.state_dim(); }
  std::size_t obs_dim() const { return p_.obs_dim(); }
  bool has_transition_density() const { return trans_kernel_.has_value(); }

  void sample_initial(VectorRef out, RngStream& rng) const {
    out = p_.initial_mean + init_factor_ * standard_normal(state_dim(), rng);
  }

  void propagate(ConstVectorRef x, VectorRef out, RngStream& rng) const {
    if (scalar_) {
      out[0] = p_.transition(0, 0) * x[0] + state_factor_(0, 0) * rng.normal();
      return;
    }
    out = p_.transition * x + state_factor_ * standard_normal(state_dim(), rng);
  }

  void sample_observation(ConstVectorRef x, VectorRef out, RngStream& rng) const {
    out = p_.observation * x + obs_factor_ * standard_normal(obs_dim(), rng);
  }

  double log_obs_density(ConstVectorRef y, ConstVectorRef x) const {
    if (scalar_) {
      const double r = y[0] - p_.observation(0, 0) * x[0];
      return -0.5 * (obs_offset_ + r * r / p_.obs_noise(0, 0));
    }
    return obs_kernel_.log_density(y - p_.observation * x);
  }

  double log_transition_density(ConstVectorRef x_next, ConstVectorRef x) const {
    if (!trans_kernel_) {
      throw CapabilityError("linear-Gaussian model with singular Q has no transition density");
    }
    if (scalar_) {
      const double r = x_next[0] - p_.transition(0, 0) * x[0];
      return -0.5 * (trans_offset_ + r * r / p_.state_noise(0, 0));
    }
    return trans_kernel_->log_density(x_next - p_.transition * x);
  }

  double log_initial_density(ConstVectorRef x) const {
    if (!init_kernel_) {
      throw CapabilityError("linear-Gaussian model with singular P0 has no initial density");
    }
    return init_kernel_->log_density(x - p_.initial_mean);
  }

  Matrix obs_matrix() const { return p_.observation; }
  Matrix obs_noise_cov() const { return p_.obs_noise; }

 private:
  static Vector standard_normal(std::size_t n, RngStream& rng) {
    Vector z(static_cast<Eigen::Index>(n));
    for (auto& v : z) v = rng.normal();
    return z;
  }

  LinearGaussianParameters p_;
  Matrix state_factor_;
  Matrix obs_factor_;
  Matrix init_factor_;
  GaussianKernel obs_kernel_;
  std::optional<GaussianKernel> trans_kernel_;
  std::optional<GaussianKernel> init_kernel_;
  bool scalar_ = false;
  double obs_offset_ = 0.0;
  double trans_offset_ = 0.0;
};

static_assert(CompleteDataModel<LinearGaussianModel>);
static_assert(LinearGaussianObserved<LinearGaussianModel>);

}  // namespace pfda
