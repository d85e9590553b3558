#pragma once

#include <cmath>
#include <concepts>
#include <vector>

#include "pfda/error.hpp"
#include "pfda/linalg.hpp"
#include "pfda/model.hpp"
#include "pfda/models/linear_gaussian.hpp"
#include "pfda/parallel.hpp"
#include "pfda/particle_filter.hpp"
#include "pfda/resample.hpp"
#include "pfda/rng.hpp"

namespace pfda {

// First-stage weight multiplier and proposal transition of an auxiliary
// particle filter. The proposal density must be positive wherever the model
// transition is.
template <class P>
concept AuxiliaryProposal = requires(const P& p, ConstVectorRef x, ConstVectorRef x_prev,
                                     ConstVectorRef y, VectorRef out, RngStream& rng) {
  { p.log_first_stage_weight(x_prev, y) } -> std::convertible_to<double>;
  p.propose(x_prev, y, out, rng);
  { p.log_proposal_density(x, x_prev, y) } -> std::convertible_to<double>;
};

// Flat first stage and the model's own transition: the auxiliary filter then
// coincides with the bootstrap filter.
template <StateSpaceModel M>
class BootstrapProposal {
 public:
  explicit BootstrapProposal(const M& model) : model_(&model) {}

  double log_first_stage_weight(ConstVectorRef, ConstVectorRef) const { return 0.0; }
  void propose(ConstVectorRef x_prev, ConstVectorRef, VectorRef out, RngStream& rng) const {
    model_->propagate(x_prev, out, rng);
  }
  double log_proposal_density(ConstVectorRef x, ConstVectorRef x_prev, ConstVectorRef) const {
    return model_->log_transition_density(x, x_prev);
  }

 private:
  const M* model_;
};

// Locally optimal proposal for a linear-Gaussian model:
//   first stage   p(y | x_prev) = N(y; H Phi x_prev, H Q H^T + R)
//   transition    p(x | x_prev, y) = N(Phi x_prev + K (y - H Phi x_prev), (I - K H) Q)
// with K = Q H^T (H Q H^T + R)^{-1}. Makes every second-stage weight equal.
class LinearGaussianOptimalProposal {
 public:
  explicit LinearGaussianOptimalProposal(const LinearGaussianModel& model)
      : phi_(model.parameters().transition), h_(model.parameters().observation) {
    const auto& p = model.parameters();
    const Matrix s = h_ * p.state_noise * h_.transpose() + p.obs_noise;
    gain_ = Eigen::LLT<Matrix>(s).solve(h_ * p.state_noise).transpose();
    Matrix cov = (Matrix::Identity(phi_.rows(), phi_.rows()) - gain_ * h_) * p.state_noise;
    cov = 0.5 * (cov + cov.transpose()).eval();
    predictive_ = GaussianKernel(s);
    proposal_ = GaussianKernel(cov);
    factor_ = proposal_.factor();
  }

  double log_first_stage_weight(ConstVectorRef x_prev, ConstVectorRef y) const {
    return predictive_.log_density(y - h_ * (phi_ * x_prev));
  }

  void propose(ConstVectorRef x_prev, ConstVectorRef y, VectorRef out, RngStream& rng) const {
    Vector z(factor_.cols());
    for (auto& v : z) v = rng.normal();
    out = mean(x_prev, y) + factor_ * z;
  }

  double log_proposal_density(ConstVectorRef x, ConstVectorRef x_prev, ConstVectorRef y) const {
    return proposal_.log_density(x - mean(x_prev, y));
  }

 private:
  Vector mean(ConstVectorRef x_prev, ConstVectorRef y) const {
    const Vector pred = phi_ * x_prev;
    return pred + gain_ * (y - h_ * pred);
  }

  Matrix phi_;
  Matrix h_;
  Matrix gain_;
  Matrix factor_;
  GaussianKernel predictive_;
  GaussianKernel proposal_;
};

// Auxiliary particle filter step. Resamples with first-stage weights
// w~_i proportional to w_i * first_stage(x_i, y), proposes from P~ and weights
//   W_i = (w_{A(i)} / w~_{A(i)}) * p(x_i | x_{A(i)}) g(y | x_i) / P~(x_i | x_{A(i)}, y).
// The mean of the W_i is the per-step likelihood estimate.
template <StateSpaceModel M, AuxiliaryProposal P>
StepInfo auxiliary_step(ParticleSystem& ps, ConstVectorRef y, const M& model,
                        const P& proposal, const FilterOptions& options) {
  require_transition_density(model, "auxiliary particle filter");
  const std::size_t n = ps.size();
  const std::size_t t = ps.t + 1;

  std::vector<double> first_stage(n);
  parallel_for(n, options.threads, [&](std::size_t i) {
    first_stage[i] = std::log(ps.weights[i]) +
                     proposal.log_first_stage_weight(ps.particles.col(static_cast<Eigen::Index>(i)), y);
  });
  std::vector<double> first_w;
  try {
    first_w = normalize_log_weights(first_stage).weights;
  } catch (const DegenerateWeightsError& e) {
    throw DegenerateWeightsError(e.message(), t);
  }

  StepInfo info;
  info.resampled = true;
  RngStream rrng(options.seed, {t, 0, Purpose::resample});
  info.ancestors = resample(options.scheme, first_w, rrng);

  Matrix next(ps.particles.rows(), ps.particles.cols());
  std::vector<double> log_w(n);
  parallel_for(n, options.threads, [&](std::size_t i) {
    const auto col = static_cast<Eigen::Index>(i);
    const std::size_t a = info.ancestors[i];
    const auto parent = ps.particles.col(static_cast<Eigen::Index>(a));
    RngStream rng(options.seed, {t, i, Purpose::propagate});
    proposal.propose(parent, y, next.col(col), rng);
    log_w[i] = std::log(ps.weights[a]) - std::log(first_w[a]) +
               model.log_transition_density(next.col(col), parent) +
               model.log_obs_density(y, next.col(col)) -
               proposal.log_proposal_density(next.col(col), parent, y);
  });
  ps.particles = std::move(next);
  info.log_increment = detail::normalize_into(ps, log_w, t) - std::log(static_cast<double>(n));
  ps.log_lik += info.log_increment;
  ps.t = t;
  return info;
}

template <StateSpaceModel M, AuxiliaryProposal P>
FilterRun run_auxiliary_filter(const M& model, const P& proposal, const Matrix& observations,
                               std::size_t n, const FilterOptions& options = {}) {
  if (n < 2) throw DomainError("run_auxiliary_filter: need at least two particles");
  FilterRun run;
  run.final = initialize_particles(model, n, options.seed, options.threads);
  run.store.record(run.final.particles, run.final.weights, {}, options.storage);
  for (Eigen::Index k = 0; k < observations.cols(); ++k) {
    StepInfo info = auxiliary_step(run.final, observations.col(k), model, proposal, options);
    run.log_increments.push_back(info.log_increment);
    run.store.record(run.final.particles, run.final.weights, std::move(info.ancestors),
                     options.storage);
    if (options.summaries) run.summaries.push_back(summarize(run.final));
  }
  run.log_lik = run.final.log_lik;
  return run;
}

}  // namespace pfda
