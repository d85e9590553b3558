#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pfda/error.hpp"
#include "pfda/linalg.hpp"
#include "pfda/model.hpp"
#include "pfda/particle_filter.hpp"
#include "pfda/resample.hpp"
#include "pfda/rng.hpp"
#include "pfda/smooth.hpp"
#include "pfda/trajectory_store.hpp"

namespace pfda {

template <class P>
concept ParameterPrior = requires(const P& p, const Vector& theta) {
  { p.log_density(theta) } -> std::convertible_to<double>;
};

template <class K>
concept ProposalKernel = requires(const K& k, const Vector& a, const Vector& b, RngStream& rng) {
  { k.propose(a, rng) } -> std::convertible_to<Vector>;
  { k.log_density(a, b) } -> std::convertible_to<double>;  // log q(a | b)
};

// Independent uniform priors on a box; -inf outside.
struct UniformBoxPrior {
  Vector lower;
  Vector upper;

  double log_density(const Vector& theta) const {
    double lp = 0.0;
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      if (!(theta[k] >= lower[k] && theta[k] <= upper[k])) return kNegInf;
      lp -= std::log(upper[k] - lower[k]);
    }
    return lp;
  }

  Vector sample(RngStream& rng) const {
    Vector th(lower.size());
    for (Eigen::Index k = 0; k < th.size(); ++k) th[k] = lower[k] + (upper[k] - lower[k]) * rng.uniform();
    return th;
  }
};

// theta' = theta + scale .* z, z ~ N(0, I). Symmetric. A zero scale keeps
// that component fixed (point mass, log density 0 at theta).
struct GaussianRandomWalk {
  Vector scale;

  Vector propose(const Vector& theta, RngStream& rng) const {
    Vector out = theta;
    for (Eigen::Index k = 0; k < out.size(); ++k) out[k] += scale[k] * rng.normal();
    return out;
  }

  double log_density(const Vector& to, const Vector& from) const {
    double lp = 0.0;
    for (Eigen::Index k = 0; k < to.size(); ++k) {
      if (scale[k] == 0.0) {
        if (to[k] != from[k]) return kNegInf;
        continue;
      }
      lp += gaussian_log_density(to[k], from[k], scale[k] * scale[k]);
    }
    return lp;
  }
};

struct LikelihoodEstimate {
  double log_lik = 0.0;
  std::optional<Matrix> path;
};

// Anything callable as estimator(theta, seed) -> LikelihoodEstimate; throws
// DomainError for an invalid theta or AlgorithmError when the filter fails.
template <class E>
concept LikelihoodEstimator = requires(const E& e, const Vector& theta, std::uint64_t seed) {
  { e(theta, seed) } -> std::convertible_to<LikelihoodEstimate>;
};

// Unbiased likelihood estimate from a bootstrap filter run on the model built
// from theta. With sample_path, a trajectory is drawn from the final weights.
template <class Builder>
class BootstrapLikelihood {
 public:
  BootstrapLikelihood(Builder builder, Matrix observations, std::size_t particles,
                      FilterOptions options = {}, bool sample_path = false)
      : builder_(std::move(builder)),
        obs_(std::move(observations)),
        particles_(particles),
        options_(options),
        sample_path_(sample_path) {
    options_.summaries = false;
    options_.storage = sample_path_ ? StorageMode::full : StorageMode::none;
  }

  LikelihoodEstimate operator()(const Vector& theta, std::uint64_t seed) const {
    const auto model = builder_(theta);
    FilterOptions opt = options_;
    opt.seed = seed;
    FilterRun run = run_bootstrap_filter(model, obs_, particles_, opt);
    LikelihoodEstimate est{run.log_lik, std::nullopt};
    if (sample_path_) {
      RngStream rng(seed, {0, 0, Purpose::select});
      est.path = extract_trajectory(run.store, sample_categorical(run.final.weights, rng));
    }
    return est;
  }

  std::size_t particles() const { return particles_; }

 private:
  Builder builder_;
  Matrix obs_;
  std::size_t particles_;
  FilterOptions options_;
  bool sample_path_;
};

struct McmcState {
  Vector theta;
  double log_lik_hat = 0.0;  // NaN for particle Gibbs states
  std::optional<Matrix> path;
};

// log of the Metropolis-Hastings ratio with estimated likelihoods,
// log[p(th') q(th | th') L' / (p(th) q(th' | th) L)].
inline double pmmh_log_acceptance(double log_prior_cur, double log_lik_cur, double log_prior_prop,
                                  double log_lik_prop, double log_q_forward, double log_q_backward) {
  if (log_prior_prop == kNegInf || log_lik_prop == kNegInf) return kNegInf;
  return (log_prior_prop + log_q_backward + log_lik_prop) -
         (log_prior_cur + log_q_forward + log_lik_cur);
}

struct PmmhStep {
  McmcState state;
  bool accepted = false;
  bool estimate_failed = false;
  double log_alpha = kNegInf;
};

// One particle marginal Metropolis-Hastings iteration. Randomness for the
// proposal, the filter and the accept decision is keyed on (seed, iteration).
template <ParameterPrior Prior, ProposalKernel Kernel, LikelihoodEstimator Estimator>
PmmhStep pmmh_step(const McmcState& cur, const Prior& prior, const Kernel& kernel,
                   const Estimator& estimator, std::uint64_t seed, std::uint64_t iteration) {
  if (!std::isfinite(cur.log_lik_hat)) {
    throw DomainError("pmmh_step: current log-likelihood estimate must be finite");
  }
  PmmhStep out{cur, false, false, kNegInf};
  RngStream prop_rng(seed, {iteration, 0, Purpose::parameter});
  Vector proposal = kernel.propose(cur.theta, prop_rng);
  const double lp_prop = prior.log_density(proposal);
  if (lp_prop == kNegInf) return out;

  LikelihoodEstimate est;
  try {
    est = estimator(proposal, derive_seed(seed, iteration, 0, Purpose::filter));
  } catch (const AlgorithmError& e) {
    std::clog << "pmmh: likelihood estimate failed at iteration " << iteration << ": " << e.what()
              << "; treating as zero likelihood\n";
    out.estimate_failed = true;
    return out;
  } catch (const DomainError& e) {
    std::clog << "pmmh: invalid parameter at iteration " << iteration << ": " << e.what()
              << "; treating as zero likelihood\n";
    out.estimate_failed = true;
    return out;
  }
  out.log_alpha = pmmh_log_acceptance(prior.log_density(cur.theta), cur.log_lik_hat, lp_prop,
                                      est.log_lik, kernel.log_density(proposal, cur.theta),
                                      kernel.log_density(cur.theta, proposal));
  RngStream u_rng(seed, {iteration, 0, Purpose::mcmc});
  if (std::log(u_rng.uniform_open()) < out.log_alpha) {
    out.accepted = true;
    out.state = McmcState{std::move(proposal), est.log_lik, std::move(est.path)};
  }
  return out;
}

struct McmcChain {
  std::vector<McmcState> states;  // [0] is the initial state
  std::vector<char> accepted;     // per state; [0] is false
  std::size_t burn_in = 0;
  std::size_t failed_estimates = 0;

  std::size_t iterations() const { return states.empty() ? 0 : states.size() - 1; }

  // Fraction of accepted moves among iterations after burn-in.
  double acceptance_rate() const {
    std::size_t n = 0, acc = 0;
    for (std::size_t i = std::max<std::size_t>(1, burn_in + 1); i < states.size(); ++i) {
      ++n;
      acc += accepted[i] ? 1 : 0;
    }
    return n ? static_cast<double>(acc) / static_cast<double>(n) : std::nan("");
  }

  // Sample variance of the stored log-likelihood estimates after burn-in.
  double log_lik_variance() const {
    std::vector<double> v;
    for (std::size_t i = burn_in; i < states.size(); ++i) {
      if (std::isfinite(states[i].log_lik_hat)) v.push_back(states[i].log_lik_hat);
    }
    if (v.size() < 2) return std::nan("");
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(v.size() - 1);
  }
};

// Thrown when a chain cannot continue; carries everything sampled so far.
class ChainAborted : public AlgorithmError {
 public:
  ChainAborted(const std::string& what, std::size_t iteration, McmcChain prefix)
      : AlgorithmError(what, iteration), prefix_(std::make_shared<McmcChain>(std::move(prefix))) {}
  const McmcChain& prefix() const { return *prefix_; }

 private:
  std::shared_ptr<McmcChain> prefix_;
};

template <ParameterPrior Prior, ProposalKernel Kernel, LikelihoodEstimator Estimator>
McmcChain run_pmmh(const Vector& initial_theta, std::size_t iterations, std::size_t burn_in,
                   const Prior& prior, const Kernel& kernel, const Estimator& estimator,
                   std::uint64_t seed) {
  McmcChain chain;
  chain.burn_in = burn_in;
  if (!std::isfinite(prior.log_density(initial_theta))) {
    throw DomainError("run_pmmh: initial parameter outside prior support");
  }
  LikelihoodEstimate init = estimator(initial_theta, derive_seed(seed, 0, 1, Purpose::filter));
  if (!std::isfinite(init.log_lik)) throw AlgorithmError("run_pmmh: initial likelihood estimate is zero", 0);
  chain.states.push_back({initial_theta, init.log_lik, std::move(init.path)});
  chain.accepted.push_back(0);
  chain.states.reserve(iterations + 1);
  for (std::size_t it = 1; it <= iterations; ++it) {
    try {
      PmmhStep step = pmmh_step(chain.states.back(), prior, kernel, estimator, seed, it);
      chain.failed_estimates += step.estimate_failed ? 1 : 0;
      chain.states.push_back(std::move(step.state));
      chain.accepted.push_back(step.accepted ? 1 : 0);
    } catch (const std::exception& e) {
      throw ChainAborted(std::string("pmmh aborted: ") + e.what(), it, std::move(chain));
    }
  }
  return chain;
}

struct TuningRound {
  std::size_t particles = 0;
  double log_lik_variance = 0.0;
};

struct TuningReport {
  std::vector<TuningRound> rounds;
  std::size_t recommended = 0;
  double target = 1.5;
};

inline double sample_variance(std::span<const double> v) {
  if (v.size() < 2) return std::nan("");
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

// Var(log L-hat) at theta from `replicates` independent filter runs.
template <class EstimatorFactory>
double log_lik_variance(const EstimatorFactory& make_estimator, const Vector& theta,
                        std::size_t particles, std::size_t replicates, std::uint64_t seed) {
  const auto estimator = make_estimator(particles);
  std::vector<double> ll(replicates);
  for (std::size_t r = 0; r < replicates; ++r) {
    ll[r] = estimator(theta, derive_seed(seed, particles, r, Purpose::replicate)).log_lik;
  }
  return sample_variance(ll);
}

// Particle-count tuning: Var(log L-hat) scales roughly like 1/N, so each round
// rescales N by variance / target and re-estimates at the new N.
// make_estimator(N) must return a LikelihoodEstimator using N particles.
template <class EstimatorFactory>
TuningReport tune_particle_count(const EstimatorFactory& make_estimator, const Vector& theta,
                                 std::size_t pilot_particles, std::uint64_t seed,
                                 std::size_t replicates = 20, double target = 1.5,
                                 std::size_t rounds = 2) {
  if (pilot_particles < 2 || replicates < 2 || rounds < 1) {
    throw DomainError("tune_particle_count: need >= 2 particles, >= 2 replicates, >= 1 round");
  }
  TuningReport report;
  report.target = target;
  std::size_t n = pilot_particles;
  for (std::size_t r = 0; r < rounds; ++r) {
    const double var = log_lik_variance(make_estimator, theta, n, replicates,
                                        derive_seed(seed, r, 0, Purpose::replicate));
    report.rounds.push_back({n, var});
    const double scaled = std::ceil(static_cast<double>(n) * var / target);
    n = static_cast<std::size_t>(std::clamp(scaled, 2.0, 1e9));
    report.recommended = n;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Particle Gibbs

struct CpfOptions {
  bool ancestor_sampling = false;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct CpfResult {
  Matrix path;            // sampled x_0..x_n
  std::size_t chosen = 0; // final particle index whose lineage was output
  TrajectoryStore store;
};

// Conditional particle filter. Particle 0 is pinned to `reference` at every
// time; the others are resampled with conditional multinomial resampling
// (none at t = 1), propagated and reweighted as in the bootstrap filter. With
// ancestor sampling, the pinned particle's ancestor at each step is redrawn
// with probability proportional to w_{t-1}^i p(x_t^ref | x_{t-1}^i).
template <StateSpaceModel M>
CpfResult conditional_particle_filter(const Matrix& reference, const M& model,
                                      const Matrix& observations, std::size_t n,
                                      const CpfOptions& options) {
  if (n < 2) throw DomainError("conditional particle filter needs at least two particles");
  require_same_size(reference.cols(), observations.cols() + 1, "reference path length");
  require_same_size(reference.rows(), static_cast<Eigen::Index>(model.state_dim()), "reference path dimension");
  if (options.ancestor_sampling) require_transition_density(model, "ancestor sampling");
  const std::uint64_t seed = options.seed;

  ParticleSystem ps;
  ps.particles.resize(reference.rows(), static_cast<Eigen::Index>(n));
  ps.weights.assign(n, 1.0 / static_cast<double>(n));
  ps.particles.col(0) = reference.col(0);
  parallel_for(n - 1, options.threads, [&](std::size_t k) {
    const std::size_t i = k + 1;
    RngStream rng(seed, {0, i, Purpose::initial});
    model.sample_initial(ps.particles.col(static_cast<Eigen::Index>(i)), rng);
  });

  CpfResult out;
  out.store.record(ps.particles, ps.weights, {}, StorageMode::full);
  std::vector<double> log_w(n);
  for (Eigen::Index k = 0; k < observations.cols(); ++k) {
    const std::size_t t = static_cast<std::size_t>(k) + 1;
    AncestorIndices anc;
    if (t == 1) {
      anc = detail::identity_ancestors(n);
    } else {
      RngStream rng(seed, {t, 0, Purpose::resample});
      anc = conditional_multinomial_ancestors(ps.weights, rng);
    }
    const auto ref_t = reference.col(k + 1);
    if (options.ancestor_sampling) {
      std::vector<double> la(n);
      for (std::size_t i = 0; i < n; ++i) {
        la[i] = ps.weights[i] > 0.0
                    ? std::log(ps.weights[i]) +
                          model.log_transition_density(ref_t, ps.particles.col(static_cast<Eigen::Index>(i)))
                    : kNegInf;
      }
      std::vector<double> aw;
      try {
        aw = normalize_log_weights(la).weights;
      } catch (const DegenerateWeightsError&) {
        throw DegenerateWeightsError("ancestor sampling weights are all zero", t);
      }
      RngStream rng(seed, {t, 0, Purpose::ancestor});
      anc[0] = sample_categorical(aw, rng);
    }
    Matrix next(ps.particles.rows(), ps.particles.cols());
    next.col(0) = ref_t;
    parallel_for(n - 1, options.threads, [&](std::size_t j) {
      const std::size_t i = j + 1;
      RngStream rng(seed, {t, i, Purpose::propagate});
      model.propagate(ps.particles.col(static_cast<Eigen::Index>(anc[i])),
                      next.col(static_cast<Eigen::Index>(i)), rng);
    });
    const auto y = observations.col(k);
    parallel_for(n, options.threads, [&](std::size_t i) {
      log_w[i] = model.log_obs_density(y, next.col(static_cast<Eigen::Index>(i)));
    });
    ps.particles = std::move(next);
    detail::normalize_into(ps, log_w, t);
    ps.t = t;
    out.store.record(ps.particles, ps.weights, std::move(anc), StorageMode::full);
  }
  RngStream pick(seed, {ps.t, 0, Purpose::select});
  out.chosen = sample_categorical(ps.weights, pick);
  out.path = extract_trajectory(out.store, out.chosen);
  return out;
}

// theta_update(theta, path, rng) -> new theta; must leave p(theta | x, y)
// invariant.
template <class U>
concept ThetaUpdate = requires(const U& u, const Vector& theta, const Matrix& path, RngStream& rng) {
  { u(theta, path, rng) } -> std::convertible_to<Vector>;
};

// One particle Gibbs sweep: theta given the current path, then a new path
// from the conditional particle filter at the new theta.
template <ThetaUpdate Update, class Builder>
McmcState particle_gibbs_sweep(const McmcState& cur, const Update& theta_update,
                               const Builder& builder, const Matrix& observations, std::size_t n,
                               CpfOptions options, std::uint64_t iteration) {
  if (!cur.path) throw DomainError("particle_gibbs_sweep: current state has no path");
  RngStream rng(options.seed, {iteration, 0, Purpose::parameter});
  Vector theta = theta_update(cur.theta, *cur.path, rng);
  const auto model = builder(theta);
  options.seed = derive_seed(options.seed, iteration, 0, Purpose::filter);
  CpfResult cpf = conditional_particle_filter(*cur.path, model, observations, n, options);
  return McmcState{std::move(theta), std::nan(""), std::move(cpf.path)};
}

// Random-walk Metropolis on theta targeting prior(theta) p(x_0:n, y_1:n | theta),
// the generic theta update for particle Gibbs.
template <ParameterPrior Prior, class Builder>
class CompleteDataRandomWalk {
 public:
  CompleteDataRandomWalk(Prior prior, Builder builder, Matrix observations, GaussianRandomWalk kernel)
      : prior_(std::move(prior)), builder_(std::move(builder)), obs_(std::move(observations)),
        kernel_(std::move(kernel)) {}

  Vector operator()(const Vector& theta, const Matrix& path, RngStream& rng) const {
    const Vector prop = kernel_.propose(theta, rng);
    const double lp_prop = prior_.log_density(prop);
    if (lp_prop == kNegInf) return theta;
    double ll_prop;
    try {
      ll_prop = complete_data_log_density(builder_(prop), path, obs_);
    } catch (const DomainError&) {
      return theta;
    }
    const double ll_cur = complete_data_log_density(builder_(theta), path, obs_);
    const double log_alpha = lp_prop + ll_prop - prior_.log_density(theta) - ll_cur;
    return std::log(rng.uniform_open()) < log_alpha ? prop : theta;
  }

 private:
  Prior prior_;
  Builder builder_;
  Matrix obs_;
  GaussianRandomWalk kernel_;
};

// Particle Gibbs chain. The initial path is drawn by a bootstrap filter at
// the initial theta.
template <ThetaUpdate Update, class Builder>
McmcChain run_particle_gibbs(const Vector& initial_theta, std::size_t iterations,
                             std::size_t burn_in, const Update& theta_update,
                             const Builder& builder, const Matrix& observations, std::size_t n,
                             const CpfOptions& options) {
  McmcChain chain;
  chain.burn_in = burn_in;
  BootstrapLikelihood init_filter(builder, observations, n, FilterOptions{}, true);
  LikelihoodEstimate init = init_filter(initial_theta, derive_seed(options.seed, 0, 1, Purpose::filter));
  chain.states.push_back({initial_theta, std::nan(""), std::move(init.path)});
  chain.accepted.push_back(0);
  for (std::size_t it = 1; it <= iterations; ++it) {
    try {
      McmcState next = particle_gibbs_sweep(chain.states.back(), theta_update, builder,
                                            observations, n, options, it);
      chain.accepted.push_back(next.theta != chain.states.back().theta ? 1 : 0);
      chain.states.push_back(std::move(next));
    } catch (const std::exception& e) {
      throw ChainAborted(std::string("particle Gibbs aborted: ") + e.what(), it, std::move(chain));
    }
  }
  return chain;
}

}  // namespace pfda
