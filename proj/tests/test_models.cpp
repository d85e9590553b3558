#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "pfda/model.hpp"
#include "pfda/models/linear_gaussian.hpp"
#include "pfda/models/lorenz96.hpp"
#include "pfda/models/stochastic_volatility.hpp"
#include "pfda/simulate.hpp"
#include "support/reference.hpp"

using namespace pfda;
using Catch::Matchers::WithinAbs;

namespace {
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);
}

TEST_CASE("sv_propagate") {
  const SvParameters theta{0.9, 0.3, 0.6, {}};
  CHECK(sv_propagate(0.0, theta, 0.0) == 0.0);
  CHECK_THAT(sv_propagate(1.0, theta, 0.0), WithinAbs(0.9, 1e-15));
  CHECK_THAT(sv_propagate(1.0, theta, 2.0), WithinAbs(1.5, 1e-15));
  CHECK_THROWS_AS(sv_propagate(std::nan(""), theta, 0.0), DomainError);
  CHECK_THROWS_AS(sv_propagate(0.0, theta, std::numeric_limits<double>::infinity()), DomainError);
}

TEST_CASE("sv_log_obs") {
  const SvParameters beta_one{0.9, 0.3, 1.0, {}};
  CHECK_THAT(sv_log_obs(0.0, 0.0, beta_one), WithinAbs(-kHalfLog2Pi, 1e-14));
  CHECK_THAT(sv_log_obs(0.0, 2.0, beta_one), WithinAbs(-kHalfLog2Pi - 1.0, 1e-14));
  CHECK_THAT(sv_log_obs(1.0, 0.0, beta_one), WithinAbs(-kHalfLog2Pi - 0.5, 1e-14));
}

TEST_CASE("stochastic volatility model rejects invalid parameters") {
  CHECK_THROWS_AS(StochasticVolatilityModel(SvParameters{0.9, 0.0, 0.6, {}}), DomainError);
  CHECK_THROWS_AS(StochasticVolatilityModel(SvParameters{0.9, 0.3, -1.0, {}}), DomainError);
  const StochasticVolatilityModel m;
  CHECK_THAT(m.initial_variance(), WithinAbs(0.09 / 0.19, 1e-15));
  const StochasticVolatilityModel nonstationary(SvParameters{1.0, 0.3, 0.6, {}});
  CHECK_THAT(nonstationary.initial_variance(), WithinAbs(0.09, 1e-15));
}

TEST_CASE("sv transition density integrates to one") {
  const StochasticVolatilityModel m;
  Vector x(1), xn(1);
  x[0] = 0.7;
  const double lo = -5.0, hi = 6.0;
  const int n = 20000;
  const double h = (hi - lo) / n;
  double total = 0.0;
  for (int k = 0; k <= n; ++k) {
    xn[0] = lo + k * h;
    const double f = std::exp(m.log_transition_density(xn, x));
    total += (k == 0 || k == n) ? 0.5 * f : f;
  }
  CHECK_THAT(total * h, WithinAbs(1.0, 1e-6));
}

TEST_CASE("lorenz96_drift") {
  CHECK(lorenz96_drift(Vector::Constant(40, 8.0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((lorenz96_drift(Vector::Zero(40)).array() == 8.0).all());

  Vector unit = Vector::Zero(40);
  unit[0] = 1.0;
  Vector expected = Vector::Constant(40, 8.0);
  expected[0] = 7.0;  // (x_1 - x_38) x_39 - x_0 + 8
  CHECK((lorenz96_drift(unit) - expected).cwiseAbs().maxCoeff() == 0.0);

  Vector small(4);
  small << 1.0, 2.0, 3.0, 4.0;
  Vector small_expected(4);
  small_expected << 3.0, 5.0, 11.0, 1.0;
  CHECK((lorenz96_drift(small) - small_expected).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(lorenz96_drift(Vector::Zero(3)), DomainError);
}

TEST_CASE("lorenz96_drift is shift-equivariant") {
  Vector x(40);
  for (Eigen::Index k = 0; k < 40; ++k) x[k] = std::sin(0.7 * static_cast<double>(k)) * 3.0 + 8.0;
  const Vector f = lorenz96_drift(x);
  for (Eigen::Index s : {1, 5, 39}) {
    Vector xs(40), fs(40);
    for (Eigen::Index k = 0; k < 40; ++k) {
      xs[k] = x[(k + s) % 40];
      fs[k] = f[(k + s) % 40];
    }
    CHECK((lorenz96_drift(xs) - fs).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("rk4_step") {
  const Vector eq = Vector::Constant(40, 8.0);
  CHECK((rk4_step(eq, 0.3) - eq).cwiseAbs().maxCoeff() == 0.0);

  Vector x = eq;
  x[3] += 1.0;
  x[17] -= 0.5;
  // Consistency: the deviation from an Euler step shrinks like h^2.
  const auto euler_gap = [&](double h) { return (rk4_step(x, h) - x - h * lorenz96_drift(x)).norm(); };
  const double ratio = euler_gap(1e-3) / euler_gap(5e-4);
  CHECK(ratio > 3.5);
  CHECK(ratio < 4.5);

  Vector perturbed = eq;
  perturbed[0] += 1e-3;
  const Vector coarse = rk4_step(perturbed, 0.01);
  Vector fine = perturbed;
  for (int k = 0; k < 100; ++k) fine = rk4_step(fine, 1e-4);
  CHECK((coarse - fine).cwiseAbs().maxCoeff() < 1e-8);

  Vector bad = eq;
  bad[2] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(rk4_step(bad, 0.01), NumericalError);
}

TEST_CASE("lorenz96 model") {
  const Lorenz96Model m;
  CHECK(m.state_dim() == 40);
  CHECK(m.obs_dim() == 20);
  CHECK(m.substeps() == 10);
  CHECK_FALSE(m.has_transition_density());
  CHECK_THROWS_AS(m.log_transition_density(Vector::Zero(40), Vector::Zero(40)), CapabilityError);
  const Matrix h = m.obs_matrix();
  CHECK(h(0, 0) == 1.0);
  CHECK(h(1, 2) == 1.0);
  CHECK(h.sum() == 20.0);

  Lorenz96Parameters p;
  p.step = 0.03;  // dt = 0.05 is covered by two steps of 0.025
  const Lorenz96Model rounded(p);
  CHECK(rounded.substeps() == 2);
  CHECK_THAT(rounded.integration_step(), WithinAbs(0.025, 1e-15));

  Lorenz96Parameters tiny;
  tiny.dimension = 3;
  CHECK_THROWS_AS(Lorenz96Model(tiny), DomainError);
}

TEST_CASE("lg_propagate") {
  const Vector x = Vector::LinSpaced(3, 1.0, 3.0);
  CHECK(lg_propagate(x, Matrix::Identity(3, 3), Vector::Zero(3)) == x);
  CHECK(lg_propagate(x, Matrix::Zero(3, 3), Vector::Zero(3)) == Vector::Zero(3));
  CHECK_THAT(lg_propagate(Vector::Constant(1, 2.0), Matrix::Constant(1, 1, 0.5), Vector::Constant(1, 0.1))[0],
             WithinAbs(1.1, 1e-15));
  CHECK_THROWS_AS(lg_propagate(x, Matrix::Identity(2, 2), Vector::Zero(2)), DomainError);
}

TEST_CASE("linear-Gaussian capability follows Q") {
  auto p = LinearGaussianParameters::scalar(0.5, 1.0, 1.0, 1.0, 0.0, 1.0);
  CHECK(LinearGaussianModel(p).has_transition_density());
  p.state_noise(0, 0) = 0.0;
  const LinearGaussianModel singular(p);
  CHECK_FALSE(singular.has_transition_density());
  CHECK_THROWS_AS(singular.log_transition_density(Vector::Zero(1), Vector::Zero(1)), CapabilityError);
  auto bad = LinearGaussianParameters::scalar(0.5, 1.0, 1.0, 1.0, 0.0, 1.0);
  bad.obs_noise = Matrix::Identity(2, 2);
  CHECK_THROWS_AS(LinearGaussianModel(bad), DomainError);
}

TEST_CASE("complete-data density matches the dense joint Gaussian") {
  std::mt19937_64 gen(11);
  LinearGaussianParameters p;
  p.transition = ref::random_stable(2, gen);
  p.state_noise = ref::random_spd(2, gen);
  p.observation = Matrix::Random(1, 2);
  p.obs_noise = Matrix::Constant(1, 1, 0.7);
  p.initial_mean = Vector::Constant(2, 0.3);
  p.initial_cov = ref::random_spd(2, gen);
  const LinearGaussianModel m(p);
  const SimulatedData sim = simulate_truth(m, 6, 3);
  const ref::JointGaussian j = ref::joint_gaussian(p, 6);
  Vector stacked(j.mean.size());
  stacked << Eigen::Map<const Vector>(sim.states.data(), sim.states.size()), ref::stack(sim.observations);
  CHECK_THAT(complete_data_log_density(m, sim.states, sim.observations),
             WithinAbs(ref::mvn_log_density(stacked, j.mean, j.cov), 1e-9));

  const Lorenz96Model l96;
  static_assert(!CompleteDataModel<Lorenz96Model>);
  CHECK_THROWS_AS(require_transition_density(l96, "test"), CapabilityError);
}

TEST_CASE("simulate_truth") {
  const StochasticVolatilityModel sv;
  const SimulatedData one = simulate_truth(sv, 1, 9);
  CHECK(one.states.cols() == 2);
  CHECK(one.observations.cols() == 1);
  CHECK_THROWS_AS(simulate_truth(sv, 0, 9), DomainError);

  const SimulatedData again = simulate_truth(sv, 50, 9);
  const SimulatedData same = simulate_truth(sv, 50, 9);
  CHECK(again.states == same.states);
  CHECK(again.observations == same.observations);

  LinearGaussianParameters p;
  p.transition = Matrix::Identity(2, 2) * 0.95;
  p.state_noise = Matrix::Zero(2, 2);
  p.observation = Matrix::Identity(2, 2);
  p.obs_noise = Matrix::Identity(2, 2) * 1e-12;
  p.initial_mean = Vector::Constant(2, 1.0);
  p.initial_cov = Matrix::Identity(2, 2);
  const SimulatedData quiet = simulate_truth(LinearGaussianModel(p), 20, 4);
  CHECK((quiet.observations - quiet.states.rightCols(20)).cwiseAbs().maxCoeff() < 1e-5);
  for (Eigen::Index t = 1; t <= 20; ++t) {
    CHECK((quiet.states.col(t) - 0.95 * quiet.states.col(t - 1)).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("simulated SV states have the stationary variance") {
  const SvParameters theta{0.9, 0.3, 0.6, {}};
  const std::size_t steps = 100000;
  const SimulatedData sim = simulate_truth(StochasticVolatilityModel(theta), steps, 2024);
  std::vector<double> x(sim.states.data() + 1, sim.states.data() + steps + 1);
  const double stationary = 0.09 / (1.0 - 0.81);
  // Var of the sample variance of an AR(1): 2 s^4 (1 + phi^2) / ((1 - phi^2) T).
  const double se = std::sqrt(2.0 * stationary * stationary * (1.0 + 0.81) / (1.0 - 0.81) / steps);
  CHECK(std::abs(ref::variance(x) - stationary) < 4.0 * se);
}

TEST_CASE("model sampling is a pure function of state and stream") {
  const StochasticVolatilityModel sv;
  Vector a(1), b(1);
  RngStream r1(3, {4, 5, Purpose::propagate});
  RngStream r2(3, {4, 5, Purpose::propagate});
  sv.propagate(Vector::Constant(1, 0.2), a, r1);
  sv.propagate(Vector::Constant(1, 0.2), b, r2);
  CHECK(a[0] == b[0]);
}
