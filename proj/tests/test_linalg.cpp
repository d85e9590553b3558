#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "pfda/linalg.hpp"
#include "support/reference.hpp"

using namespace pfda;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("log_sum_exp handles large and infinite inputs") {
  const std::vector<double> big{1000.0, 1000.0};
  CHECK_THAT(log_sum_exp(big), WithinAbs(1000.0 + std::log(2.0), 1e-12));
  const std::vector<double> with_zero{0.0, kNegInf};
  CHECK(log_sum_exp(with_zero) == 0.0);
  const std::vector<double> none{kNegInf, kNegInf};
  CHECK(log_sum_exp(none) == kNegInf);
}

TEST_CASE("psd_factor reproduces the matrix, including the singular case") {
  std::mt19937_64 gen(1);
  const Matrix s = ref::random_spd(4, gen);
  const Matrix f = psd_factor(s);
  CHECK((f * f.transpose() - s).cwiseAbs().maxCoeff() < 1e-12);

  Vector v(3);
  v << 1.0, 2.0, -1.0;
  const Matrix rank_one = v * v.transpose();
  const Matrix g = psd_factor(rank_one);
  CHECK((g * g.transpose() - rank_one).cwiseAbs().maxCoeff() < 1e-12);

  Matrix indefinite(2, 2);
  indefinite << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(psd_factor(indefinite), DomainError);
}

TEST_CASE("symmetric_sqrt is symmetric and squares back") {
  std::mt19937_64 gen(2);
  const Matrix s = ref::random_spd(5, gen);
  const Matrix w = symmetric_sqrt(s);
  CHECK(symmetry_defect(w) < 1e-12);
  CHECK((w * w - s).cwiseAbs().maxCoeff() < 1e-10);
  Matrix bad = Matrix::Identity(2, 2);
  bad(1, 1) = -0.5;
  CHECK_THROWS_AS(symmetric_sqrt(bad), NumericalError);
}

TEST_CASE("GaussianKernel agrees with the dense formula") {
  std::mt19937_64 gen(3);
  const Matrix cov = ref::random_spd(3, gen);
  const GaussianKernel k(cov);
  Vector r(3);
  r << 0.3, -1.2, 0.7;
  CHECK_THAT(k.log_density(r), WithinAbs(ref::mvn_log_density(r, Vector::Zero(3), cov), 1e-12));

  const GaussianKernel scalar(Matrix::Constant(1, 1, 2.5));
  CHECK_THAT(scalar.log_density(Vector::Constant(1, 0.4)),
             WithinAbs(gaussian_log_density(0.4, 0.0, 2.5), 1e-14));
  CHECK_THROWS_AS(GaussianKernel(Matrix::Zero(2, 2)), DomainError);
}

TEST_CASE("condition_number of a diagonal matrix") {
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 1.0, 10.0, 100.0;
  CHECK_THAT(condition_number(d), WithinRel(100.0, 1e-12));
  CHECK(std::isinf(condition_number(Matrix::Zero(2, 2))));
}

TEST_CASE("require_same_size names the mismatch") {
  CHECK_THROWS_WITH(require_same_size(2, 3, "rows"), Catch::Matchers::ContainsSubstring("rows"));
}
