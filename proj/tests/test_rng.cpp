#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "pfda/parallel.hpp"
#include "pfda/rng.hpp"

using namespace pfda;

TEST_CASE("identical seed and stream id give identical sequences") {
  RngStream a(42, {3, 7, Purpose::propagate});
  RngStream b(42, {3, 7, Purpose::propagate});
  for (int k = 0; k < 100; ++k) CHECK(a() == b());
  RngStream c(42, {3, 7, Purpose::propagate});
  RngStream d(42, {3, 7, Purpose::propagate});
  for (int k = 0; k < 50; ++k) CHECK(c.normal() == d.normal());
}

TEST_CASE("changing any part of the stream key changes the draws") {
  const auto first = [](std::uint64_t seed, StreamId id) { return RngStream(seed, id)(); };
  std::set<std::uint64_t> seen{
      first(1, {0, 0, Purpose::propagate}), first(2, {0, 0, Purpose::propagate}),
      first(1, {1, 0, Purpose::propagate}), first(1, {0, 1, Purpose::propagate}),
      first(1, {0, 0, Purpose::resample}),  first(1, {1, 0, Purpose::initial}),
  };
  CHECK(seen.size() == 6);
}

TEST_CASE("uniform draws lie in range and have the right moments") {
  RngStream rng(5, {0, 0, Purpose::propagate});
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  int out_of_range = 0;
  for (int k = 0; k < n; ++k) {
    const double u = rng.uniform();
    const double v = rng.uniform_open();
    out_of_range += (u < 0.0 || u >= 1.0 || v <= 0.0 || v >= 1.0) ? 1 : 0;
    sum += u;
    sum2 += u * u;
  }
  CHECK(out_of_range == 0);
  const double mean = sum / n;
  CHECK(std::abs(mean - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / n));
  CHECK(std::abs(sum2 / n - 1.0 / 3.0) < 0.005);
}

TEST_CASE("normal draws have mean 0, variance 1, small skew") {
  RngStream rng(6, {0, 0, Purpose::observe});
  const int n = 200000;
  double s1 = 0.0, s2 = 0.0, s3 = 0.0, s4 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double z = rng.normal();
    s1 += z;
    s2 += z * z;
    s3 += z * z * z;
    s4 += z * z * z * z;
  }
  CHECK(std::abs(s1 / n) < 4.0 / std::sqrt(n));
  CHECK(std::abs(s2 / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(s3 / n) < 4.0 * std::sqrt(15.0 / n));
  CHECK(std::abs(s4 / n - 3.0) < 4.0 * std::sqrt(96.0 / n));
}

TEST_CASE("below(n) is uniform on 0..n-1") {
  RngStream rng(7, {0, 0, Purpose::select});
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int k = 0; k < n; ++k) ++counts.at(rng.below(7));
  const double p = 1.0 / 7.0;
  for (int c : counts) CHECK(std::abs(c - n * p) < 4.0 * std::sqrt(n * p * (1 - p)));
}

TEST_CASE("derive_seed is a pure function of its inputs") {
  CHECK(derive_seed(1, 2, 3, Purpose::filter) == derive_seed(1, 2, 3, Purpose::filter));
  CHECK(derive_seed(1, 2, 3, Purpose::filter) != derive_seed(1, 3, 2, Purpose::filter));
  CHECK(derive_seed(1, 2, 3, Purpose::filter) != derive_seed(1, 2, 3, Purpose::mcmc));
}

TEST_CASE("parallel_for covers every index once and rethrows") {
  for (unsigned threads : {1u, 2u, 5u}) {
    std::vector<int> hits(103, 0);
    parallel_for(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
    for (int h : hits) CHECK(h == 1);
  }
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                    if (i == 7) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
}
