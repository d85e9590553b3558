#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace pfda {

// What a stream of random numbers is used for. Part of the stream key so
// that, e.g., resampling and propagation at the same (t, i) never share draws.
enum class Purpose : std::uint32_t {
  initial = 1,
  propagate,
  resample,
  observe,
  perturb,
  backward,
  ancestor,
  proposal,
  select,
  filter,
  mcmc,
  parameter,
  replicate,
};

struct StreamId {
  std::uint64_t t = 0;
  std::uint64_t index = 0;
  Purpose purpose = Purpose::propagate;
};

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// Hash a seed together with two integers and a purpose tag into a new seed.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                           std::uint64_t b, Purpose purpose) noexcept {
  std::uint64_t k = detail::mix64(seed ^ 0x6a09e667f3bcc909ULL);
  k = detail::mix64(k ^ (a * detail::kGolden + 0x3c6ef372fe94f82bULL));
  k = detail::mix64(k ^ (b * 0xd1b54a32d192ed03ULL + 0xa54ff53a5f1d36f1ULL));
  k = detail::mix64(k ^ (static_cast<std::uint64_t>(purpose) * 0x8cb92ba72f3d8dd7ULL));
  return k;
}

// Counter-based random stream. The i-th output is a pure function of
// (seed, stream id, i), so draws for different particles can be produced in
// any order or on any thread with identical results.
//
// Satisfies UniformRandomBitGenerator.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, StreamId id) noexcept
      : key_(derive_seed(seed, id.t, id.index, id.purpose)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGolden);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1).
  double uniform_open() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal by Box-Muller; the second variate of each pair is kept.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_radius_ * std::sin(spare_angle_);
    }
    const double r = std::sqrt(-2.0 * std::log(uniform_open()));
    const double angle = 2.0 * std::numbers::pi * uniform();
    spare_radius_ = r;
    spare_angle_ = angle;
    has_spare_ = true;
    return r * std::cos(angle);
  }

  // Uniform integer in [0, n) by rejection (no modulo bias). n > 0.
  std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t r;
    do {
      r = (*this)();
    } while (r >= limit);
    return r % n;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_radius_ = 0.0;
  double spare_angle_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace pfda
