#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "pfda/error.hpp"
#include "pfda/linalg.hpp"
#include "pfda/rng.hpp"

namespace pfda {

// Ancestor indices are zero-based: ancestors[i] = j means particle i at the
// new time descends from particle j at the previous time.
using AncestorIndices = std::vector<std::size_t>;

enum class ResamplingScheme { multinomial, systematic };

struct NormalizedWeights {
  std::vector<double> weights;
  // log of the mean unnormalized weight, log((1/N) sum_i exp(lw_i)).
  double log_mean = 0.0;
};

inline NormalizedWeights normalize_log_weights(std::span<const double> log_weights) {
  if (log_weights.empty()) throw DomainError("normalize_log_weights: no weights");
  double hi = kNegInf;
  for (double v : log_weights) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw DomainError("normalize_log_weights: NaN or +inf log-weight");
    }
    hi = std::max(hi, v);
  }
  if (hi == kNegInf) {
    throw DegenerateWeightsError("all particle weights are zero");
  }
  NormalizedWeights out;
  out.weights.resize(log_weights.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    out.weights[i] = std::exp(log_weights[i] - hi);
    sum += out.weights[i];
  }
  for (double& w : out.weights) w /= sum;
  out.log_mean = hi + std::log(sum) - std::log(static_cast<double>(log_weights.size()));
  return out;
}

inline double ess(std::span<const double> w) {
  double s = 0.0;
  for (double v : w) s += v * v;
  return 1.0 / s;
}

namespace detail {

inline std::vector<double> cumulative(std::span<const double> w) {
  std::vector<double> c(w.size());
  double acc = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    acc += w[j];
    c[j] = acc;
  }
  return c;
}

// Index j with c[j-1] <= u < c[j]; u beyond the last bin (rounding) maps to
// the last index with positive weight.
inline std::size_t categorical_lookup(const std::vector<double>& c, double u) {
  const auto it = std::upper_bound(c.begin(), c.end(), u);
  if (it != c.end()) return static_cast<std::size_t>(it - c.begin());
  std::size_t j = c.size() - 1;
  while (j > 0 && c[j] == c[j - 1]) --j;
  return j;
}

}  // namespace detail

// Draws one categorical index from normalized weights.
inline std::size_t sample_categorical(std::span<const double> w, RngStream& rng) {
  double acc = 0.0;
  const double u = rng.uniform();
  std::size_t last_positive = 0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    if (w[j] > 0.0) last_positive = j;
    acc += w[j];
    if (u < acc) return j;
  }
  return last_positive;
}

// i.i.d. draws with P(A(i) = j) = w_j.
inline AncestorIndices multinomial_ancestors(std::span<const double> w, RngStream& rng,
                                             std::size_t count) {
  const auto c = detail::cumulative(w);
  AncestorIndices a(count);
  for (auto& ai : a) ai = detail::categorical_lookup(c, rng.uniform() * c.back());
  return a;
}

inline AncestorIndices multinomial_ancestors(std::span<const double> w, RngStream& rng) {
  return multinomial_ancestors(w, rng, w.size());
}

// Balanced resampling: [0, N) is cut into consecutive subintervals of length
// N w_j and particle j receives one offspring per point of u, u+1, ..., u+N-1
// that falls in [c_{j-1}, c_j). Offspring counts are floor(N w_j) or
// ceil(N w_j); ancestors come out in subinterval order.
inline AncestorIndices systematic_ancestors(std::span<const double> w, double u) {
  if (!(u >= 0.0 && u < 1.0)) throw DomainError("systematic_ancestors: u must lie in [0, 1)");
  const std::size_t n = w.size();
  const double scale = static_cast<double>(n);
  AncestorIndices a;
  a.reserve(n);
  double upper = 0.0;
  std::size_t j = 0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double point = u + static_cast<double>(k);
    while (j < n && point >= upper) {
      if (w[j] > 0.0) last_positive = j;
      upper += scale * w[j];
      ++j;
    }
    // point < upper means it sits in subinterval j-1; otherwise rounding
    // left a sliver at the top and the point goes to the last positive bin.
    a.push_back(point < upper ? j - 1 : last_positive);
  }
  return a;
}

inline AncestorIndices systematic_ancestors(std::span<const double> w, RngStream& rng) {
  return systematic_ancestors(w, rng.uniform());
}

// Particle-Gibbs resampling: ancestor of particle 0 is fixed to 0, the rest
// are i.i.d. categorical(w).
inline AncestorIndices conditional_multinomial_ancestors(std::span<const double> w,
                                                         RngStream& rng) {
  AncestorIndices a(w.size());
  if (w.empty()) return a;
  const auto rest = multinomial_ancestors(w, rng, w.size() - 1);
  a[0] = 0;
  std::copy(rest.begin(), rest.end(), a.begin() + 1);
  return a;
}

inline AncestorIndices resample(ResamplingScheme scheme, std::span<const double> w,
                                RngStream& rng) {
  return scheme == ResamplingScheme::systematic ? systematic_ancestors(w, rng)
                                                : multinomial_ancestors(w, rng);
}

inline std::vector<std::size_t> offspring_counts(const AncestorIndices& a, std::size_t n) {
  std::vector<std::size_t> counts(n, 0);
  for (std::size_t j : a) ++counts.at(j);
  return counts;
}

}  // namespace pfda
