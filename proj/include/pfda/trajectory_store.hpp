#pragma once

#include <cstddef>
#include <vector>

#include "pfda/linalg.hpp"
#include "pfda/resample.hpp"

namespace pfda {

enum class StorageMode {
  none,      // nothing kept beyond the current particle system
  ancestry,  // ancestor indices per step
  full,      // ancestor indices plus particles and weights per step
};

// Genealogy of a particle run. Entry t refers to time t = 0..T; ancestors[0]
// is empty and ancestors[t][i] is the time t-1 parent of particle i at time t.
// particles[t] (d x N) and weights[t] are the filter approximation at time t
// and are only present for StorageMode::full.
struct TrajectoryStore {
  std::vector<AncestorIndices> ancestors;
  std::vector<Matrix> particles;
  std::vector<std::vector<double>> weights;

  bool empty() const { return ancestors.empty(); }
  std::size_t final_time() const { return ancestors.empty() ? 0 : ancestors.size() - 1; }
  bool has_particles() const {
    return !particles.empty() && particles.size() == ancestors.size();
  }
  std::size_t particle_count() const {
    if (has_particles()) return static_cast<std::size_t>(particles.back().cols());
    return ancestors.size() > 1 ? ancestors.back().size() : 0;
  }

  void record(const Matrix& x, const std::vector<double>& w, AncestorIndices a,
              StorageMode mode) {
    if (mode == StorageMode::none) return;
    ancestors.push_back(std::move(a));
    if (mode == StorageMode::full) {
      particles.push_back(x);
      weights.push_back(w);
    }
  }
};

}  // namespace pfda
