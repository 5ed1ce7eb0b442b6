#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "gser/grid.hpp"

namespace gser {

// Diffusion sampling scheme: one b-value (s/mm^2) and unit gradient direction
// per volume. Volumes with b = 0 are the unweighted references.
struct DiffusionScheme {
  std::vector<double> bvals;
  std::vector<Eigen::Vector3d> bvecs;

  int nd() const { return int(bvals.size()); }

  std::vector<int> zero_b_indices() const {
    std::vector<int> idx;
    for (int q = 0; q < nd(); ++q)
      if (bvals[std::size_t(q)] == 0.0) idx.push_back(q);
    return idx;
  }

  // Weighted directions must be unit norm; DTI fitting additionally needs at
  // least 6 noncollinear weighted directions and one b = 0 volume.
  void validate(bool for_dti = false) const {
    if (bvals.size() != bvecs.size()) throw InputError("DiffusionScheme: bvals/bvecs length mismatch");
    int weighted = 0;
    for (int q = 0; q < nd(); ++q) {
      if (bvals[std::size_t(q)] < 0) throw InputError("DiffusionScheme: negative b-value");
      if (bvals[std::size_t(q)] > 0) {
        ++weighted;
        if (std::abs(bvecs[std::size_t(q)].norm() - 1.0) > 1e-9)
          throw InputError("DiffusionScheme: weighted direction is not unit norm");
      }
    }
    if (for_dti) {
      if (weighted < 6) throw InputError("DiffusionScheme: DTI needs >= 6 weighted directions");
      if (zero_b_indices().empty()) throw InputError("DiffusionScheme: DTI needs a b = 0 volume");
    }
  }

  // n_dirs directions spread on the upper hemisphere by a golden-angle
  // spiral, preceded by n_b0 unweighted volumes.
  static DiffusionScheme uniform(int n_b0, int n_dirs, double b_value) {
    if (n_b0 < 0 || n_dirs < 0 || b_value < 0) throw InputError("DiffusionScheme: bad parameters");
    DiffusionScheme s;
    for (int i = 0; i < n_b0; ++i) {
      s.bvals.push_back(0.0);
      s.bvecs.push_back(Eigen::Vector3d::Zero());
    }
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n_dirs; ++i) {
      const double z = (i + 0.5) / n_dirs;  // (0, 1]: strictly upper hemisphere
      const double rxy = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double az = golden * i;
      s.bvals.push_back(b_value);
      s.bvecs.push_back({rxy * std::cos(az), rxy * std::sin(az), z});
    }
    return s;
  }
};

}  // namespace gser
