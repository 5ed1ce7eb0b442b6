#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gser/grid.hpp"

namespace gser {

// Neighbor systems behind the finite-difference operator D (4 in-plane
// neighbors per voxel, used by the phase regularizer within each slab) and
// the Huber joint-edge penalty (6 volumetric neighbors per voxel). Neighbor
// sets are truncated at image and slab boundaries, no wraparound.
struct NeighborSystem {
  GridDims dims;
  // In-plane neighbors of voxel n within one n1 x n2 plane.
  std::vector<std::vector<std::int32_t>> inplane_4;
  // Volumetric neighbors of voxel v within the n1 x n2 x n3 volume.
  std::vector<std::vector<std::int32_t>> volumetric_6;
  // Directed volumetric edge list with v < w, each unordered pair once.
  std::vector<std::pair<std::int32_t, std::int32_t>> volumetric_edges;

  NeighborSystem() = default;

  explicit NeighborSystem(const GridDims& d) : dims(d) {
    d.validate();
    const int n1 = d.n1, n2 = d.n2, n3 = d.n3();
    inplane_4.resize(std::size_t(d.plane()));
    for (int r = 0; r < n1; ++r)
      for (int c = 0; c < n2; ++c) {
        auto& nb = inplane_4[std::size_t(d.at(r, c))];
        if (r > 0) nb.push_back(std::int32_t(d.at(r - 1, c)));
        if (r + 1 < n1) nb.push_back(std::int32_t(d.at(r + 1, c)));
        if (c > 0) nb.push_back(std::int32_t(d.at(r, c - 1)));
        if (c + 1 < n2) nb.push_back(std::int32_t(d.at(r, c + 1)));
      }
    volumetric_6.resize(std::size_t(d.image_voxels()));
    for (int z = 0; z < n3; ++z)
      for (int r = 0; r < n1; ++r)
        for (int c = 0; c < n2; ++c) {
          auto& nb = volumetric_6[std::size_t(d.vox_at(z, r, c))];
          if (z > 0) nb.push_back(std::int32_t(d.vox_at(z - 1, r, c)));
          if (z + 1 < n3) nb.push_back(std::int32_t(d.vox_at(z + 1, r, c)));
          if (r > 0) nb.push_back(std::int32_t(d.vox_at(z, r - 1, c)));
          if (r + 1 < n1) nb.push_back(std::int32_t(d.vox_at(z, r + 1, c)));
          if (c > 0) nb.push_back(std::int32_t(d.vox_at(z, r, c - 1)));
          if (c + 1 < n2) nb.push_back(std::int32_t(d.vox_at(z, r, c + 1)));
        }
    for (std::int32_t v = 0; v < std::int32_t(volumetric_6.size()); ++v)
      for (std::int32_t w : volumetric_6[std::size_t(v)])
        if (v < w) volumetric_edges.emplace_back(v, w);
  }
};

// ||D x||^2 over one in-plane field, summing |x_n - x_m|^2 over every ordered
// neighbor pair (n, m in Omega_n), i.e. each unordered pair twice.
template <class Derived>
double inplane_diff_sq(const Eigen::MatrixBase<Derived>& x, const NeighborSystem& nbs) {
  double total = 0.0;
  for (std::int64_t n = 0; n < std::int64_t(nbs.inplane_4.size()); ++n)
    for (std::int32_t m : nbs.inplane_4[std::size_t(n)]) total += std::norm(x[n] - x[m]);
  return total;
}

// D^H D x on one in-plane field with the ordered-pair convention:
// (D^H D x)_n = 2 * (deg(n) * x_n - sum_{m in Omega_n} x_m).
template <class Vec>
void inplane_laplacian(const Vec& x, Vec& out, const NeighborSystem& nbs) {
  const std::int64_t p = std::int64_t(nbs.inplane_4.size());
  for (std::int64_t n = 0; n < p; ++n) {
    auto acc = x[n] * double(2 * nbs.inplane_4[std::size_t(n)].size());
    for (std::int32_t m : nbs.inplane_4[std::size_t(n)]) acc -= 2.0 * x[m];
    out[n] = acc;
  }
}

}  // namespace gser
