#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace gser {

/// Error raised when array shapes disagree with the problem geometry.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Error raised for invalid parameter values or non-finite inputs.
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Error raised when an iterative or direct solver cannot proceed.
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Error raised by container / config parsing.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// All problem dimensions. In-plane images are n1 x n2 (row-major, axis 0 is
// the readout axis, axis 1 is the phase-encode axis). Each of the ns slabs
// holds k_enc sub-slices, giving n3 = k_enc*ns thin slices, and every volume
// is acquired nd times along the diffusion dimension.
struct GridDims {
  int n1 = 0;
  int n2 = 0;
  int ns = 0;
  int k_enc = 5;
  int nd = 0;
  std::array<double, 3> voxel_size{1.0, 1.0, 1.0};

  int n3() const { return k_enc * ns; }
  std::int64_t plane() const { return std::int64_t(n1) * n2; }
  std::int64_t image_voxels() const { return plane() * n3(); }
  // f and b have the same total length: k_enc encodings per slab vs k_enc
  // sub-slices per slab.
  std::int64_t image_size() const { return image_voxels() * nd; }
  std::int64_t slab_size() const { return plane() * k_enc * ns * nd; }
  double voxel_volume() const { return voxel_size[0] * voxel_size[1] * voxel_size[2]; }

  // In-plane voxel index from (row, col).
  std::int64_t at(int r, int c) const { return std::int64_t(r) * n2 + c; }
  // Slab-domain linear index, layout (slab, encoding, dwi, in-plane voxel).
  std::int64_t slab_at(int s, int k, int q, std::int64_t n) const {
    return ((std::int64_t(s) * k_enc + k) * nd + q) * plane() + n;
  }
  // Image-domain linear index, layout (dwi, voxel) with voxel = z*plane + n
  // and sub-slice z = slab*k_enc + j.
  std::int64_t image_at(int q, std::int64_t vox) const {
    return std::int64_t(q) * image_voxels() + vox;
  }
  std::int64_t vox_at(int z, int r, int c) const {
    return std::int64_t(z) * plane() + at(r, c);
  }

  bool operator==(const GridDims& o) const {
    return n1 == o.n1 && n2 == o.n2 && ns == o.ns && k_enc == o.k_enc && nd == o.nd &&
           voxel_size == o.voxel_size;
  }

  void validate() const {
    if (n1 <= 0 || n2 <= 0 || ns <= 0 || k_enc <= 0 || nd <= 0)
      throw InputError("GridDims: all dimensions must be positive");
    if (voxel_size[0] <= 0 || voxel_size[1] <= 0 || voxel_size[2] <= 0)
      throw InputError("GridDims: voxel size must be positive");
  }
};

inline void check_same_dims(const GridDims& a, const GridDims& b, const std::string& where) {
  if (!(a == b)) throw ShapeError(where + ": dimension mismatch");
}

}  // namespace gser
