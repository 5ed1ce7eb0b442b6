#pragma once

#include <Eigen/Dense>
#include <complex>

#include "gser/grid.hpp"

namespace gser {

// Complex RF-encoded thick-slab measurements, layout (slab, encoding, dwi,
// in-plane voxel); see GridDims::slab_at.
struct SlabStack {
  GridDims dims;
  Eigen::VectorXcd data;

  SlabStack() = default;
  explicit SlabStack(const GridDims& d) : dims(d), data(Eigen::VectorXcd::Zero(d.slab_size())) {}

  std::complex<double>& at(int s, int k, int q, std::int64_t n) {
    return data[dims.slab_at(s, k, q, n)];
  }
  std::complex<double> at(int s, int k, int q, std::int64_t n) const {
    return data[dims.slab_at(s, k, q, n)];
  }
  auto plane(int s, int k, int q) { return data.segment(dims.slab_at(s, k, q, 0), dims.plane()); }
  auto plane(int s, int k, int q) const {
    return data.segment(dims.slab_at(s, k, q, 0), dims.plane());
  }

  void check(const std::string& where) const {
    if (data.size() != dims.slab_size()) throw ShapeError(where + ": slab stack size mismatch");
    if (!data.allFinite()) throw InputError(where + ": non-finite slab data");
  }
};

// Same layout as SlabStack with real values (phase-corrected data).
struct RealSlabStack {
  GridDims dims;
  Eigen::VectorXd data;

  RealSlabStack() = default;
  explicit RealSlabStack(const GridDims& d)
      : dims(d), data(Eigen::VectorXd::Zero(d.slab_size())) {}

  double& at(int s, int k, int q, std::int64_t n) { return data[dims.slab_at(s, k, q, n)]; }
  double at(int s, int k, int q, std::int64_t n) const { return data[dims.slab_at(s, k, q, n)]; }

  void check(const std::string& where) const {
    if (data.size() != dims.slab_size()) throw ShapeError(where + ": slab stack size mismatch");
    if (!data.allFinite()) throw InputError(where + ": non-finite slab data");
  }
};

// Real high-resolution sub-slice amplitudes, layout (dwi, voxel) with voxel
// running over z-major (n1 x n2 in-plane, n3 sub-slices).
struct ImageStack {
  GridDims dims;
  Eigen::VectorXd data;

  ImageStack() = default;
  explicit ImageStack(const GridDims& d) : dims(d), data(Eigen::VectorXd::Zero(d.image_size())) {}

  double& at(int q, std::int64_t vox) { return data[dims.image_at(q, vox)]; }
  double at(int q, std::int64_t vox) const { return data[dims.image_at(q, vox)]; }
  auto volume(int q) { return data.segment(dims.image_at(q, 0), dims.image_voxels()); }
  auto volume(int q) const { return data.segment(dims.image_at(q, 0), dims.image_voxels()); }

  void check(const std::string& where) const {
    if (data.size() != dims.image_size()) throw ShapeError(where + ": image stack size mismatch");
    if (!data.allFinite()) throw InputError(where + ": non-finite image data");
  }
};

// Per-(slab, encoding, dwi, voxel) phase in radians; consumers only ever use
// exp(i*p), so values wrap freely modulo 2*pi.
struct PhaseField {
  GridDims dims;
  Eigen::VectorXd data;

  PhaseField() = default;
  explicit PhaseField(const GridDims& d) : dims(d), data(Eigen::VectorXd::Zero(d.slab_size())) {}

  double& at(int s, int k, int q, std::int64_t n) { return data[dims.slab_at(s, k, q, n)]; }
  double at(int s, int k, int q, std::int64_t n) const { return data[dims.slab_at(s, k, q, n)]; }
  auto plane(int s, int k, int q) { return data.segment(dims.slab_at(s, k, q, 0), dims.plane()); }
  auto plane(int s, int k, int q) const {
    return data.segment(dims.slab_at(s, k, q, 0), dims.plane());
  }

  void check(const std::string& where) const {
    if (data.size() != dims.slab_size()) throw ShapeError(where + ": phase field size mismatch");
    if (!data.allFinite()) throw InputError(where + ": non-finite phase");
  }
};

}  // namespace gser
