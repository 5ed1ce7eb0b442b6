#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "gser/encoding.hpp"
#include "gser/fft.hpp"
#include "gser/forward_model.hpp"
#include "gser/grid.hpp"
#include "gser/parallel.hpp"
#include "gser/partial_fourier.hpp"
#include "gser/rng.hpp"
#include "gser/scheme.hpp"
#include "gser/stacks.hpp"

namespace gser {

// One homogeneous tissue compartment. Geometry is expressed in normalized
// volume coordinates (0..1 along rows, columns, sub-slices); later regions
// overwrite earlier ones where they overlap.
struct PhantomRegion {
  enum class Shape { Ellipsoid, Box };
  Shape shape = Shape::Ellipsoid;
  Eigen::Vector3d a;  // ellipsoid: center; box: low corner
  Eigen::Vector3d b;  // ellipsoid: semi-axes; box: high corner
  double s0 = 1.0;
  Eigen::Matrix3d tensor = Eigen::Matrix3d::Identity() * 0.7e-3;  // mm^2/s
  std::string name;

  void validate() const {
    if (s0 < 0) throw InputError("PhantomRegion: negative S0");
    if ((tensor - tensor.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw InputError("PhantomRegion: tensor is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(tensor);
    if (es.eigenvalues().minCoeff() < -1e-15)
      throw InputError("PhantomRegion: tensor is not positive semidefinite");
    if (shape == Shape::Ellipsoid) {
      if (b.minCoeff() <= 0) throw InputError("PhantomRegion: ellipsoid semi-axes must be positive");
    } else {
      if ((b - a).minCoeff() <= 0) throw InputError("PhantomRegion: box high corner must exceed low corner");
    }
  }

  bool contains(const Eigen::Vector3d& x) const {
    if (shape == Shape::Ellipsoid) {
      const Eigen::Vector3d d = (x - a).cwiseQuotient(b);
      return d.squaredNorm() <= 1.0;
    }
    return (x.array() >= a.array()).all() && (x.array() < b.array()).all();
  }

  static Eigen::Matrix3d diag_tensor(double dx, double dy, double dz) {
    return Eigen::Vector3d(dx, dy, dz).asDiagonal();
  }

  // Axially symmetric tensor with principal eigenvalue l_par along dir and
  // l_perp on the orthogonal complement.
  static Eigen::Matrix3d prolate_tensor(double l_par, double l_perp, Eigen::Vector3d dir) {
    const double n = dir.norm();
    if (n <= 0) throw InputError("PhantomRegion: zero principal direction");
    dir /= n;
    return l_perp * Eigen::Matrix3d::Identity() + (l_par - l_perp) * dir * dir.transpose();
  }
};

// Smooth slowly varying phase per slab image (one field shared by all
// encodings of a slab would hide encoding-dependent motion, so each
// (slab, encoding, volume) gets its own realization).
struct PhaseSpec {
  double amplitude = 0.0;       // radians, std of the field
  double corr_length = 4.0;     // voxels, Gaussian correlation length
};

struct PhantomSpec {
  GridDims dims;
  std::vector<PhantomRegion> regions;
  DiffusionScheme scheme;
  double noise_sigma = 0.0;       // std per real/imag component
  double center_noise_boost = 0.0;  // optional multiplicative bump at plane center
  double center_noise_width = 0.25; // fraction of in-plane extent
  PhaseSpec phase;
  std::uint64_t seed = 0;
  int repetitions = 1;

  void validate() const {
    dims.validate();
    if (regions.empty()) throw InputError("PhantomSpec: no regions");
    for (const auto& r : regions) r.validate();
    scheme.validate();
    if (scheme.nd() != dims.nd) throw InputError("PhantomSpec: scheme length does not match dims.nd");
    if (noise_sigma < 0) throw InputError("PhantomSpec: negative noise sigma");
    if (phase.amplitude < 0 || phase.corr_length <= 0) throw InputError("PhantomSpec: bad phase spec");
    if (repetitions < 1) throw InputError("PhantomSpec: repetitions must be >= 1");
  }

  // Nested ellipsoids plus two crossing rectangular tracts; gives smooth
  // interior contrast, anisotropic structures, and a bright fluid pocket.
  // Each tract is split into segments whose principal direction rotates
  // progressively (fanning in-plane for one tract, tilting through-plane for
  // the other), and two oblique prolate lenses are embedded off the tracts.
  // The many distinct tensors make the per-voxel signal profiles span a rich
  // subspace across volumes, so patch covariances are not trivially low-rank
  // the way a handful of constant compartments would be.
  static PhantomSpec standard(GridDims dims, double b_value = 1000.0, int n_dirs = 12) {
    PhantomSpec spec;
    spec.dims = dims;
    spec.scheme = DiffusionScheme::uniform(1, n_dirs, b_value);
    spec.dims.nd = spec.scheme.nd();

    PhantomRegion outer;
    outer.shape = PhantomRegion::Shape::Ellipsoid;
    outer.a = {0.5, 0.5, 0.5};
    outer.b = {0.44, 0.44, 0.47};
    outer.s0 = 1.0;
    outer.tensor = PhantomRegion::diag_tensor(0.7e-3, 0.7e-3, 0.7e-3);
    outer.name = "outer";
    spec.regions.push_back(outer);

    PhantomRegion inner;
    inner.shape = PhantomRegion::Shape::Ellipsoid;
    inner.a = {0.5, 0.40, 0.5};
    inner.b = {0.26, 0.20, 0.32};
    inner.s0 = 0.92;
    inner.tensor = PhantomRegion::diag_tensor(1.0e-3, 1.0e-3, 1.0e-3);
    inner.name = "inner";
    spec.regions.push_back(inner);

    // fanning tract along columns: four segments, principal direction
    // rotating in-plane about the slice axis
    const double deg = M_PI / 180.0;
    for (int i = 0; i < 4; ++i) {
      const double lo = 0.16 + 0.17 * i;
      const double theta = (-36.0 + 24.0 * i) * deg;
      PhantomRegion seg;
      seg.shape = PhantomRegion::Shape::Box;
      seg.a = {0.34, lo, 0.30};
      seg.b = {0.46, lo + 0.17, 0.70};
      seg.s0 = 0.85;
      seg.tensor = PhantomRegion::prolate_tensor(
          1.7e-3, 0.3e-3, {std::sin(theta), std::cos(theta), 0.0});
      seg.name = "tract_c" + std::to_string(i);
      spec.regions.push_back(seg);
    }

    // crossing tract along rows: four segments, principal direction tilting
    // progressively out of plane
    for (int i = 0; i < 4; ++i) {
      const double lo = 0.16 + 0.17 * i;
      const double phi = 22.0 * i * deg;
      PhantomRegion seg;
      seg.shape = PhantomRegion::Shape::Box;
      seg.a = {lo, 0.54, 0.30};
      seg.b = {lo + 0.17, 0.66, 0.70};
      seg.s0 = 0.85;
      seg.tensor = PhantomRegion::prolate_tensor(
          1.7e-3, 0.3e-3, {std::cos(phi), 0.0, std::sin(phi)});
      seg.name = "tract_r" + std::to_string(i);
      spec.regions.push_back(seg);
    }

    PhantomRegion fluid;
    fluid.shape = PhantomRegion::Shape::Ellipsoid;
    fluid.a = {0.68, 0.38, 0.5};
    fluid.b = {0.10, 0.11, 0.14};
    fluid.s0 = 1.3;
    fluid.tensor = PhantomRegion::diag_tensor(2.5e-3, 2.5e-3, 2.5e-3);
    fluid.name = "fluid";
    spec.regions.push_back(fluid);

    PhantomRegion lens_a;
    lens_a.shape = PhantomRegion::Shape::Ellipsoid;
    lens_a.a = {0.28, 0.30, 0.40};
    lens_a.b = {0.09, 0.10, 0.13};
    lens_a.s0 = 0.90;
    lens_a.tensor = PhantomRegion::prolate_tensor(1.5e-3, 0.35e-3, {1.0, 1.0, 0.0});
    lens_a.name = "lens_a";
    spec.regions.push_back(lens_a);

    PhantomRegion lens_b;
    lens_b.shape = PhantomRegion::Shape::Ellipsoid;
    lens_b.a = {0.70, 0.68, 0.56};
    lens_b.b = {0.08, 0.09, 0.12};
    lens_b.s0 = 0.95;
    lens_b.tensor = PhantomRegion::prolate_tensor(1.5e-3, 0.35e-3, {1.0, 0.0, 1.0});
    lens_b.name = "lens_b";
    spec.regions.push_back(lens_b);

    return spec;
  }
};

// Voxel-center coordinates in normalized units.
inline Eigen::Vector3d phantom_coord(const GridDims& d, int z, int r, int c) {
  return {(r + 0.5) / d.n1, (c + 0.5) / d.n2, (z + 0.5) / d.n3()};
}

// Region id per image voxel, -1 outside all regions.
inline std::vector<int> phantom_labels(const PhantomSpec& spec) {
  spec.validate();
  const GridDims& d = spec.dims;
  std::vector<int> label(std::size_t(d.image_voxels()), -1);
  parallel_for(0, d.n3(), [&](int z) {
    for (int r = 0; r < d.n1; ++r)
      for (int c = 0; c < d.n2; ++c) {
        const Eigen::Vector3d x = phantom_coord(d, z, r, c);
        for (int g = int(spec.regions.size()) - 1; g >= 0; --g)
          if (spec.regions[std::size_t(g)].contains(x)) {
            label[std::size_t(d.vox_at(z, r, c))] = g;
            break;
          }
      }
  });
  return label;
}

// Noise-free magnitude volumes: S = S0 exp(-b g^T D g) per region,
// zero outside the phantom support.
inline ImageStack make_phantom(const PhantomSpec& spec) {
  spec.validate();
  const GridDims& d = spec.dims;
  const std::vector<int> label = phantom_labels(spec);
  ImageStack truth(d);
  parallel_for(0, d.nd, [&](int q) {
    const double b = spec.scheme.bvals[std::size_t(q)];
    const Eigen::Vector3d& g = spec.scheme.bvecs[std::size_t(q)];
    for (std::int64_t v = 0; v < d.image_voxels(); ++v) {
      const int id = label[std::size_t(v)];
      if (id < 0) continue;
      const PhantomRegion& reg = spec.regions[std::size_t(id)];
      const double att = b > 0 ? std::exp(-b * g.dot(reg.tensor * g)) : 1.0;
      truth.at(q, v) = reg.s0 * att;
    }
  });
  return truth;
}

namespace detail {

// White noise shaped by a Gaussian transfer function in k-space. The output
// is normalized exactly: with a unitary FFT the filtered field's per-voxel
// variance equals mean(W^2), so dividing by its square root makes the field
// unit-variance regardless of grid size or correlation length.
inline void smooth_field_plane(int n1, int n2, double corr_length, RngStream& rng, double* out) {
  const std::int64_t n = std::int64_t(n1) * n2;
  std::vector<cplx> work(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) work[std::size_t(i)] = cplx(rng.normal(), 0.0);
  fft2_centered(work.data(), n1, n2);
  double w2_sum = 0.0;
  for (int r = 0; r < n1; ++r) {
    const double w1 = 2.0 * M_PI * (r - n1 / 2) / n1;
    for (int c = 0; c < n2; ++c) {
      const double w2 = 2.0 * M_PI * (c - n2 / 2) / n2;
      const double w = std::exp(-(w1 * w1 + w2 * w2) * corr_length * corr_length / 4.0);
      work[std::size_t(r) * n2 + c] *= w;
      w2_sum += w * w;
    }
  }
  ifft2_centered(work.data(), n1, n2);
  const double scale = 1.0 / std::sqrt(w2_sum / double(n));
  for (std::int64_t i = 0; i < n; ++i) out[i] = scale * work[std::size_t(i)].real();
}

}  // namespace detail

// Smooth random phase per slab image, std = amplitude, Gaussian
// autocorrelation with the requested length. Amplitude 0 gives exact zeros.
inline PhaseField make_motion_phase(const GridDims& dims, const PhaseSpec& phase, std::uint64_t seed) {
  dims.validate();
  if (phase.amplitude < 0 || phase.corr_length <= 0) throw InputError("make_motion_phase: bad phase spec");
  PhaseField p(dims);
  if (phase.amplitude == 0.0) return p;
  parallel_for(0, dims.ns * dims.k_enc * dims.nd, [&](int i) {
    const int s = i / (dims.k_enc * dims.nd);
    const int k = (i / dims.nd) % dims.k_enc;
    const int q = i % dims.nd;
    RngStream rng(seed, {0x70686173u, std::uint64_t(s), std::uint64_t(k), std::uint64_t(q)});
    std::vector<double> plane(std::size_t(dims.plane()));
    detail::smooth_field_plane(dims.n1, dims.n2, phase.corr_length, rng, plane.data());
    for (std::int64_t n = 0; n < dims.plane(); ++n)
      p.data[std::size_t(dims.slab_at(s, k, q, n))] = phase.amplitude * plane[std::size_t(n)];
  });
  return p;
}

// One noisy acquisition: forward model of the truth plus i.i.d. complex
// Gaussian noise (std noise_sigma per real/imag part), optionally inflated
// near the plane center.
inline SlabStack simulate_acquisition(const ImageStack& truth, const PhaseField& phase,
                                      const EncodingModel& enc, const PartialFourierModel& pf,
                                      double noise_sigma, std::uint64_t seed,
                                      double center_boost = 0.0, double center_width = 0.25) {
  if (noise_sigma < 0) throw InputError("simulate_acquisition: negative noise sigma");
  SlabStack acq = forward_model(truth, phase, enc, pf);
  if (noise_sigma == 0.0) return acq;
  const GridDims& d = truth.dims;
  std::vector<double> sigma_vox(std::size_t(d.plane()), noise_sigma);
  if (center_boost != 0.0) {
    const double w = center_width * 0.5 * (d.n1 + d.n2);
    for (int r = 0; r < d.n1; ++r)
      for (int c = 0; c < d.n2; ++c) {
        const double dr = r - 0.5 * (d.n1 - 1), dc = c - 0.5 * (d.n2 - 1);
        sigma_vox[std::size_t(d.at(r, c))] *=
            1.0 + center_boost * std::exp(-(dr * dr + dc * dc) / (2.0 * w * w));
      }
  }
  parallel_for(0, d.ns * d.k_enc * d.nd, [&](int i) {
    const int s = i / (d.k_enc * d.nd);
    const int k = (i / d.nd) % d.k_enc;
    const int q = i % d.nd;
    RngStream rng(seed, {0x6e6f6973u, std::uint64_t(s), std::uint64_t(k), std::uint64_t(q)});
    for (std::int64_t n = 0; n < d.plane(); ++n) {
      const double sg = sigma_vox[std::size_t(n)];
      acq.data[std::size_t(d.slab_at(s, k, q, n))] += cplx(sg * rng.normal(), sg * rng.normal());
    }
  });
  return acq;
}

// Truth plus repeated noisy acquisitions sharing the same motion phase.
struct SimulatedDataset {
  PhantomSpec spec;
  ImageStack truth;
  PhaseField truth_phase;
  std::vector<SlabStack> repetitions;
};

// Full simulation: phantom, motion phase, and independent noisy
// repetitions (repetition index folded into the noise seed).
inline SimulatedDataset simulate_dataset(const PhantomSpec& spec, const EncodingModel& enc,
                                         const PartialFourierModel& pf) {
  spec.validate();
  SimulatedDataset ds{spec, make_phantom(spec), make_motion_phase(spec.dims, spec.phase, spec.seed), {}};
  ds.repetitions.reserve(std::size_t(spec.repetitions));
  for (int rep = 0; rep < spec.repetitions; ++rep) {
    const std::uint64_t rep_seed = splitmix64(spec.seed ^ (0x72657000u + std::uint64_t(rep)));
    ds.repetitions.push_back(simulate_acquisition(ds.truth, ds.truth_phase, enc, pf, spec.noise_sigma,
                                                  rep_seed, spec.center_noise_boost,
                                                  spec.center_noise_width));
  }
  return ds;
}

}  // namespace gser
