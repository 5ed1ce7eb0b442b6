#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <vector>

#include "gser/encoding.hpp"
#include "gser/fft.hpp"
#include "gser/grid.hpp"
#include "gser/parallel.hpp"
#include "gser/stacks.hpp"

namespace gser {

struct TikhonovParams {
  double lambda = 0.1;

  void validate() const {
    if (lambda < 0) throw InputError("TikhonovParams: lambda must be >= 0");
  }

  // Relative default: 2% of the mean diagonal energy of the encoding normal
  // matrix, so the same setting works across profile scalings.
  static TikhonovParams relative_default(const EncodingModel& enc) {
    const double tr = (enc.profile_matrix.adjoint() * enc.profile_matrix).real().trace();
    return TikhonovParams{0.02 * tr / double(enc.k_enc())};
  }
};

// Half-width (in k-space samples) of the symmetric low-frequency band that a
// partial-Fourier factor leaves fully sampled. Used as the default phase
// estimation window so the estimate never sees the asymmetric truncation.
inline int symmetric_band_halfwidth(int n, double pf_fraction) {
  const int keep = int(std::ceil(pf_fraction * n));
  return std::max(1, std::min(keep - n / 2, n / 2));
}

// Smooth phase estimate from a heavily k-space-windowed (low resolution)
// version of each slab image. A separable Hamming window of the given
// half-width is applied around DC; the phase of the result is returned.
// All-zero planes get phase 0; their count is reported via zero_planes.
inline PhaseField estimate_phase_lowres(const SlabStack& b, int halfwidth, int* zero_planes = nullptr) {
  b.check("estimate_phase_lowres");
  const GridDims& d = b.dims;
  if (halfwidth < 1 || halfwidth > std::min(d.n1, d.n2) / 2)
    throw InputError("estimate_phase_lowres: halfwidth out of range");
  PhaseField p(d);
  std::vector<int> zero_flags(std::size_t(d.ns) * d.k_enc * d.nd, 0);

  auto hamming = [&](int n) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
      const int off = i - n / 2;
      if (std::abs(off) <= halfwidth)
        w[i] = 0.54 + 0.46 * std::cos(M_PI * off / double(halfwidth));
    }
    return w;
  };
  const Eigen::VectorXd w1 = hamming(d.n1), w2 = hamming(d.n2);

  parallel_for(0, d.ns * d.k_enc * d.nd, [&](int i) {
    const std::int64_t base = std::int64_t(i) * d.plane();
    std::vector<cplx> plane(b.data.data() + base, b.data.data() + base + d.plane());
    bool all_zero = true;
    for (const cplx& v : plane)
      if (v != cplx(0.0, 0.0)) { all_zero = false; break; }
    if (all_zero) {
      zero_flags[std::size_t(i)] = 1;
      return;  // phase already zero
    }
    fft2_centered(plane.data(), d.n1, d.n2);
    for (int r = 0; r < d.n1; ++r)
      for (int c = 0; c < d.n2; ++c) plane[std::size_t(r) * d.n2 + c] *= w1[r] * w2[c];
    ifft2_centered(plane.data(), d.n1, d.n2);
    for (std::int64_t n = 0; n < d.plane(); ++n) {
      const cplx v = plane[std::size_t(n)];
      p.data[std::size_t(base + n)] = (v == cplx(0.0, 0.0)) ? 0.0 : std::arg(v);
    }
  });
  if (zero_planes) {
    *zero_planes = 0;
    for (int f : zero_flags) *zero_planes += f;
  }
  return p;
}

// Demodulate the estimated phase and keep the real part.
inline RealSlabStack phase_correct(const SlabStack& b, const PhaseField& p) {
  b.check("phase_correct");
  check_same_dims(b.dims, p.dims, "phase_correct");
  RealSlabStack out(b.dims);
  parallel_for(0, b.dims.ns * b.dims.k_enc * b.dims.nd, [&](int i) {
    const std::int64_t base = std::int64_t(i) * b.dims.plane();
    for (std::int64_t n = 0; n < b.dims.plane(); ++n) {
      const std::int64_t j = base + n;
      out.data[std::size_t(j)] =
          (b.data[std::size_t(j)] * std::exp(cplx(0.0, -p.data[std::size_t(j)]))).real();
    }
  });
  return out;
}

// Per-voxel-column regularized inversion of the RF encoding: solves
// (Re(A^H A) + lambda I) f = Re(A^H) b for each (slab, DWI, in-plane voxel)
// column with one shared factorization. For a real profile this is the exact
// Tikhonov solution; the Re() keeps the output real for complex profiles.
inline ImageStack tikhonov_recon(const RealSlabStack& b, const EncodingModel& enc,
                                 const TikhonovParams& params) {
  b.check("tikhonov_recon");
  params.validate();
  const GridDims& d = b.dims;
  if (enc.k_enc() != d.k_enc) throw ShapeError("tikhonov_recon: profile size does not match k_enc");
  const int K = d.k_enc;

  const Eigen::MatrixXd AtA = (enc.profile_matrix.adjoint() * enc.profile_matrix).real();
  const Eigen::MatrixXd At = enc.profile_matrix.adjoint().real();
  Eigen::MatrixXd normal = AtA + params.lambda * Eigen::MatrixXd::Identity(K, K);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(normal);
  const double emin = es.eigenvalues().minCoeff(), emax = es.eigenvalues().maxCoeff();
  if (emin <= 0 || emax / emin > 1e12) {
    std::ostringstream msg;
    msg << "tikhonov_recon: normal matrix singular or ill-conditioned (condition "
        << (emin > 0 ? emax / emin : std::numeric_limits<double>::infinity()) << ")";
    throw SolverError(msg.str());
  }
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);

  ImageStack out(d);
  parallel_for(0, d.ns * d.nd, [&](int i) {
    const int s = i / d.nd, q = i % d.nd;
    Eigen::MatrixXd rhs(K, d.plane());
    for (int k = 0; k < K; ++k) {
      const std::int64_t base = d.slab_at(s, k, q, 0);
      for (std::int64_t n = 0; n < d.plane(); ++n) rhs(k, n) = b.data[std::size_t(base + n)];
    }
    const Eigen::MatrixXd sol = ldlt.solve(At * rhs);
    for (int k = 0; k < K; ++k) {
      const int z = s * K + k;
      const std::int64_t base = d.image_at(q, d.vox_at(z, 0, 0));
      for (std::int64_t n = 0; n < d.plane(); ++n) out.data[std::size_t(base + n)] = sol(k, n);
    }
  });
  return out;
}

// Voxelwise mean across repetitions (the gold-standard combiner).
inline ImageStack average_repetitions(const std::vector<ImageStack>& recons) {
  if (recons.empty()) throw InputError("average_repetitions: no inputs");
  for (const auto& r : recons) check_same_dims(r.dims, recons.front().dims, "average_repetitions");
  ImageStack out(recons.front().dims);
  for (const auto& r : recons) out.data += r.data;
  out.data /= double(recons.size());
  return out;
}

// Per-sub-slice noise-variance gain of the regularized inversion: with unit
// input variance on the phase-corrected data, output variance per encoding
// position is diag(T T^T), T = (Re(A^H A)+lambda I)^{-1} Re(A^H).
inline Eigen::VectorXd tikhonov_noise_gain(const EncodingModel& enc, double lambda) {
  const int K = enc.k_enc();
  const Eigen::MatrixXd AtA = (enc.profile_matrix.adjoint() * enc.profile_matrix).real();
  const Eigen::MatrixXd normal = AtA + lambda * Eigen::MatrixXd::Identity(K, K);
  const Eigen::MatrixXd T = normal.ldlt().solve(enc.profile_matrix.adjoint().real());
  return (T * T.transpose()).diagonal();
}

}  // namespace gser
