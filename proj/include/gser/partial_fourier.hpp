#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "gser/fft.hpp"
#include "gser/grid.hpp"

namespace gser {

// Partial-Fourier zero-filling operator G: FFT each in-plane image into
// k-space, zero the unmeasured phase-encode lines, inverse FFT. The retained
// band is a contiguous block of ceil(pf_fraction * n2) phase-encode columns
// ending at the top edge of centered k-space, so it always contains DC; the
// readout axis stays fully sampled. G is a projection (idempotent) and
// self-adjoint under the unitary centered FFT.
struct PartialFourierModel {
  double pf_fraction = 1.0;
  int n1 = 0;
  int n2 = 0;
  Eigen::VectorXd mask;  // per phase-encode column, 0 or 1

  PartialFourierModel() = default;

  PartialFourierModel(int rows, int cols, double fraction)
      : pf_fraction(fraction), n1(rows), n2(cols) {
    if (rows <= 0 || cols <= 0) throw InputError("PartialFourierModel: bad plane size");
    if (fraction <= 0.0 || fraction > 1.0)
      throw InputError("PartialFourierModel: pf_fraction must be in (0, 1]");
    const int keep = int(std::ceil(fraction * cols));
    mask = Eigen::VectorXd::Zero(cols);
    mask.tail(keep).setOnes();
    if (mask[cols / 2] == 0.0)
      throw InputError("PartialFourierModel: retained band misses the k-space center");
  }

  bool is_identity() const { return n2 == 0 || int(mask.sum()) == n2; }
  int retained_lines() const { return int(mask.sum()); }
  // Full binary k-space mask (n1 x n2, centered convention).
  Eigen::MatrixXd full_mask() const { return Eigen::VectorXd::Ones(n1) * mask.transpose(); }
};

// Applies G to one complex in-plane image (row-major n1 x n2), in place.
inline void apply_partial_fourier_plane(cplx* img, const PartialFourierModel& pf) {
  if (pf.is_identity()) return;
  const int n1 = pf.n1, n2 = pf.n2;
  std::vector<cplx> k(std::size_t(n1) * n2);
  fft2_centered(img, k.data(), n1, n2);
  for (int r = 0; r < n1; ++r)
    for (int c = 0; c < n2; ++c) k[std::size_t(r) * n2 + c] *= pf.mask[c];
  ifft2_centered(k.data(), img, n1, n2);
}

inline Eigen::VectorXcd apply_partial_fourier(const Eigen::VectorXcd& img,
                                              const PartialFourierModel& pf) {
  if (img.size() != std::int64_t(pf.n1) * pf.n2)
    throw ShapeError("apply_partial_fourier: image shape mismatch");
  Eigen::VectorXcd out = img;
  apply_partial_fourier_plane(out.data(), pf);
  return out;
}

}  // namespace gser
