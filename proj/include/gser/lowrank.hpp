#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gser/grid.hpp"
#include "gser/parallel.hpp"
#include "gser/stacks.hpp"

namespace gser {

// Patch geometry for sliding-window PCA denoising. The edge is given in
// millimetres and converted per axis through the voxel size, so the same
// physical patch is used regardless of grid resolution.
struct PatchConfig {
  double patch_edge_mm = 12.5;
  int stride = 0;  // voxels; 0 picks half the patch edge per axis

  void validate() const {
    if (!(patch_edge_mm > 0)) throw InputError("PatchConfig: patch_edge_mm must be positive");
    if (stride < 0) throw InputError("PatchConfig: stride must be nonnegative");
  }

  // Patch extent in voxels along (z, row, col), clamped to the volume.
  std::array<int, 3> patch_voxels(const GridDims& d,
                                  std::vector<std::string>* warnings = nullptr) const {
    validate();
    const std::array<double, 3> sizes = {d.voxel_size[2], d.voxel_size[0], d.voxel_size[1]};
    const std::array<int, 3> limits = {d.n3(), d.n1, d.n2};
    std::array<int, 3> out{};
    bool clamped = false;
    for (int a = 0; a < 3; ++a) {
      int v = int(std::lround(patch_edge_mm / sizes[a]));
      if (v < 1) v = 1;
      if (v > limits[a]) {
        v = limits[a];
        clamped = true;
      }
      out[a] = v;
    }
    if (warnings) {
      if (clamped) warnings->push_back("patch larger than volume; clamped to fit");
      const std::int64_t rows = std::int64_t(out[0]) * out[1] * out[2];
      if (rows < d.nd)
        warnings->push_back("patch holds fewer voxels than diffusion volumes; "
                            "rank selection degenerates");
    }
    return out;
  }
};

namespace detail {

// Start offsets that tile [0, n) with full coverage: regular stride steps plus
// a final patch flushed against the end.
inline std::vector<int> patch_starts(int n, int patch, int stride) {
  std::vector<int> starts;
  if (patch >= n) {
    starts.push_back(0);
    return starts;
  }
  for (int s = 0; s + patch < n; s += stride) starts.push_back(s);
  starts.push_back(n - patch);
  return starts;
}

// Stride is capped at the patch edge so the tiling always has full coverage.
inline int axis_stride(int configured, int patch) {
  const int s = configured > 0 ? configured : std::max(1, patch / 2);
  return std::min(s, patch);
}

}  // namespace detail

// Casorati extraction: rows are patch voxels in (z, row, col) order, columns
// are diffusion volumes.
inline Eigen::MatrixXd extract_casorati(const ImageStack& x, const std::array<int, 3>& start,
                                        const std::array<int, 3>& size) {
  const GridDims& d = x.dims;
  if (start[0] < 0 || start[1] < 0 || start[2] < 0 || start[0] + size[0] > d.n3() ||
      start[1] + size[1] > d.n1 || start[2] + size[2] > d.n2)
    throw InputError("extract_casorati: patch exceeds volume bounds");
  const std::int64_t rows = std::int64_t(size[0]) * size[1] * size[2];
  Eigen::MatrixXd m(rows, d.nd);
  std::int64_t row = 0;
  for (int z = start[0]; z < start[0] + size[0]; ++z)
    for (int r = start[1]; r < start[1] + size[1]; ++r)
      for (int c = start[2]; c < start[2] + size[2]; ++c, ++row) {
        const std::int64_t vox = d.vox_at(z, r, c);
        for (int q = 0; q < d.nd; ++q) m(row, q) = x.at(q, vox);
      }
  return m;
}

inline void insert_casorati(const Eigen::MatrixXd& m, const std::array<int, 3>& start,
                            const std::array<int, 3>& size, ImageStack& acc,
                            Eigen::VectorXd& counts) {
  const GridDims& d = acc.dims;
  std::int64_t row = 0;
  for (int z = start[0]; z < start[0] + size[0]; ++z)
    for (int r = start[1]; r < start[1] + size[1]; ++r)
      for (int c = start[2]; c < start[2] + size[2]; ++c, ++row) {
        const std::int64_t vox = d.vox_at(z, r, c);
        for (int q = 0; q < d.nd; ++q) acc.at(q, vox) += m(row, q);
        counts[vox] += 1.0;
      }
}

// Best rank-r approximation in Frobenius norm.
inline Eigen::MatrixXd svd_truncate(const Eigen::MatrixXd& m, int r) {
  const int rank_max = int(std::min(m.rows(), m.cols()));
  if (r < 0 || r > rank_max) {
    std::ostringstream msg;
    msg << "svd_truncate: rank " << r << " outside [0, " << rank_max << "]";
    throw InputError(msg.str());
  }
  if (r == 0) return Eigen::MatrixXd::Zero(m.rows(), m.cols());
  if (r == rank_max) return m;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal() *
         svd.matrixV().leftCols(r).transpose();
}

struct MpSelection {
  int rank = 0;
  double sigma_hat = 0.0;
};

namespace detail {

// Expected mean of the lowest-f quantile mass of the Marchenko-Pastur law
// with ratio gamma, as a fraction of sigma^2. Corrects the bias of averaging
// a truncated noise bulk whose top members were displaced by signal.
inline double mp_truncated_mean_factor(double gamma, double f) {
  if (gamma >= 1.0 || f >= 1.0 - 1e-12 || f <= 0.0) return 1.0;
  const double sq = std::sqrt(gamma);
  const double a = (1 - sq) * (1 - sq), b = (1 + sq) * (1 + sq);
  const int n = 4096;
  const double h = (b - a) / n;
  double mass = 0.0, moment = 0.0, prev_d = 0.0, prev_xd = 0.0;
  for (int i = 1; i <= n; ++i) {
    const double x = a + h * i;
    const double s = std::max(0.0, (b - x) * (x - a));
    const double dens = std::sqrt(s) / (2.0 * M_PI * gamma * x);
    const double xd = dens * x;
    const double dm = 0.5 * (prev_d + dens) * h;
    if (mass + dm >= f) {
      moment += 0.5 * (prev_xd + xd) * h * ((f - mass) / dm);
      mass = f;
      break;
    }
    mass += dm;
    moment += 0.5 * (prev_xd + xd) * h;
    prev_d = dens;
    prev_xd = xd;
  }
  if (mass < f) return 1.0;
  return std::max(1e-12, moment / f);
}

}  // namespace detail

// Marchenko-Pastur rank cut. Input: eigenvalues of M^T M / rows sorted
// descending. Scans retained-rank candidates from 0 upward; for each, the
// trailing eigenvalues form the candidate noise bulk whose truncation-
// corrected mean estimates the noise variance. The first candidate whose
// largest bulk eigenvalue sits at or below the MP upper edge
// sigma^2 (1+sqrt(gamma))^2 wins; equality counts as noise, keeping the rule
// conservative.
inline MpSelection mp_rank(const Eigen::VectorXd& eigs, std::int64_t rows, int cols) {
  if (eigs.size() < 2) throw InputError("mp_rank: need at least 2 eigenvalues");
  if (rows < 1 || cols < 1) throw InputError("mp_rank: matrix dimensions must be positive");
  for (std::int64_t i = 0; i < eigs.size(); ++i) {
    if (eigs[i] < -1e-12 * std::abs(eigs[0]))
      throw InputError("mp_rank: eigenvalues must be nonnegative");
    if (i > 0 && eigs[i] > eigs[i - 1] * (1 + 1e-12) + 1e-300)
      throw InputError("mp_rank: eigenvalues must be sorted descending");
  }
  const double gamma = double(cols) / double(rows);
  const double edge_factor = (1.0 + std::sqrt(gamma)) * (1.0 + std::sqrt(gamma));
  const int n = int(eigs.size());
  for (int p = 0; p < n; ++p) {
    const double factor = detail::mp_truncated_mean_factor(gamma, double(n - p) / double(n));
    const double sigma2 = eigs.tail(n - p).sum() / double(n - p) / factor;
    if (eigs[p] <= sigma2 * edge_factor)
      return {p, std::sqrt(std::max(0.0, sigma2))};
  }
  // unreachable: the single-element bulk always accepts itself
  return {n - 1, std::sqrt(std::max(0.0, eigs[n - 1]))};
}

namespace detail {

struct PatchJob {
  std::array<int, 3> start;
  Eigen::MatrixXd denoised;
};

// Runs per_patch(start, casorati) over the full tiling in parallel, then
// combines overlaps by uniform averaging. Accumulation runs in fixed patch
// order so the result is identical for any thread count.
template <typename PerPatch>
inline ImageStack patchwise_denoise(const ImageStack& x, const PatchConfig& cfg,
                                    std::vector<std::string>* warnings, PerPatch per_patch) {
  x.check("patchwise_denoise");
  const GridDims& d = x.dims;
  const std::array<int, 3> size = cfg.patch_voxels(d, warnings);
  const std::array<int, 3> strides = {detail::axis_stride(cfg.stride, size[0]),
                                      detail::axis_stride(cfg.stride, size[1]),
                                      detail::axis_stride(cfg.stride, size[2])};
  const std::vector<int> zs = detail::patch_starts(d.n3(), size[0], strides[0]);
  const std::vector<int> rs = detail::patch_starts(d.n1, size[1], strides[1]);
  const std::vector<int> cs = detail::patch_starts(d.n2, size[2], strides[2]);

  std::vector<PatchJob> jobs(zs.size() * rs.size() * cs.size());
  std::int64_t idx = 0;
  for (int z : zs)
    for (int r : rs)
      for (int c : cs) jobs[idx++].start = {z, r, c};

  parallel_for(0, std::int64_t(jobs.size()), [&](std::int64_t i) {
    jobs[i].denoised = per_patch(jobs[i].start, extract_casorati(x, jobs[i].start, size));
  });

  ImageStack acc(d);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(d.image_voxels());
  for (const PatchJob& job : jobs) insert_casorati(job.denoised, job.start, size, acc, counts);
  for (std::int64_t vox = 0; vox < d.image_voxels(); ++vox)
    for (int q = 0; q < d.nd; ++q) acc.at(q, vox) /= counts[vox];
  return acc;
}

}  // namespace detail

// Sliding-window PCA denoising with per-patch Marchenko-Pastur rank selection.
inline ImageStack mppca_denoise(const ImageStack& x, const PatchConfig& cfg,
                                std::vector<std::string>* warnings = nullptr) {
  return detail::patchwise_denoise(x, cfg, warnings, [&](const std::array<int, 3>&,
                                                         const Eigen::MatrixXd& m) -> Eigen::MatrixXd {
    const std::int64_t rows = m.rows();
    const int cols = int(m.cols());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m.transpose() * m / double(rows));
    const Eigen::VectorXd eigs_desc = eig.eigenvalues().reverse();
    const MpSelection sel = mp_rank(eigs_desc, rows, cols);
    if (sel.rank == 0) return Eigen::MatrixXd::Zero(rows, cols).eval();
    if (sel.rank == cols) return m;
    // project onto the top eigenvectors of the diffusion-dimension covariance
    const Eigen::MatrixXd v = eig.eigenvectors().rightCols(sel.rank);
    return (m * v * v.transpose()).eval();
  });
}

// Exhaustive error table for oracle rank selection: errors[r] is the squared
// Frobenius distance from the rank-r truncation of m to gold, computed
// incrementally from one SVD.
struct OracleRankSearch {
  int rank = 0;
  std::vector<double> errors;
};

inline OracleRankSearch oracle_rank_search(const Eigen::MatrixXd& m, const Eigen::MatrixXd& gold) {
  if (m.rows() != gold.rows() || m.cols() != gold.cols())
    throw ShapeError("oracle_rank_search: input and gold shapes differ");
  const int rank_max = int(std::min(m.rows(), m.cols()));
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  OracleRankSearch out;
  out.errors.resize(rank_max + 1);
  out.errors[0] = gold.squaredNorm();
  for (int r = 1; r <= rank_max; ++r) {
    const double s = svd.singularValues()[r - 1];
    const double cross = svd.matrixU().col(r - 1).dot(gold * svd.matrixV().col(r - 1));
    out.errors[r] = out.errors[r - 1] + s * s - 2.0 * s * cross;
  }
  out.rank = 0;
  for (int r = 1; r <= rank_max; ++r)
    if (out.errors[r] < out.errors[out.rank]) out.rank = r;
  return out;
}

// Oracle local PCA: per patch, the rank minimizing squared error against the
// gold standard. Best-case denoising, not realizable without the gold.
inline ImageStack lpca_oracle_denoise(const ImageStack& x, const ImageStack& gold,
                                      const PatchConfig& cfg,
                                      std::vector<std::string>* warnings = nullptr) {
  check_same_dims(x.dims, gold.dims, "lpca_oracle_denoise");
  gold.check("lpca_oracle_denoise gold");
  const std::array<int, 3> size = cfg.patch_voxels(x.dims);
  return detail::patchwise_denoise(
      x, cfg, warnings, [&](const std::array<int, 3>& start, const Eigen::MatrixXd& m) {
        const Eigen::MatrixXd g = extract_casorati(gold, start, size);
        return svd_truncate(m, oracle_rank_search(m, g).rank);
      });
}

// Oracle global PCA: one Casorati matrix for the entire volume, one rank.
inline ImageStack gpca_oracle_denoise(const ImageStack& x, const ImageStack& gold) {
  check_same_dims(x.dims, gold.dims, "gpca_oracle_denoise");
  x.check("gpca_oracle_denoise");
  gold.check("gpca_oracle_denoise gold");
  const GridDims& d = x.dims;
  const std::array<int, 3> start = {0, 0, 0};
  const std::array<int, 3> size = {d.n3(), d.n1, d.n2};
  const Eigen::MatrixXd m = extract_casorati(x, start, size);
  const Eigen::MatrixXd g = extract_casorati(gold, start, size);
  const OracleRankSearch search = oracle_rank_search(m, g);
  const Eigen::MatrixXd den = svd_truncate(m, search.rank);
  ImageStack out(d);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(d.image_voxels());
  insert_casorati(den, start, size, out, counts);
  return out;
}

}  // namespace gser
