#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gser/grid.hpp"
#include "gser/parallel.hpp"
#include "gser/scheme.hpp"
#include "gser/stacks.hpp"

namespace gser {

// Per-voxel diffusion tensors stored as the six unique components
// (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz) plus the fitted S0. Voxels outside the fit
// mask hold zeros. negative_flag marks voxels whose tensor had a negative
// eigenvalue (noise artifact); eigenvalues are clamped only inside the FA and
// color-FA maps, never in the stored tensor.
struct TensorField {
  GridDims dims;
  Eigen::VectorXd s0;
  Eigen::MatrixXd coeffs;  // image_voxels x 6
  std::vector<std::uint8_t> negative_flag;
  std::int64_t clamped_signals = 0;

  explicit TensorField(const GridDims& d)
      : dims(d),
        s0(Eigen::VectorXd::Zero(d.image_voxels())),
        coeffs(Eigen::MatrixXd::Zero(d.image_voxels(), 6)),
        negative_flag(std::size_t(d.image_voxels()), 0) {}

  Eigen::Matrix3d tensor_at(std::int64_t vox) const {
    Eigen::Matrix3d t;
    const auto row = coeffs.row(vox);
    t << row[0], row[3], row[4], row[3], row[1], row[5], row[4], row[5], row[2];
    return t;
  }

  void set_tensor(std::int64_t vox, const Eigen::Matrix3d& t) {
    coeffs.row(vox) << t(0, 0), t(1, 1), t(2, 2), t(0, 1), t(0, 2), t(1, 2);
  }
};

// Norm-ratio error over masked entries. An empty mask vector means all
// entries count.
inline double nrmse(const Eigen::VectorXd& x, const Eigen::VectorXd& gold,
                    const std::vector<std::uint8_t>& mask = {}) {
  if (x.size() != gold.size()) throw ShapeError("nrmse: size mismatch");
  if (!mask.empty() && std::int64_t(mask.size()) != gold.size())
    throw ShapeError("nrmse: mask size mismatch");
  double num = 0.0, den = 0.0;
  bool any = false;
  for (std::int64_t i = 0; i < gold.size(); ++i) {
    if (!mask.empty() && !mask[std::size_t(i)]) continue;
    any = true;
    num += (x[i] - gold[i]) * (x[i] - gold[i]);
    den += gold[i] * gold[i];
  }
  if (!any) throw InputError("nrmse: empty mask");
  if (den == 0.0) throw InputError("nrmse: gold standard has zero norm on the mask");
  return std::sqrt(num / den);
}

// NRMSE of an image stack over a per-voxel mask applied to every volume.
inline double nrmse_stack(const ImageStack& x, const ImageStack& gold,
                          const std::vector<std::uint8_t>& voxel_mask = {}) {
  check_same_dims(x.dims, gold.dims, "nrmse_stack");
  if (voxel_mask.empty()) return nrmse(x.data, gold.data);
  if (std::int64_t(voxel_mask.size()) != gold.dims.image_voxels())
    throw ShapeError("nrmse_stack: mask size mismatch");
  std::vector<std::uint8_t> full(std::size_t(gold.dims.image_size()));
  for (int q = 0; q < gold.dims.nd; ++q)
    for (std::int64_t vox = 0; vox < gold.dims.image_voxels(); ++vox)
      full[std::size_t(gold.dims.image_at(q, vox))] = voxel_mask[std::size_t(vox)];
  return nrmse(x.data, gold.data, full);
}

namespace detail {

// Log-linear design matrix: ln S_q = ln S0 - b_q g^T D g, unknowns
// (ln S0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz).
inline Eigen::MatrixXd dti_design(const DiffusionScheme& scheme) {
  const int nd = scheme.nd();
  Eigen::MatrixXd x(nd, 7);
  for (int q = 0; q < nd; ++q) {
    const double b = scheme.bvals[std::size_t(q)];
    const Eigen::Vector3d& g = scheme.bvecs[std::size_t(q)];
    x(q, 0) = 1.0;
    x(q, 1) = -b * g[0] * g[0];
    x(q, 2) = -b * g[1] * g[1];
    x(q, 3) = -b * g[2] * g[2];
    x(q, 4) = -2.0 * b * g[0] * g[1];
    x(q, 5) = -2.0 * b * g[0] * g[2];
    x(q, 6) = -2.0 * b * g[1] * g[2];
  }
  return x;
}

}  // namespace detail

// Log-linear least-squares tensor fit. Nonpositive signals inside the mask
// are clamped to a small positive floor and counted. The weighted variant
// reweights each voxel's rows by its signal magnitudes, the standard
// first-order noise correction for the log transform.
inline TensorField fit_dti(const ImageStack& dwis, const DiffusionScheme& scheme,
                           const std::vector<std::uint8_t>& mask = {}, bool weighted = false) {
  dwis.check("fit_dti");
  scheme.validate(true);
  const GridDims& d = dwis.dims;
  if (scheme.nd() != d.nd) throw ShapeError("fit_dti: scheme volume count != stack nd");
  if (!mask.empty() && std::int64_t(mask.size()) != d.image_voxels())
    throw ShapeError("fit_dti: mask size mismatch");

  const Eigen::MatrixXd x = detail::dti_design(scheme);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < 7)
    throw InputError("fit_dti: rank-deficient design (collinear gradient directions)");
  const Eigen::MatrixXd pinv = qr.solve(Eigen::MatrixXd::Identity(d.nd, d.nd));

  const double floor = 1e-10 * std::max(1.0, dwis.data.cwiseAbs().maxCoeff());
  TensorField field(d);
  for (std::int64_t vox = 0; vox < d.image_voxels(); ++vox) {
    if (!mask.empty() && !mask[std::size_t(vox)]) continue;
    for (int q = 0; q < d.nd; ++q)
      if (dwis.at(q, vox) <= 0.0) ++field.clamped_signals;
  }

  parallel_for(0, d.image_voxels(), [&](std::int64_t vox) {
    if (!mask.empty() && !mask[std::size_t(vox)]) return;
    Eigen::VectorXd logs(d.nd);
    for (int q = 0; q < d.nd; ++q) {
      double s = dwis.at(q, vox);
      if (s <= 0.0) s = floor;
      logs[q] = std::log(s);
    }
    Eigen::VectorXd beta(7);
    if (!weighted) {
      beta = pinv * logs;
    } else {
      Eigen::VectorXd w(d.nd);
      for (int q = 0; q < d.nd; ++q) {
        double s = dwis.at(q, vox);
        w[q] = (s > 0.0 ? s : floor);
      }
      const Eigen::MatrixXd xw = w.asDiagonal() * x;
      beta = (xw.transpose() * xw).ldlt().solve(xw.transpose() * (w.asDiagonal() * logs));
    }
    field.s0[vox] = std::exp(beta[0]);
    field.coeffs.row(vox) = beta.tail(6).transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(field.tensor_at(vox));
    if (eig.eigenvalues().minCoeff() < 0.0) field.negative_flag[std::size_t(vox)] = 1;
  });

  return field;
}

// Synthesizes noiseless signals from a fitted field, the inverse of fit_dti on
// clean data.
inline ImageStack synthesize_dwis(const TensorField& field, const DiffusionScheme& scheme) {
  const GridDims& d = field.dims;
  if (scheme.nd() != d.nd) throw ShapeError("synthesize_dwis: scheme volume count != nd");
  ImageStack out(d);
  parallel_for(0, d.image_voxels(), [&](std::int64_t vox) {
    const Eigen::Matrix3d t = field.tensor_at(vox);
    for (int q = 0; q < d.nd; ++q) {
      const double b = scheme.bvals[std::size_t(q)];
      const Eigen::Vector3d& g = scheme.bvecs[std::size_t(q)];
      out.at(q, vox) = field.s0[vox] * std::exp(-b * g.dot(t * g));
    }
  });
  return out;
}

inline double md(const Eigen::Matrix3d& t) { return t.trace() / 3.0; }

// Fractional anisotropy from eigenvalues clamped to be nonnegative; the zero
// tensor maps to 0 and the result is clamped to [0, 1].
inline double fa(const Eigen::Matrix3d& t) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(t);
  Eigen::Vector3d lam = eig.eigenvalues().cwiseMax(0.0);
  const double norm = lam.norm();
  if (norm == 0.0) return 0.0;
  const double mean = lam.mean();
  const double dev = (lam.array() - mean).matrix().norm();
  return std::clamp(std::sqrt(1.5) * dev / norm, 0.0, 1.0);
}

// FA-scaled absolute principal eigenvector, the usual red-green-blue
// direction encoding.
inline Eigen::Vector3d color_fa(const Eigen::Matrix3d& t) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(t);
  const Eigen::Vector3d v = eig.eigenvectors().col(2);  // largest eigenvalue
  return fa(t) * v.cwiseAbs();
}

inline Eigen::VectorXd md_map(const TensorField& field) {
  Eigen::VectorXd out(field.dims.image_voxels());
  parallel_for(0, field.dims.image_voxels(),
               [&](std::int64_t vox) { out[vox] = md(field.tensor_at(vox)); });
  return out;
}

inline Eigen::VectorXd fa_map(const TensorField& field) {
  Eigen::VectorXd out(field.dims.image_voxels());
  parallel_for(0, field.dims.image_voxels(),
               [&](std::int64_t vox) { out[vox] = fa(field.tensor_at(vox)); });
  return out;
}

// One row of the evaluation table.
struct MetricRow {
  std::string name;
  double dwi_nrmse = 0.0;
  double md_nrmse = 0.0;
  double fa_nrmse = 0.0;
  double fa_wm_nrmse = 0.0;  // FA error on the gold FA > threshold submask
};

struct EvaluationReport {
  std::vector<MetricRow> rows;
  double fa_threshold = 0.3;
  std::int64_t mask_voxels = 0;
  std::int64_t wm_voxels = 0;

  std::string to_text() const {
    std::ostringstream out;
    out << std::left << std::setw(16) << "variant" << std::right << std::setw(12) << "dwi"
        << std::setw(12) << "md" << std::setw(12) << "fa" << std::setw(12) << "fa_wm" << "\n";
    for (const MetricRow& r : rows) {
      out << std::left << std::setw(16) << r.name << std::right << std::fixed
          << std::setprecision(6) << std::setw(12) << r.dwi_nrmse << std::setw(12) << r.md_nrmse
          << std::setw(12) << r.fa_nrmse << std::setw(12) << r.fa_wm_nrmse << "\n";
    }
    return out.str();
  }

  std::string to_delimited() const {
    std::ostringstream out;
    out << "variant\tdwi_nrmse\tmd_nrmse\tfa_nrmse\tfa_wm_nrmse\n";
    out << std::setprecision(17);
    for (const MetricRow& r : rows)
      out << r.name << "\t" << r.dwi_nrmse << "\t" << r.md_nrmse << "\t" << r.fa_nrmse << "\t"
          << r.fa_wm_nrmse << "\n";
    return out.str();
  }

  static EvaluationReport parse_delimited(const std::string& text) {
    EvaluationReport rep;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "variant\tdwi_nrmse\tmd_nrmse\tfa_nrmse\tfa_wm_nrmse")
      throw IoError("evaluation report: bad header line");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream fields(line);
      MetricRow row;
      std::string tok;
      if (!std::getline(fields, row.name, '\t')) throw IoError("evaluation report: bad row");
      auto next = [&](double& dst) {
        if (!std::getline(fields, tok, '\t')) throw IoError("evaluation report: bad row");
        dst = std::stod(tok);
      };
      next(row.dwi_nrmse);
      next(row.md_nrmse);
      next(row.fa_nrmse);
      next(row.fa_wm_nrmse);
      rep.rows.push_back(row);
    }
    return rep;
  }
};

// Fits gold and every variant, then reports NRMSE of the DWIs and of the MD
// and FA maps over the brain mask, plus FA error restricted to the gold
// FA > fa_threshold submask.
inline EvaluationReport evaluation_report(
    const std::vector<std::pair<std::string, ImageStack>>& variants, const ImageStack& gold,
    const DiffusionScheme& scheme, const std::vector<std::uint8_t>& brain_mask,
    double fa_threshold = 0.3) {
  if (variants.empty()) throw InputError("evaluation_report: no variants");
  const GridDims& d = gold.dims;
  const TensorField gold_fit = fit_dti(gold, scheme, brain_mask);
  const Eigen::VectorXd gold_md = md_map(gold_fit);
  const Eigen::VectorXd gold_fa = fa_map(gold_fit);

  std::vector<std::uint8_t> wm_mask(std::size_t(d.image_voxels()), 0);
  for (std::int64_t vox = 0; vox < d.image_voxels(); ++vox) {
    const bool in = brain_mask.empty() || brain_mask[std::size_t(vox)];
    if (in && gold_fa[vox] > fa_threshold) wm_mask[std::size_t(vox)] = 1;
  }

  EvaluationReport rep;
  rep.fa_threshold = fa_threshold;
  rep.mask_voxels = brain_mask.empty()
                        ? d.image_voxels()
                        : std::int64_t(std::count(brain_mask.begin(), brain_mask.end(), 1));
  rep.wm_voxels = std::int64_t(std::count(wm_mask.begin(), wm_mask.end(), 1));

  for (const auto& [name, stack] : variants) {
    check_same_dims(stack.dims, d, "evaluation_report");
    MetricRow row;
    row.name = name;
    row.dwi_nrmse = nrmse_stack(stack, gold, brain_mask);
    const TensorField fit = fit_dti(stack, scheme, brain_mask);
    row.md_nrmse = nrmse(md_map(fit), gold_md, brain_mask);
    row.fa_nrmse = nrmse(fa_map(fit), gold_fa, brain_mask);
    row.fa_wm_nrmse = rep.wm_voxels > 0 ? nrmse(fa_map(fit), gold_fa, wm_mask) : 0.0;
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace gser
