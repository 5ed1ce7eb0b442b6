#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gser/conventional.hpp"
#include "gser/forward_model.hpp"
#include "gser/neighbors.hpp"
#include "gser/stacks.hpp"

namespace gser {

// Joint-reconstruction solver parameters. lambda1 (phase smoothness) and xi
// (Huber threshold) support automatic selection by the driver: lambda1 < 0
// balances the data and phase terms at initialization, xi <= 0 picks the
// xi_quantile of the initial joint-edge magnitudes.
struct SerParams {
  double lambda1 = -1.0;
  double lambda2 = 0.3;
  double xi = -1.0;
  double xi_quantile = 0.75;
  int outer_iters = 20;
  int irls_iters = 10;
  int ncg_iters = 10;
  int cg_iters = 50;
  double cg_tol = 1e-8;
  double objective_tol = 1e-7;
  int phase_halfwidth = 0;  // 0: derive from the partial-Fourier fraction

  void validate(bool resolved) const {
    if (lambda2 < 0) throw InputError("SerParams: lambda2 must be >= 0");
    if (outer_iters < 1 || irls_iters < 1 || ncg_iters < 1 || cg_iters < 1)
      throw InputError("SerParams: iteration counts must be >= 1");
    if (cg_tol <= 0 || objective_tol < 0) throw InputError("SerParams: bad tolerances");
    if (xi_quantile <= 0 || xi_quantile >= 1) throw InputError("SerParams: quantile in (0,1)");
    if (resolved) {
      if (lambda1 < 0) throw InputError("SerParams: lambda1 must be >= 0");
      if (xi <= 0) throw InputError("SerParams: xi must be > 0");
    }
  }
};

// Huber penalty and its IRLS majorizer weight.
inline double huber(double t, double xi) { return t <= xi ? t * t : 2.0 * xi * t - xi * xi; }
inline double huber_weight(double t, double xi) { return t <= xi ? 1.0 : xi / t; }

// Euclidean norm across the diffusion dimension of the difference between
// two voxels' signals.
inline double joint_edge_magnitude(const ImageStack& f, std::int64_t v, std::int64_t w) {
  const std::int64_t nvox = f.dims.image_voxels();
  double acc = 0.0;
  for (int q = 0; q < f.dims.nd; ++q) {
    const double diff = f.data[q * nvox + v] - f.data[q * nvox + w];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

// Joint-edge magnitudes for every unordered volumetric neighbor pair.
inline Eigen::VectorXd all_joint_edges(const ImageStack& f, const NeighborSystem& nbs) {
  Eigen::VectorXd t(std::int64_t(nbs.volumetric_edges.size()));
  parallel_for(0, std::int64_t(nbs.volumetric_edges.size()), [&](std::int64_t e) {
    const auto [v, w] = nbs.volumetric_edges[std::size_t(e)];
    t[e] = joint_edge_magnitude(f, v, w);
  });
  return t;
}

// Huber joint-edge penalty J(f): each unordered pair appears twice in the
// double sum over voxels and their volumetric neighbor sets.
inline double joint_edge_penalty(const ImageStack& f, const NeighborSystem& nbs, double xi) {
  const Eigen::VectorXd t = all_joint_edges(f, nbs);
  double j = 0.0;
  for (std::int64_t e = 0; e < t.size(); ++e) j += huber(t[e], xi);
  return 2.0 * j;
}

// Squared norm of the in-plane finite differences of exp(i p), summed over
// every (slab, encoding, dwi) plane.
inline double phase_smoothness_penalty(const PhaseField& p, const NeighborSystem& nbs) {
  const GridDims& d = p.dims;
  const std::int64_t planes = std::int64_t(d.ns) * d.k_enc * d.nd;
  Eigen::VectorXd partial = Eigen::VectorXd::Zero(planes);
  parallel_for(0, planes, [&](std::int64_t i) {
    const std::int64_t base = i * d.plane();
    Eigen::VectorXcd x(d.plane());
    for (std::int64_t n = 0; n < d.plane(); ++n) {
      const double ph = p.data[base + n];
      x[n] = cplx(std::cos(ph), std::sin(ph));
    }
    partial[i] = inplane_diff_sq(x, nbs);
  });
  return partial.sum();  // fixed-order reduction
}

struct SerObjective {
  double data = 0.0;
  double r_phase = 0.0;
  double j_edge = 0.0;
  double total = 0.0;
};

// Full joint objective: ||b - G(e^{ip} . A f)||^2 + lambda1 R(p) + lambda2 J(f).
inline SerObjective objective_value(const ImageStack& f, const PhaseField& p, const SlabStack& b,
                                    const EncodingModel& enc, const PartialFourierModel& pf,
                                    const SerParams& params, const NeighborSystem& nbs) {
  params.validate(true);
  check_same_dims(f.dims, b.dims, "objective_value");
  check_same_dims(p.dims, b.dims, "objective_value");
  SerObjective obj;
  const Eigen::VectorXcd model = forward_model_raw(f.data, p.data, f.dims, enc, pf);
  obj.data = (b.data - model).squaredNorm();
  obj.r_phase = phase_smoothness_penalty(p, nbs);
  obj.j_edge = joint_edge_penalty(f, nbs, params.xi);
  obj.total = obj.data + params.lambda1 * obj.r_phase + params.lambda2 * obj.j_edge;
  return obj;
}

// Per-DWI median-magnitude normalization: every volume is rescaled so its
// median |voxel| matches the median of the per-volume medians. Returns the
// multiplicative scales actually applied; dividing by them restores the
// original data exactly.
inline std::pair<SlabStack, Eigen::VectorXd> normalize_dwi_medians(const SlabStack& b) {
  b.check("normalize_dwi_medians");
  const GridDims& d = b.dims;
  const std::int64_t per_dwi = std::int64_t(d.ns) * d.k_enc * d.plane();
  Eigen::VectorXd medians(d.nd);
  std::vector<double> mags(static_cast<std::size_t>(per_dwi));
  for (int q = 0; q < d.nd; ++q) {
    std::int64_t i = 0;
    for (int s = 0; s < d.ns; ++s)
      for (int k = 0; k < d.k_enc; ++k) {
        const std::int64_t base = d.slab_at(s, k, q, 0);
        for (std::int64_t n = 0; n < d.plane(); ++n) mags[std::size_t(i++)] = std::abs(b.data[base + n]);
      }
    auto mid = mags.begin() + mags.size() / 2;
    std::nth_element(mags.begin(), mid, mags.end());
    double med = *mid;
    if (mags.size() % 2 == 0) {
      auto lo = std::max_element(mags.begin(), mid);
      med = 0.5 * (med + *lo);
    }
    if (med <= 0.0) {
      std::ostringstream msg;
      msg << "normalize_dwi_medians: volume " << q << " has zero median magnitude";
      throw InputError(msg.str());
    }
    medians[q] = med;
  }
  std::vector<double> meds(medians.data(), medians.data() + d.nd);
  auto mid = meds.begin() + meds.size() / 2;
  std::nth_element(meds.begin(), mid, meds.end());
  double ref = *mid;
  if (meds.size() % 2 == 0) ref = 0.5 * (ref + *std::max_element(meds.begin(), mid));

  SlabStack out(d);
  Eigen::VectorXd scales(d.nd);
  for (int q = 0; q < d.nd; ++q) scales[q] = ref / medians[q];
  parallel_for(0, std::int64_t(d.ns) * d.k_enc * d.nd, [&](std::int64_t i) {
    const int q = int(i % d.nd);
    const std::int64_t base = i * d.plane();
    for (std::int64_t n = 0; n < d.plane(); ++n) out.data[base + n] = b.data[base + n] * scales[q];
  });
  return {std::move(out), std::move(scales)};
}

// Inverse of normalize_dwi_medians on a reconstructed image stack.
inline ImageStack unnormalize_dwi(const ImageStack& f, const Eigen::VectorXd& scales) {
  if (scales.size() != f.dims.nd) throw ShapeError("unnormalize_dwi: scale count mismatch");
  ImageStack out(f.dims);
  for (int q = 0; q < f.dims.nd; ++q) out.volume(q) = f.volume(q) / scales[q];
  return out;
}

struct IrlsReport {
  std::vector<double> cost_history;  // true Huber-regularized cost per IRLS pass
  std::vector<std::string> warnings;
  Eigen::VectorXd final_edge_weights;
  int total_cg_iters = 0;
};

// Weighted least-squares magnitude solve: minimizes
//   ||b - G(e^{ip} . A f)||^2 + lambda2 * 2 * sum_e w_e t_e(f)^2
// over real f by preconditioned conjugate gradients on the normal equations,
// starting from f_init (which guarantees the surrogate cost never rises).
inline ImageStack solve_weighted_magnitude(const SlabStack& b, const PhaseField& p,
                                           const EncodingModel& enc, const PartialFourierModel& pf,
                                           double lambda2, const Eigen::VectorXd& edge_weights,
                                           const NeighborSystem& nbs, const ImageStack& f_init,
                                           int cg_iters, double cg_tol, IrlsReport* report) {
  const GridDims& d = b.dims;
  const std::int64_t nvox = d.image_voxels();
  const std::int64_t nedge = std::int64_t(nbs.volumetric_edges.size());
  if (edge_weights.size() != nedge) throw ShapeError("solve_weighted_magnitude: weight count");

  // per-voxel weighted degree (sum of incident edge weights)
  Eigen::VectorXd wdeg = Eigen::VectorXd::Zero(nvox);
  for (std::int64_t e = 0; e < nedge; ++e) {
    const auto [v, w] = nbs.volumetric_edges[std::size_t(e)];
    wdeg[v] += edge_weights[e];
    wdeg[w] += edge_weights[e];
  }

  // Q f: gradient/2 of the weighted quadratic 2*sum_e w_e ||f_v - f_w||^2
  auto apply_q = [&](const Eigen::VectorXd& f, Eigen::VectorXd& out) {
    parallel_for(0, std::int64_t(d.nd), [&](std::int64_t q) {
      const std::int64_t base = q * nvox;
      for (std::int64_t v = 0; v < nvox; ++v) out[base + v] = 2.0 * wdeg[v] * f[base + v];
    });
    for (std::int64_t e = 0; e < nedge; ++e) {
      const auto [v, w] = nbs.volumetric_edges[std::size_t(e)];
      const double we = 2.0 * edge_weights[e];
      for (int q = 0; q < d.nd; ++q) {
        const std::int64_t base = std::int64_t(q) * nvox;
        out[base + v] -= we * f[base + w];
        out[base + w] -= we * f[base + v];
      }
    }
  };

  // normal operator H f = Re(M^H M f) + lambda2 Q f
  Eigen::VectorXd qbuf(d.image_size());
  auto apply_h = [&](const Eigen::VectorXd& f) {
    const Eigen::VectorXcd mf = forward_model_raw(f, p.data, d, enc, pf);
    Eigen::VectorXd out = forward_model_adjoint_raw(mf, p.data, d, enc, pf).real();
    if (lambda2 > 0) {
      apply_q(f, qbuf);
      out += lambda2 * qbuf;
    }
    return out;
  };

  const Eigen::VectorXd rhs = forward_model_adjoint_raw(b.data, p.data, d, enc, pf).real();

  // block preconditioner: per (slab, dwi, in-plane voxel) column inverse of
  // Re(A^H A) + lambda2 * (2 * max weighted degree) I, with weights <= 1
  const int K = d.k_enc;
  const Eigen::MatrixXd ata = (enc.profile_matrix.adjoint() * enc.profile_matrix).real();
  const Eigen::MatrixXd pinv =
      (ata + (lambda2 * 12.0 + 1e-12) * Eigen::MatrixXd::Identity(K, K)).inverse();
  auto apply_precond = [&](const Eigen::VectorXd& r) {
    Eigen::VectorXd z(r.size());
    parallel_for(0, std::int64_t(d.ns) * d.nd, [&](std::int64_t sq) {
      const int s = int(sq / d.nd), q = int(sq % d.nd);
      Eigen::VectorXd col(K);
      for (std::int64_t n = 0; n < d.plane(); ++n) {
        for (int j = 0; j < K; ++j) col[j] = r[d.image_at(q, d.vox_at(s * K + j, 0, 0) + n)];
        const Eigen::VectorXd sol = pinv * col;
        for (int j = 0; j < K; ++j) z[d.image_at(q, d.vox_at(s * K + j, 0, 0) + n)] = sol[j];
      }
    });
    return z;
  };

  // PCG from f_init
  Eigen::VectorXd x = f_init.data;
  Eigen::VectorXd r = rhs - apply_h(x);
  const double rhs_norm = rhs.norm();
  Eigen::VectorXd z = apply_precond(r);
  Eigen::VectorXd pdir = z;
  double rz = r.dot(z);
  int used = 0;
  for (int it = 0; it < cg_iters; ++it) {
    if (r.norm() <= cg_tol * (rhs_norm > 0 ? rhs_norm : 1.0)) break;
    const Eigen::VectorXd hp = apply_h(pdir);
    const double denom = pdir.dot(hp);
    if (denom <= 0) break;  // numerical loss of positive definiteness
    const double alpha = rz / denom;
    x += alpha * pdir;
    r -= alpha * hp;
    ++used;
    z = apply_precond(r);
    const double rz_new = r.dot(z);
    pdir = z + (rz_new / rz) * pdir;
    rz = rz_new;
  }
  if (report) {
    report->total_cg_iters += used;
    if (r.norm() > cg_tol * (rhs_norm > 0 ? rhs_norm : 1.0)) {
      std::ostringstream msg;
      msg << "magnitude CG hit the iteration limit (" << used
          << " iters, relative residual " << r.norm() / (rhs_norm > 0 ? rhs_norm : 1.0) << ")";
      report->warnings.push_back(msg.str());
    }
  }
  ImageStack out(d);
  out.data = std::move(x);
  return out;
}

// IRLS magnitude step: alternates Huber weight updates with weighted
// least-squares solves. The surrogate is tangent at the current iterate, so
// the true cost ||b - Mf||^2 + lambda2 J(f) never increases.
inline ImageStack magnitude_step_irls(const SlabStack& b, const PhaseField& p_fixed,
                                      const EncodingModel& enc, const PartialFourierModel& pf,
                                      const SerParams& params, const ImageStack& f_init,
                                      const NeighborSystem& nbs, IrlsReport* report = nullptr) {
  params.validate(true);
  check_same_dims(b.dims, f_init.dims, "magnitude_step_irls");
  f_init.check("magnitude_step_irls");

  auto true_cost = [&](const ImageStack& f) {
    const Eigen::VectorXcd mf = forward_model_raw(f.data, p_fixed.data, f.dims, enc, pf);
    return (b.data - mf).squaredNorm() + params.lambda2 * joint_edge_penalty(f, nbs, params.xi);
  };

  ImageStack f = f_init;
  if (report) report->cost_history.push_back(true_cost(f));
  Eigen::VectorXd weights;
  for (int it = 0; it < params.irls_iters; ++it) {
    const Eigen::VectorXd t = all_joint_edges(f, nbs);
    weights.resize(t.size());
    for (std::int64_t e = 0; e < t.size(); ++e) weights[e] = huber_weight(t[e], params.xi);
    f = solve_weighted_magnitude(b, p_fixed, enc, pf, params.lambda2, weights, nbs, f,
                                 params.cg_iters, params.cg_tol, report);
    if (report) report->cost_history.push_back(true_cost(f));
  }
  if (report && weights.size() > 0) report->final_edge_weights = weights;
  return f;
}

// Analytic gradient of ||b - G(e^{ip} . A f)||^2 + lambda1 ||D e^{ip}||^2
// with respect to the phase samples.
inline Eigen::VectorXd phase_gradient(const PhaseField& p, const ImageStack& f_fixed,
                                      const SlabStack& b, const EncodingModel& enc,
                                      const PartialFourierModel& pf, double lambda1,
                                      const NeighborSystem& nbs) {
  const GridDims& d = b.dims;
  const Eigen::VectorXcd af = apply_rf_encoding_raw(f_fixed.data, d, enc);
  Eigen::VectorXcd v(d.slab_size());
  parallel_for(0, d.slab_size(), [&](std::int64_t i) {
    v[i] = af[i] * cplx(std::cos(p.data[i]), std::sin(p.data[i]));
  });
  Eigen::VectorXcd gv = v;
  apply_partial_fourier_stack(gv, d, pf);  // G^H G v = G v (projection)
  Eigen::VectorXcd gb = b.data;
  apply_partial_fourier_stack(gb, d, pf);  // G^H b
  const Eigen::VectorXcd resid = gv - gb;

  Eigen::VectorXd grad(d.slab_size());
  const std::int64_t planes = std::int64_t(d.ns) * d.k_enc * d.nd;
  parallel_for(0, planes, [&](std::int64_t blk) {
    const std::int64_t base = blk * d.plane();
    Eigen::VectorXcd x(d.plane()), lap(d.plane());
    for (std::int64_t n = 0; n < d.plane(); ++n) {
      const double ph = p.data[base + n];
      x[n] = cplx(std::cos(ph), std::sin(ph));
    }
    if (lambda1 > 0) {
      inplane_laplacian(x, lap, nbs);
    } else {
      lap.setZero();
    }
    for (std::int64_t n = 0; n < d.plane(); ++n) {
      const cplx e_minus = std::conj(x[n]);
      const cplx term = e_minus * std::conj(af[base + n]) * resid[base + n] +
                        lambda1 * e_minus * lap[n];
      grad[base + n] = 2.0 * term.imag();
    }
  });
  return grad;
}

struct NcgReport {
  std::vector<double> objective_history;
  int gradient_fallbacks = 0;
  int restarts = 0;
  std::vector<std::string> warnings;
};

// Nonlinear conjugate gradient phase update with analytic gradients,
// Polak-Ribiere beta clipped by Fletcher-Reeves, and a backtracking Armijo
// line search. Falls back to a diminishing gradient step when the search
// direction fails; the phase objective never increases.
inline PhaseField phase_step_ncg(const SlabStack& b, const ImageStack& f_fixed,
                                 const PhaseField& p_init, const EncodingModel& enc,
                                 const PartialFourierModel& pf, const SerParams& params,
                                 const NeighborSystem& nbs, NcgReport* report = nullptr) {
  params.validate(true);
  const GridDims& d = b.dims;
  const Eigen::VectorXcd af = apply_rf_encoding_raw(f_fixed.data, d, enc);
  Eigen::VectorXcd gb = b.data;
  apply_partial_fourier_stack(gb, d, pf);

  auto objective = [&](const Eigen::VectorXd& pvec) {
    Eigen::VectorXcd v(d.slab_size());
    parallel_for(0, d.slab_size(), [&](std::int64_t i) {
      v[i] = af[i] * cplx(std::cos(pvec[i]), std::sin(pvec[i]));
    });
    apply_partial_fourier_stack(v, d, pf);
    double data = (b.data - v).squaredNorm();
    PhaseField tmp(d);
    tmp.data = pvec;
    return data + params.lambda1 * phase_smoothness_penalty(tmp, nbs);
  };

  PhaseField p = p_init;
  double obj = objective(p.data);
  if (report) report->objective_history.push_back(obj);

  Eigen::VectorXd g = phase_gradient(p, f_fixed, b, enc, pf, params.lambda1, nbs);
  if (g.squaredNorm() == 0.0) return p;  // stationary point
  Eigen::VectorXd dir = -g;

  const double armijo_c = 1e-4;
  for (int it = 0; it < params.ncg_iters; ++it) {
    double slope = g.dot(dir);
    if (slope >= 0) {  // not a descent direction: restart
      dir = -g;
      slope = g.dot(dir);
      if (report) ++report->restarts;
    }
    double alpha = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 30; ++bt) {
      const double trial = objective(p.data + alpha * dir);
      if (trial <= obj + armijo_c * alpha * slope) {
        p.data += alpha * dir;
        obj = trial;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      // gradient fallback with diminishing steps
      if (report) ++report->gradient_fallbacks;
      alpha = 1.0;
      const double gnorm2 = g.squaredNorm();
      for (int bt = 0; bt < 30; ++bt) {
        const double trial = objective(p.data - alpha * g);
        if (trial <= obj - armijo_c * alpha * gnorm2) {
          p.data -= alpha * g;
          obj = trial;
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        if (report)
          report->warnings.push_back("phase line search stalled; keeping current phase");
        break;
      }
      dir = -g;  // restart memory after a fallback
    }
    if (report) report->objective_history.push_back(obj);

    const Eigen::VectorXd g_new = phase_gradient(p, f_fixed, b, enc, pf, params.lambda1, nbs);
    const double g_new2 = g_new.squaredNorm();
    if (g_new2 == 0.0) break;
    const double g2 = g.squaredNorm();
    const double beta_pr = g_new.dot(g_new - g) / g2;
    const double beta_fr = g_new2 / g2;
    const double beta = std::max(0.0, std::min(beta_pr, beta_fr));
    if (beta == 0.0 && report) ++report->restarts;
    dir = -g_new + beta * dir;
    g = g_new;
  }
  return p;
}

struct SerResult {
  ImageStack f;             // un-normalized reconstruction
  PhaseField p;
  std::vector<SerObjective> history;  // entry 0 is the initialization
  Eigen::VectorXd dwi_scales;
  Eigen::VectorXd irls_weights;       // final per-edge Huber weights
  SerParams resolved;                 // params with lambda1/xi filled in
  std::vector<std::string> warnings;
  std::vector<std::vector<double>> irls_cost_histories;  // one per outer iteration
};

// Quantile of a vector (linear interpolation between order statistics).
inline double quantile(Eigen::VectorXd v, double q) {
  if (v.size() == 0) throw InputError("quantile: empty input");
  std::sort(v.data(), v.data() + v.size());
  const double pos = q * double(v.size() - 1);
  const std::int64_t lo = std::int64_t(pos);
  const std::int64_t hi = std::min<std::int64_t>(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

// Full joint reconstruction: median normalization, low-resolution phase
// initialization, Tikhonov magnitude initialization, then alternation of the
// IRLS magnitude step and the NCG phase step. The joint objective is
// non-increasing across outer iterations; an increase beyond the slack
// raises SolverError.
inline SerResult ser_reconstruct(const SlabStack& b_raw, const EncodingModel& enc,
                                 const PartialFourierModel& pf, SerParams params) {
  params.validate(false);
  b_raw.check("ser_reconstruct");
  const GridDims& d = b_raw.dims;
  const NeighborSystem nbs(d);

  auto [b, scales] = normalize_dwi_medians(b_raw);

  int halfwidth = params.phase_halfwidth > 0
                      ? params.phase_halfwidth
                      : symmetric_band_halfwidth(d.n2, pf.is_identity() ? 1.0 : pf.pf_fraction);
  halfwidth = std::min(halfwidth, std::min(d.n1, d.n2) / 2);
  SerResult res;
  res.p = estimate_phase_lowres(b, halfwidth);
  res.f = tikhonov_recon(phase_correct(b, res.p), enc, TikhonovParams::relative_default(enc));

  // resolve the automatic parameters against the initialization
  if (params.xi <= 0) {
    const Eigen::VectorXd t = all_joint_edges(res.f, nbs);
    double xi = quantile(t, params.xi_quantile);
    if (xi <= 0) xi = 1e-6 * (1.0 + res.f.data.cwiseAbs().maxCoeff());
    params.xi = xi;
  }
  if (params.lambda1 < 0) {
    const Eigen::VectorXcd model = forward_model_raw(res.f.data, res.p.data, d, enc, pf);
    const double data_term = (b.data - model).squaredNorm();
    const double r_term = phase_smoothness_penalty(res.p, nbs);
    params.lambda1 = data_term / std::max(r_term, 1e-8 * double(d.slab_size()));
  }
  params.validate(true);
  res.resolved = params;

  res.history.push_back(objective_value(res.f, res.p, b, enc, pf, params, nbs));
  for (int outer = 0; outer < params.outer_iters; ++outer) {
    IrlsReport irls;
    res.f = magnitude_step_irls(b, res.p, enc, pf, params, res.f, nbs, &irls);
    res.irls_cost_histories.push_back(irls.cost_history);
    for (const auto& w : irls.warnings) res.warnings.push_back(w);
    if (irls.final_edge_weights.size() > 0) res.irls_weights = irls.final_edge_weights;

    NcgReport ncg;
    res.p = phase_step_ncg(b, res.f, res.p, enc, pf, params, nbs, &ncg);
    for (const auto& w : ncg.warnings) res.warnings.push_back(w);

    const SerObjective obj = objective_value(res.f, res.p, b, enc, pf, params, nbs);
    const double prev = res.history.back().total;
    if (obj.total > prev * (1.0 + 1e-10) + 1e-12) {
      std::ostringstream msg;
      msg << "ser_reconstruct: objective increased at outer iteration " << outer << " ("
          << prev << " -> " << obj.total << ")";
      throw SolverError(msg.str());
    }
    res.history.push_back(obj);
    if (prev > 0 && (prev - obj.total) / prev < params.objective_tol) break;
  }

  res.f = unnormalize_dwi(res.f, scales);
  res.dwi_scales = scales;
  return res;
}

}  // namespace gser
