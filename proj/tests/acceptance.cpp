// Release gate: one executable, one [PASS]/[FAIL] line per shipped guarantee.
//
// Each check asserts a user-visible contract of the library — operator
// correctness against dense first-principles oracles, monotone solver
// behavior, the calibrated noise/resolution trade-off, statistical validity
// of the rank selection, error-table orderings across seeds, and bit-level
// reproducibility of the pipeline. The process exits nonzero if any check
// fails, so CI can gate releases on this binary alone.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <vector>

#include "gser/characterize.hpp"
#include "gser/config.hpp"
#include "gser/container.hpp"
#include "gser/conventional.hpp"
#include "gser/dti.hpp"
#include "gser/forward_model.hpp"
#include "gser/lowrank.hpp"
#include "gser/phantom.hpp"
#include "gser/pipeline.hpp"
#include "gser/ser.hpp"

using namespace gser;

namespace {

// ---------------------------------------------------------------------------
// tiny check framework

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
  if (!cond) throw Failure(what);
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

// ---------------------------------------------------------------------------
// first-principles helpers (independent of the library implementations)

Eigen::MatrixXcd centered_dft_matrix(int n) {
  Eigen::MatrixXcd f(n, n);
  const int c = n / 2;
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) {
      const double ang = -2.0 * M_PI * double(j - c) * double(k - c) / n;
      f(j, k) = cplx(std::cos(ang), std::sin(ang)) / std::sqrt(double(n));
    }
  return f;
}

Eigen::MatrixXcd centered_dft_2d(int n1, int n2) {
  const Eigen::MatrixXcd f1 = centered_dft_matrix(n1), f2 = centered_dft_matrix(n2);
  Eigen::MatrixXcd out(std::int64_t(n1) * n2, std::int64_t(n1) * n2);
  for (int j1 = 0; j1 < n1; ++j1)
    for (int j2 = 0; j2 < n2; ++j2)
      for (int k1 = 0; k1 < n1; ++k1)
        for (int k2 = 0; k2 < n2; ++k2)
          out(std::int64_t(j1) * n2 + j2, std::int64_t(k1) * n2 + k2) = f1(j1, k1) * f2(j2, k2);
  return out;
}

Eigen::VectorXcd random_cvec(std::int64_t n, RngStream& rng) {
  Eigen::VectorXcd v(n);
  for (std::int64_t i = 0; i < n; ++i) v[i] = cplx(rng.normal(), rng.normal());
  return v;
}

Eigen::VectorXd random_rvec(std::int64_t n, RngStream& rng) {
  Eigen::VectorXd v(n);
  for (std::int64_t i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

double rel_diff(const Eigen::VectorXcd& a, const Eigen::VectorXcd& b) {
  const double den = std::max({a.norm(), b.norm(), 1e-300});
  return (a - b).norm() / den;
}

double rel_diff_scalar(cplx a, cplx b) {
  const double den = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / den;
}

std::vector<std::uint8_t> support_mask_of(const ImageStack& truth) {
  std::vector<std::uint8_t> mask(std::size_t(truth.dims.image_voxels()), 0);
  for (std::int64_t vox = 0; vox < truth.dims.image_voxels(); ++vox)
    if (truth.data[truth.dims.image_at(0, vox)] > 0.0) mask[std::size_t(vox)] = 1;
  return mask;
}

// shared desk-scale noisy dataset (32x32, 4 slabs x 5 sub-slices, 13 volumes)
struct DeskData {
  PhantomSpec spec;
  PartialFourierModel pf;
  EncodingModel enc;
  SimulatedDataset data;
};

const DeskData& desk_dataset() {
  static const DeskData d = [] {
    GridDims g;
    g.n1 = 32;
    g.n2 = 32;
    g.ns = 4;
    g.k_enc = 5;
    g.nd = 13;
    PhantomSpec spec = PhantomSpec::standard(g, 1000.0, 12);
    spec.noise_sigma = 0.05;
    spec.phase.amplitude = 0.6;
    spec.phase.corr_length = 4.0;
    spec.seed = 2026;
    spec.repetitions = 1;
    DeskData dd{spec, PartialFourierModel(g.n1, g.n2, 0.75), EncodingModel::default_gslider(5),
                SimulatedDataset{}};
    dd.data = simulate_dataset(dd.spec, dd.enc, dd.pf);
    return dd;
  }();
  return d;
}

// full joint reconstruction on the shared dataset, run exactly once
const SerResult& desk_ser_result() {
  static const SerResult res = [] {
    SerParams params;          // production defaults, 20 outer alternations
    params.objective_tol = 0;  // never stop early: monotonicity over the full run
    return ser_reconstruct(desk_dataset().data.repetitions[0], desk_dataset().enc,
                           desk_dataset().pf, params);
  }();
  return res;
}

// ---------------------------------------------------------------------------
// criterion 1: encoding, sampling, and difference operators

void check_operators() {
  GridDims d;
  d.n1 = 12;
  d.n2 = 12;
  d.ns = 2;
  d.k_enc = 5;
  d.nd = 2;
  const EncodingModel enc = EncodingModel::default_gslider(5);
  const PartialFourierModel pf(d.n1, d.n2, 0.75);
  RngStream rng(41, {0x6f707331u});
  const double tol = 1e-12;

  // slab-encoding operator: adjoint identity and linearity
  for (int rep = 0; rep < 3; ++rep) {
    const Eigen::VectorXcd f = random_cvec(d.image_size(), rng);
    const Eigen::VectorXcd g = random_cvec(d.slab_size(), rng);
    const cplx lhs = apply_rf_encoding_raw(f, d, enc).dot(g);
    const cplx rhs = f.dot(apply_rf_adjoint(g, d, enc));
    require(rel_diff_scalar(lhs, rhs) < tol, "encoding adjoint identity off: " +
                                                 fmt(rel_diff_scalar(lhs, rhs)));

    const Eigen::VectorXcd x = random_cvec(d.image_size(), rng);
    const cplx a(0.7, -1.3), b(-0.4, 0.9);
    const Eigen::VectorXcd lin = apply_rf_encoding_raw((a * f + b * x).eval(), d, enc);
    const Eigen::VectorXcd sum =
        a * apply_rf_encoding_raw(f, d, enc) + b * apply_rf_encoding_raw(x, d, enc);
    require(rel_diff(lin, sum) < tol, "encoding linearity off: " + fmt(rel_diff(lin, sum)));
  }

  // sampling projection: self-adjoint, idempotent, linear
  auto apply_g = [&](const Eigen::VectorXcd& v) {
    Eigen::VectorXcd out = v;
    apply_partial_fourier_stack(out, d, pf);
    return out;
  };
  for (int rep = 0; rep < 3; ++rep) {
    const Eigen::VectorXcd x = random_cvec(d.slab_size(), rng);
    const Eigen::VectorXcd y = random_cvec(d.slab_size(), rng);
    require(rel_diff_scalar(apply_g(x).dot(y), x.dot(apply_g(y))) < tol,
            "sampling operator is not self-adjoint");
    const Eigen::VectorXcd gx = apply_g(x);
    require(rel_diff(apply_g(gx), gx) < tol, "sampling operator is not idempotent");
    const cplx a(1.2, 0.3), b(-0.8, 0.5);
    require(rel_diff(apply_g((a * x + b * y).eval()), a * gx + b * apply_g(y)) < tol,
            "sampling operator is not linear");
  }

  // in-plane difference operator: <Dx, Dy> == <x, D^H D y>, penalty agreement,
  // and linearity of the normal operator
  const NeighborSystem nbs(d);
  const std::int64_t plane = d.plane();
  auto edge_products = [&](const Eigen::VectorXcd& x, const Eigen::VectorXcd& y) {
    cplx total = 0.0;
    for (std::int64_t n = 0; n < plane; ++n)
      for (std::int32_t m : nbs.inplane_4[std::size_t(n)])
        total += std::conj(x[n] - x[m]) * (y[n] - y[m]);
    return total;
  };
  for (int rep = 0; rep < 3; ++rep) {
    const Eigen::VectorXcd x = random_cvec(plane, rng);
    const Eigen::VectorXcd y = random_cvec(plane, rng);
    Eigen::VectorXcd ly(plane);
    inplane_laplacian(y, ly, nbs);
    require(rel_diff_scalar(edge_products(x, y), x.dot(ly)) < tol,
            "difference operator adjoint identity off");
    Eigen::VectorXcd lx(plane), lsum(plane);
    inplane_laplacian(x, lx, nbs);
    const cplx a(0.3, 1.1), b(2.0, -0.2);
    inplane_laplacian((a * x + b * y).eval(), lsum, nbs);
    require(rel_diff(lsum, (a * lx + b * ly).eval()) < tol,
            "difference normal operator is not linear");
  }
  {
    // library phase penalty equals the first-principles ||D exp(ip)||^2
    PhaseField p(d);
    for (std::int64_t i = 0; i < p.data.size(); ++i) p.data[i] = 3.0 * (rng.uniform() - 0.5);
    double direct = 0.0;
    for (int s = 0; s < d.ns; ++s)
      for (int k = 0; k < d.k_enc; ++k)
        for (int q = 0; q < d.nd; ++q) {
          Eigen::VectorXcd e(plane);
          for (std::int64_t n = 0; n < plane; ++n) {
            const double ph = p.data[d.slab_at(s, k, q, n)];
            e[n] = cplx(std::cos(ph), std::sin(ph));
          }
          direct += edge_products(e, e).real();
        }
    const double lib = phase_smoothness_penalty(p, nbs);
    require(std::abs(lib - direct) <= tol * std::max(lib, direct),
            "phase penalty disagrees with first-principles differences");
  }

  // forward model against a dense materialized oracle (DFT matrices + mask +
  // encoding composition), on a 12x12x10 instance
  {
    ImageStack f(d);
    PhaseField p(d);
    RngStream rng2(77, {0x6f72636cu});
    for (std::int64_t i = 0; i < f.data.size(); ++i) f.data[i] = rng2.normal();
    for (std::int64_t i = 0; i < p.data.size(); ++i) p.data[i] = 2.5 * (rng2.uniform() - 0.5);

    const SlabStack lib = forward_model(f, p, enc, pf);

    const Eigen::MatrixXcd f2 = centered_dft_2d(d.n1, d.n2);
    const Eigen::MatrixXd mask2 = pf.full_mask();
    Eigen::VectorXcd mask_flat(plane);
    for (int r = 0; r < d.n1; ++r)
      for (int c = 0; c < d.n2; ++c) mask_flat[d.at(r, c)] = mask2(r, c);
    const Eigen::MatrixXcd g_dense = f2.adjoint() * mask_flat.asDiagonal() * f2;

    Eigen::VectorXcd oracle(d.slab_size());
    const Eigen::MatrixXcd& prof = enc.profile_matrix;
    for (int s = 0; s < d.ns; ++s)
      for (int k = 0; k < d.k_enc; ++k)
        for (int q = 0; q < d.nd; ++q) {
          Eigen::VectorXcd v(plane);
          for (std::int64_t n = 0; n < plane; ++n) {
            cplx acc = 0.0;
            for (int j = 0; j < d.k_enc; ++j)
              acc += prof(k, j) *
                     f.data[d.image_at(q, d.vox_at(s * d.k_enc + j, int(n / d.n2), int(n % d.n2)))];
            const double ph = p.data[d.slab_at(s, k, q, n)];
            v[n] = acc * cplx(std::cos(ph), std::sin(ph));
          }
          oracle.segment(d.slab_at(s, k, q, 0), plane) = g_dense * v;
        }
    const double rel = rel_diff(lib.data, oracle);
    require(rel < 1e-10, "forward model deviates from the dense oracle by " + fmt(rel));

    // adjoint of the full composition
    RngStream rng3(78, {0x6f72636cu});
    const Eigen::VectorXcd y = random_cvec(d.slab_size(), rng3);
    const Eigen::VectorXcd fx = random_cvec(d.image_size(), rng3);
    const cplx lhs = forward_model_raw(fx.real().eval(), p.data, d, enc, pf)
                         .dot(y);  // real magnitudes enter the model
    const cplx rhs = fx.real().cast<cplx>().eval().dot(forward_model_adjoint_raw(y, p.data, d, enc, pf));
    require(rel_diff_scalar(lhs, rhs) < tol, "forward/adjoint pairing off");
  }
}

// ---------------------------------------------------------------------------
// criterion 2: slab inversion equals the dense closed form

void check_tikhonov_closed_form() {
  RngStream rng(11, {0x74696b31u});
  for (int inst = 0; inst < 20; ++inst) {
    GridDims d;
    d.n1 = 4 + inst % 5;
    d.n2 = 4 + (inst * 3) % 5;
    d.ns = 1 + inst % 3;
    d.k_enc = 5;
    d.nd = 1 + inst % 3;

    EncodingModel enc = EncodingModel::default_gslider(5);
    if (inst % 2 == 1) {
      // perturbed real profile, still well-conditioned
      Eigen::MatrixXcd prof = enc.profile_matrix;
      for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c) prof(r, c) += 0.3 * (rng.uniform() - 0.5);
      enc = EncodingModel(prof);
    }
    TikhonovParams tik;
    tik.lambda = 0.01 + 0.49 * rng.uniform();

    RealSlabStack b(d);
    b.data = random_rvec(d.slab_size(), rng);
    const ImageStack lib = tikhonov_recon(b, enc, tik);

    const Eigen::MatrixXcd& prof = enc.profile_matrix;
    const Eigen::MatrixXd h = (prof.adjoint() * prof).real() +
                              tik.lambda * Eigen::MatrixXd::Identity(5, 5);
    const Eigen::MatrixXd ah_re = prof.adjoint().real();
    const Eigen::LLT<Eigen::MatrixXd> llt(h);

    double num = 0.0, den = 0.0;
    for (int s = 0; s < d.ns; ++s)
      for (int q = 0; q < d.nd; ++q)
        for (std::int64_t n = 0; n < d.plane(); ++n) {
          Eigen::VectorXd col(5);
          for (int k = 0; k < 5; ++k) col[k] = b.data[d.slab_at(s, k, q, n)];
          const Eigen::VectorXd x = llt.solve(ah_re * col);
          for (int j = 0; j < 5; ++j) {
            const double lib_v =
                lib.data[d.image_at(q, d.vox_at(s * 5 + j, int(n / d.n2), int(n % d.n2)))];
            num += (lib_v - x[j]) * (lib_v - x[j]);
            den += x[j] * x[j];
          }
        }
    const double rel = std::sqrt(num / std::max(den, 1e-300));
    require(rel < 1e-8,
            "instance " + std::to_string(inst) + " deviates from closed form by " + fmt(rel));
  }
}

// ---------------------------------------------------------------------------
// criterion 3: analytic phase gradient vs central finite differences

void check_phase_gradient() {
  for (int t = 0; t < 10; ++t) {
    GridDims d;
    d.n1 = 8;
    d.n2 = 8;
    d.ns = 1 + t % 2;
    d.k_enc = 5;
    d.nd = 1;
    const EncodingModel enc = EncodingModel::default_gslider(5);
    const PartialFourierModel pf =
        (t % 2 == 0) ? PartialFourierModel(d.n1, d.n2, 0.75) : PartialFourierModel{};
    const NeighborSystem nbs(d);
    RngStream rng(500 + t, {0x67726164u});

    ImageStack f(d);
    for (std::int64_t i = 0; i < f.data.size(); ++i) f.data[i] = rng.normal();
    PhaseField p(d);
    for (std::int64_t i = 0; i < p.data.size(); ++i) p.data[i] = 1.5 * (rng.uniform() - 0.5);
    SlabStack b(d);
    b.data = random_cvec(d.slab_size(), rng);

    SerParams params;
    params.lambda1 = 0.2 + 2.0 * rng.uniform();
    params.lambda2 = 0.0;
    params.xi = 1.0;

    const Eigen::VectorXd grad =
        phase_gradient(p, f, b, enc, pf, params.lambda1, nbs);

    auto objective = [&](const PhaseField& ph) {
      return objective_value(f, ph, b, enc, pf, params, nbs).total;
    };
    const double eps = 1e-5;
    Eigen::VectorXd fd(d.slab_size());
    PhaseField probe = p;
    for (std::int64_t i = 0; i < d.slab_size(); ++i) {
      const double orig = probe.data[i];
      probe.data[i] = orig + eps;
      const double upper = objective(probe);
      probe.data[i] = orig - eps;
      const double lower = objective(probe);
      probe.data[i] = orig;
      fd[i] = (upper - lower) / (2.0 * eps);
    }
    const double rel = (grad - fd).norm() / std::max(fd.norm(), 1e-300);
    require(rel < 1e-6, "triple " + std::to_string(t) + " gradient error " + fmt(rel));
  }
}

// ---------------------------------------------------------------------------
// criterion 4: monotone convergence of the joint reconstruction

void check_monotone_convergence() {
  const SerResult& res = desk_ser_result();
  require(res.history.size() == 21,
          "expected the starting objective plus 20 outer iterations, saw " +
              std::to_string(res.history.size()));
  for (std::size_t i = 1; i < res.history.size(); ++i) {
    const double prev = res.history[i - 1].total;
    const double cur = res.history[i].total;
    require(cur <= prev * (1.0 + 1e-10), "objective rose at outer iteration " +
                                             std::to_string(i) + ": " + fmt(prev) + " -> " +
                                             fmt(cur));
  }
  require(!res.irls_cost_histories.empty(), "no inner cost records");
  for (std::size_t outer = 0; outer < res.irls_cost_histories.size(); ++outer) {
    const auto& hist = res.irls_cost_histories[outer];
    for (std::size_t i = 1; i < hist.size(); ++i)
      require(hist[i] <= hist[i - 1] * (1.0 + 1e-10),
              "inner cost rose at outer " + std::to_string(outer) + ", inner " +
                  std::to_string(i) + ": " + fmt(hist[i - 1]) + " -> " + fmt(hist[i]));
  }
}

// ---------------------------------------------------------------------------
// criterion 5: calibrated noise/resolution trade-off

void check_noise_resolution_tradeoff() {
  const DeskData& dd = desk_dataset();
  const RegionMasks masks = phantom_region_masks(dd.spec, 1, 2);

  CalibrationConfig cal;
  cal.sigma = dd.spec.noise_sigma;
  cal.n_trials = 512;
  cal.seed = 7;
  cal.cg_iters = 400;
  cal.cg_tol = 1e-7;
  SerParams base;  // production defaults per candidate weight

  cal.lambdas = {0.1, 0.3};
  cal.target_reduction = 3.0;
  const Lambda2Sweep s3 = calibrate_lambda2(dd.data.repetitions[0], dd.enc, dd.pf, base,
                                            masks.smooth, masks.edge, cal);
  require(s3.chosen_index >= 0, "no candidate reached ~3x variance reduction");
  const double red3 = s3.smooth_reduction[std::size_t(s3.chosen_index)];
  const double growth3 =
      s3.fvhm_mm3[std::size_t(s3.chosen_index)] / s3.conventional_fvhm_mm3 - 1.0;
  require(std::abs(red3 / 3.0 - 1.0) <= 0.15,
          "smooth-region reduction " + fmt(red3) + " not within 15% of 3x");
  require(growth3 <= 0.15, "response growth " + fmt(100 * growth3) + "% exceeds 15% at ~3x");
  require(s3.edge_reduction[std::size_t(s3.chosen_index)] < red3,
          "edge-adjacent reduction is not smaller than smooth-region reduction at ~3x");

  cal.lambdas = {0.5};
  cal.target_reduction = 5.0;
  const Lambda2Sweep s5 = calibrate_lambda2(dd.data.repetitions[0], dd.enc, dd.pf, base,
                                            masks.smooth, masks.edge, cal);
  require(s5.chosen_index >= 0, "no candidate reached ~5x variance reduction");
  const double red5 = s5.smooth_reduction[std::size_t(s5.chosen_index)];
  const double growth5 =
      s5.fvhm_mm3[std::size_t(s5.chosen_index)] / s5.conventional_fvhm_mm3 - 1.0;
  require(std::abs(red5 / 5.0 - 1.0) <= 0.15,
          "smooth-region reduction " + fmt(red5) + " not within 15% of 5x");
  require(growth5 <= 0.30, "response growth " + fmt(100 * growth5) + "% exceeds 30% at ~5x");
  require(s5.edge_reduction[std::size_t(s5.chosen_index)] < red5,
          "edge-adjacent reduction is not smaller than smooth-region reduction at ~5x");

  std::cout << "         (3x: reduction " << fmt(red3) << ", growth " << fmt(100 * growth3)
            << "%; 5x: reduction " << fmt(red5) << ", growth " << fmt(100 * growth5) << "%)\n";
}

// ---------------------------------------------------------------------------
// criterion 6: conventional response volume under 6/8 sampling

void check_conventional_response_ratio() {
  GridDims d;
  d.n1 = 32;
  d.n2 = 32;
  d.ns = 4;
  d.k_enc = 5;
  d.nd = 1;
  const EncodingModel enc = EncodingModel::default_gslider(5);
  const PartialFourierModel pf(d.n1, d.n2, 0.75);
  const PhaseField zero_phase(d);
  const LinearReconOp op =
      LinearReconOp::conventional(d, enc, pf, TikhonovParams{}, zero_phase);
  const SrfVolume srf =
      compute_srf(op, (d.ns / 2) * d.k_enc + d.k_enc / 2, d.n1 / 2, d.n2 / 2, 0);
  const double ratio = fvhm_oversampled(srf, 8) / d.voxel_volume();
  require(ratio >= 1.32 * 0.85 && ratio <= 1.32 * 1.15,
          "response/nominal volume ratio " + fmt(ratio) + " outside 1.32 +/- 15%");
  std::cout << "         (measured ratio " << fmt(ratio) << ")\n";
}

// ---------------------------------------------------------------------------
// criterion 7: error-table orderings across seeded trials

void check_error_table_orderings() {
  const EncodingModel enc = EncodingModel::default_gslider(5);
  int ok_a = 0, ok_b = 0, ok_c = 0;
  const int n_trials = 5;

  for (int t = 0; t < n_trials; ++t) {
    GridDims g;
    g.n1 = 32;
    g.n2 = 32;
    g.ns = 4;
    g.k_enc = 5;
    g.nd = 13;
    PhantomSpec spec = PhantomSpec::standard(g, 1000.0, 12);
    spec.noise_sigma = 0.05;
    spec.phase.amplitude = 0.6;
    spec.phase.corr_length = 4.0;
    spec.seed = 100 + std::uint64_t(t);
    spec.repetitions = 3;
    const PartialFourierModel pf(g.n1, g.n2, 0.75);
    const SimulatedDataset data = simulate_dataset(spec, enc, pf);

    std::vector<ImageStack> recons;
    for (const SlabStack& rep : data.repetitions)
      recons.push_back(detail::conventional_reconstruct(rep, enc, pf, TikhonovParams{}));
    const ImageStack conv = recons.front();
    const ImageStack gold = average_repetitions(recons);

    SerParams sp;  // defaults; early stop on plateau is fine here
    const SerResult ser = ser_reconstruct(data.repetitions[0], enc, pf, sp);

    const PatchConfig patch{};  // 12.5 mm edge at 1 mm voxels
    const ImageStack mppca = mppca_denoise(conv, patch);
    const ImageStack lpca = lpca_oracle_denoise(conv, gold, patch);
    const ImageStack gpca = gpca_oracle_denoise(conv, gold);

    std::vector<std::pair<std::string, ImageStack>> variants;
    variants.emplace_back("conv", conv);
    variants.emplace_back("ser", ser.f);
    variants.emplace_back("mppca", mppca);
    variants.emplace_back("lpca", lpca);
    variants.emplace_back("gpca", gpca);
    const EvaluationReport rep =
        evaluation_report(variants, gold, spec.scheme, support_mask_of(data.truth), 0.3);

    std::map<std::string, MetricRow> rows;
    for (const MetricRow& r : rep.rows) rows[r.name] = r;

    const bool a = rows["ser"].dwi_nrmse < rows["conv"].dwi_nrmse;
    const bool b = rows["ser"].fa_nrmse < rows["conv"].fa_nrmse &&
                   rows["ser"].fa_nrmse < rows["mppca"].fa_nrmse &&
                   rows["ser"].fa_nrmse < rows["gpca"].fa_nrmse &&
                   rows["ser"].md_nrmse < rows["conv"].md_nrmse &&
                   rows["ser"].md_nrmse < rows["mppca"].md_nrmse &&
                   rows["ser"].md_nrmse < rows["gpca"].md_nrmse;
    const bool c = rows["lpca"].dwi_nrmse <= rows["mppca"].dwi_nrmse;
    ok_a += a;
    ok_b += b;
    ok_c += c;
    std::cout << "         (seed " << spec.seed << ": dwi ser/conv " << fmt(rows["ser"].dwi_nrmse)
              << "/" << fmt(rows["conv"].dwi_nrmse) << ", fa ser/mppca "
              << fmt(rows["ser"].fa_nrmse) << "/" << fmt(rows["mppca"].fa_nrmse) << ", "
              << (a ? "a" : "-") << (b ? "b" : "-") << (c ? "c" : "-") << ")\n";
  }
  require(ok_a >= 4, "joint recon beat the conventional DWI error in only " +
                         std::to_string(ok_a) + "/5 trials");
  require(ok_b >= 4, "joint recon led the tensor-metric errors in only " + std::to_string(ok_b) +
                         "/5 trials");
  require(ok_c >= 4, "local oracle beat the blind denoiser in only " + std::to_string(ok_c) +
                         "/5 trials");
}

// ---------------------------------------------------------------------------
// criterion 8: random-matrix rank selection statistics

void check_rank_selection_statistics() {
  const std::int64_t rows = 500;
  const int cols = 60;
  auto random_matrix = [](std::int64_t r, int c, std::uint64_t seed) {
    RngStream rng(seed, {0x6d617472u});
    Eigen::MatrixXd m(r, c);
    for (std::int64_t i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
  };
  auto cov_eigs = [](const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m.transpose() * m / double(m.rows()));
    return Eigen::VectorXd(eig.eigenvalues().reverse());
  };

  const double sigma = 0.8;
  int rank_ok = 0, sigma_ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::MatrixXd m = sigma * random_matrix(rows, cols, 9000 + std::uint64_t(trial));
    const MpSelection sel = mp_rank(cov_eigs(m), rows, cols);
    if (sel.rank <= 2) ++rank_ok;
    if (std::abs(sel.sigma_hat - sigma) <= 0.05 * sigma) ++sigma_ok;
  }
  require(rank_ok >= 95, "pure-noise rank <= 2 in only " + std::to_string(rank_ok) + "/100");
  require(sigma_ok >= 95,
          "noise level within 5% in only " + std::to_string(sigma_ok) + "/100");

  const double gamma = double(cols) / double(rows);
  const double edge = (1 + std::sqrt(gamma)) * (1 + std::sqrt(gamma));
  const double amp = std::sqrt(50.0 * edge * double(rows));
  int hits = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::MatrixXd m = random_matrix(rows, cols, 9500 + std::uint64_t(trial));
    const Eigen::MatrixXd u_raw = random_matrix(rows, 3, 9700 + std::uint64_t(trial));
    const Eigen::MatrixXd v_raw = random_matrix(cols, 3, 9900 + std::uint64_t(trial));
    const Eigen::MatrixXd u = Eigen::HouseholderQR<Eigen::MatrixXd>(u_raw).householderQ() *
                              Eigen::MatrixXd::Identity(rows, 3);
    const Eigen::MatrixXd v = Eigen::HouseholderQR<Eigen::MatrixXd>(v_raw).householderQ() *
                              Eigen::MatrixXd::Identity(cols, 3);
    m += amp * u * v.transpose();
    if (mp_rank(cov_eigs(m), rows, cols).rank == 3) ++hits;
  }
  require(hits >= 95, "planted rank-3 recovered in only " + std::to_string(hits) + "/100");
}

// ---------------------------------------------------------------------------
// criterion 9: tensor-fit round trip and closed-form metrics

void check_tensor_round_trip() {
  GridDims g;
  g.n1 = 16;
  g.n2 = 16;
  g.ns = 2;
  g.k_enc = 5;
  g.nd = 13;
  PhantomSpec spec = PhantomSpec::standard(g, 1000.0, 12);
  const ImageStack truth = make_phantom(spec);
  const std::vector<std::uint8_t> mask = support_mask_of(truth);
  const TensorField field = fit_dti(truth, spec.scheme, mask);

  const std::vector<int> labels = phantom_labels(spec);
  double max_err = 0.0;
  for (std::int64_t vox = 0; vox < g.image_voxels(); ++vox) {
    if (!mask[std::size_t(vox)]) continue;
    const Eigen::Matrix3d want = spec.regions[std::size_t(labels[std::size_t(vox)])].tensor;
    max_err = std::max(max_err, (field.tensor_at(vox) - want).cwiseAbs().maxCoeff());
  }
  require(max_err < 1e-10,
          "noiseless tensor recovery off by " + fmt(max_err) + " mm^2/s");

  const double t10 = 1e-10;
  require(std::abs(fa(Eigen::Matrix3d::Identity() * 0.7e-3)) < t10, "isotropic FA is not 0");
  require(std::abs(md(Eigen::Matrix3d::Identity() * 0.7e-3) - 0.7e-3) < t10,
          "isotropic MD mismatch");
  Eigen::Matrix3d degenerate = Eigen::Matrix3d::Zero();
  degenerate(0, 0) = 1.3e-3;
  require(std::abs(fa(degenerate) - 1.0) < t10, "single-axis FA is not 1");
  Eigen::Matrix3d prolate = Eigen::Matrix3d::Zero();
  prolate.diagonal() << 2e-3, 1e-3, 1e-3;
  require(std::abs(fa(prolate) - std::sqrt(1.5) / 3.0) < t10,
          "prolate FA deviates from the closed form");
}

// ---------------------------------------------------------------------------
// criterion 10: byte-identical pipeline reruns at 1/2/8 threads

void check_pipeline_determinism() {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "gser_accept_det";
  fs::remove_all(root);

  auto config_for = [&](const std::string& tag, int threads) {
    RunConfig cfg;
    cfg.n1 = 10;
    cfg.n2 = 10;
    cfg.ns = 2;
    cfg.n_dirs = 6;
    cfg.noise_sigma = 0.03;
    cfg.phase_amplitude = 0.4;
    cfg.repetitions = 2;
    cfg.seed = 9;
    cfg.ser.outer_iters = 2;
    cfg.ser.irls_iters = 3;
    cfg.ser.ncg_iters = 3;
    cfg.ser.cg_iters = 30;
    cfg.patch.patch_edge_mm = 4.0;
    cfg.threads = threads;
    cfg.out_dir = (root / tag).string();
    return cfg;
  };
  const std::vector<std::string> stages = pipeline_stage_names();

  std::vector<std::string> dirs;
  for (const auto& [tag, threads] :
       std::vector<std::pair<std::string, int>>{{"t1", 1}, {"t2", 2}, {"t8", 8}, {"t1b", 1}}) {
    const RunConfig cfg = config_for(tag, threads);
    require(run_pipeline(cfg, stages) == 0, "pipeline run failed in " + cfg.out_dir);
    dirs.push_back(cfg.out_dir);
  }
  set_max_threads(0);

  auto read_bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(dirs[0])) {
    const std::string name = entry.path().filename().string();
    const std::string ref = read_bytes(entry.path());
    for (std::size_t i = 1; i < dirs.size(); ++i) {
      require(fs::exists(fs::path(dirs[i]) / name), name + " missing in " + dirs[i]);
      require(read_bytes(fs::path(dirs[i]) / name) == ref,
              name + " differs between " + dirs[0] + " and " + dirs[i]);
    }
    ++compared;
  }
  require(compared >= 19, "expected the full artifact set, saw " + std::to_string(compared));
  fs::remove_all(root);
}

// ---------------------------------------------------------------------------

struct Criterion {
  int id;
  std::string label;
  std::function<void()> fn;
  double budget_s;  // <= 0: no stated budget
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "operator adjoints, linearity, and the dense forward oracle", check_operators, 10},
      {2, "slab inversion matches the dense closed form", check_tikhonov_closed_form, 5},
      {3, "analytic phase gradient matches finite differences", check_phase_gradient, 30},
      {4, "joint objective decreases monotonically on the noisy phantom",
       check_monotone_convergence, 600},
      {5, "calibrated variance reduction vs response growth", check_noise_resolution_tradeoff,
       1200},
      {6, "conventional response volume ratio near 1.32 under 6/8 sampling",
       check_conventional_response_ratio, 0},
      {7, "error-table orderings across five seeded trials", check_error_table_orderings, 1800},
      {8, "random-matrix rank selection statistics", check_rank_selection_statistics, 0},
      {9, "tensor-fit round trip and closed-form metrics", check_tensor_round_trip, 0},
      {10, "byte-identical pipeline reruns at 1, 2, and 8 threads", check_pipeline_determinism,
       0},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    std::string error;
    try {
      c.fn();
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (error.empty() && c.budget_s > 0 && elapsed > c.budget_s) {
      std::ostringstream ss;
      ss << "runtime " << fmt(elapsed) << " s exceeds the " << fmt(c.budget_s) << " s budget";
      error = ss.str();
    }
    if (error.empty()) {
      std::printf("[PASS] %2d. %s (%.1f s)\n", c.id, c.label.c_str(), elapsed);
    } else {
      std::printf("[FAIL] %2d. %s (%.1f s): %s\n", c.id, c.label.c_str(), elapsed,
                  error.c_str());
      ++failures;
    }
    std::fflush(stdout);
  }
  if (failures) std::printf("%d of %zu checks failed\n", failures, criteria.size());
  else std::printf("all %zu checks passed\n", criteria.size());
  return failures == 0 ? 0 : 1;
}
