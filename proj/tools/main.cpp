// gser — synthetic diffusion-MRI toolbox for RF-encoded slab acquisitions.
//
// Subcommands cover the full workflow: simulate a phantom acquisition,
// reconstruct it (independent Tikhonov inversion or joint edge-regularized
// reconstruction), denoise, fit tensors, evaluate error tables, and
// characterize the reconstruction operators via spatial response functions
// and Monte Carlo noise maps. Every artifact is a self-describing container
// under --out, and identical configuration + seed reproduces identical bytes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gser/characterize.hpp"
#include "gser/config.hpp"
#include "gser/pipeline.hpp"

namespace {

using namespace gser;

// Staging area for CLI values; only flags the user actually passed override
// the config file, so file and flags compose the way the help text promises.
struct ConfigCli {
  std::string config_path;
  RunConfig staged;  // bound to CLI11 options
};

void add_config_options(CLI::App* cmd, ConfigCli& st) {
  cmd->add_option("--config", st.config_path, "JSON config file; flags override its values");

  cmd->add_option("--n1", st.staged.n1, "in-plane rows");
  cmd->add_option("--n2", st.staged.n2, "in-plane columns");
  cmd->add_option("--ns", st.staged.ns, "number of slabs");
  cmd->add_option("--k-enc", st.staged.k_enc, "RF encodings (= sub-slices) per slab");
  cmd->add_option("--voxel-size", st.staged.voxel_size, "voxel size in mm (3 values)")
      ->expected(3);

  cmd->add_option("--b-value", st.staged.b_value, "diffusion weighting (s/mm^2)");
  cmd->add_option("--n-dirs", st.staged.n_dirs, "number of weighted directions");

  cmd->add_option("--noise-sigma", st.staged.noise_sigma, "acquisition noise std per channel");
  cmd->add_option("--center-noise-boost", st.staged.center_noise_boost,
                  "extra noise factor in the volume center");
  cmd->add_option("--center-noise-width", st.staged.center_noise_width,
                  "relative width of the boosted center region");
  cmd->add_option("--phase-amplitude", st.staged.phase_amplitude,
                  "amplitude of the smooth shot-to-shot phase (radians)");
  cmd->add_option("--phase-corr-length", st.staged.phase_corr_length,
                  "correlation length of the phase field (voxels)");
  cmd->add_option("--repetitions", st.staged.repetitions, "acquisition repetitions");
  cmd->add_option("--seed", st.staged.seed, "master RNG seed");

  cmd->add_option("--pf-fraction", st.staged.pf_fraction, "partial-Fourier fraction in (0.5, 1]");
  cmd->add_option("--tik-lambda", st.staged.tikhonov.lambda, "Tikhonov weight");

  cmd->add_option("--ser-lambda1", st.staged.ser.lambda1, "phase smoothness weight (<0: auto)");
  cmd->add_option("--ser-lambda2", st.staged.ser.lambda2, "joint edge penalty weight");
  cmd->add_option("--ser-xi", st.staged.ser.xi, "edge transition scale (<0: from quantile)");
  cmd->add_option("--ser-xi-quantile", st.staged.ser.xi_quantile,
                  "quantile defining the transition scale");
  cmd->add_option("--ser-outer-iters", st.staged.ser.outer_iters, "outer alternations");
  cmd->add_option("--ser-irls-iters", st.staged.ser.irls_iters, "magnitude updates per outer");
  cmd->add_option("--ser-ncg-iters", st.staged.ser.ncg_iters, "phase updates per outer");
  cmd->add_option("--ser-cg-iters", st.staged.ser.cg_iters, "CG iterations per magnitude solve");
  cmd->add_option("--ser-cg-tol", st.staged.ser.cg_tol, "CG relative residual tolerance");
  cmd->add_option("--ser-objective-tol", st.staged.ser.objective_tol,
                  "relative objective change for early stop");
  cmd->add_option("--ser-phase-halfwidth", st.staged.ser.phase_halfwidth,
                  "low-frequency band half-width for phase (0: from pf-fraction)");

  cmd->add_option("--patch-edge-mm", st.staged.patch.patch_edge_mm, "denoising patch edge (mm)");
  cmd->add_option("--patch-stride", st.staged.patch.stride, "patch stride (voxels, 0: half edge)");

  cmd->add_option("--fa-threshold", st.staged.fa_threshold, "FA cut for the white-matter mask");
  cmd->add_option("--threads", st.staged.threads, "worker thread cap (0: hardware)");
  cmd->add_option("--out", st.staged.out_dir, "output directory");
}

// Build the effective config: file (or defaults), then any flag given.
RunConfig resolve_config(const CLI::App* cmd, const ConfigCli& st) {
  RunConfig cfg = st.config_path.empty() ? RunConfig{} : RunConfig::load(st.config_path);
  nlohmann::json j = cfg.to_json();

  auto given = [&](const std::string& flag) { return cmd->get_option(flag)->count() > 0; };
  auto set = [&](const char* flag, const char* section, const char* key, auto value) {
    if (given(flag)) (section[0] == '\0' ? j[key] : j[section][key]) = value;
  };

  set("--n1", "grid", "n1", st.staged.n1);
  set("--n2", "grid", "n2", st.staged.n2);
  set("--ns", "grid", "ns", st.staged.ns);
  set("--k-enc", "grid", "k_enc", st.staged.k_enc);
  set("--voxel-size", "grid", "voxel_size", st.staged.voxel_size);
  set("--b-value", "scheme", "b_value", st.staged.b_value);
  set("--n-dirs", "scheme", "n_dirs", st.staged.n_dirs);
  set("--noise-sigma", "phantom", "noise_sigma", st.staged.noise_sigma);
  set("--center-noise-boost", "phantom", "center_noise_boost", st.staged.center_noise_boost);
  set("--center-noise-width", "phantom", "center_noise_width", st.staged.center_noise_width);
  set("--phase-amplitude", "phantom", "phase_amplitude", st.staged.phase_amplitude);
  set("--phase-corr-length", "phantom", "phase_corr_length", st.staged.phase_corr_length);
  set("--repetitions", "phantom", "repetitions", st.staged.repetitions);
  set("--seed", "phantom", "seed", st.staged.seed);
  set("--pf-fraction", "", "pf_fraction", st.staged.pf_fraction);
  set("--tik-lambda", "tikhonov", "lambda", st.staged.tikhonov.lambda);
  set("--ser-lambda1", "ser", "lambda1", st.staged.ser.lambda1);
  set("--ser-lambda2", "ser", "lambda2", st.staged.ser.lambda2);
  set("--ser-xi", "ser", "xi", st.staged.ser.xi);
  set("--ser-xi-quantile", "ser", "xi_quantile", st.staged.ser.xi_quantile);
  set("--ser-outer-iters", "ser", "outer_iters", st.staged.ser.outer_iters);
  set("--ser-irls-iters", "ser", "irls_iters", st.staged.ser.irls_iters);
  set("--ser-ncg-iters", "ser", "ncg_iters", st.staged.ser.ncg_iters);
  set("--ser-cg-iters", "ser", "cg_iters", st.staged.ser.cg_iters);
  set("--ser-cg-tol", "ser", "cg_tol", st.staged.ser.cg_tol);
  set("--ser-objective-tol", "ser", "objective_tol", st.staged.ser.objective_tol);
  set("--ser-phase-halfwidth", "ser", "phase_halfwidth", st.staged.ser.phase_halfwidth);
  set("--patch-edge-mm", "patch", "patch_edge_mm", st.staged.patch.patch_edge_mm);
  set("--patch-stride", "patch", "stride", st.staged.patch.stride);
  set("--fa-threshold", "", "fa_threshold", st.staged.fa_threshold);
  set("--threads", "", "threads", st.staged.threads);
  set("--out", "paths", "out_dir", st.staged.out_dir);

  return RunConfig::from_json(j);
}

int run_stages(const RunConfig& cfg, const std::vector<std::string>& stages) {
  return run_pipeline(cfg, stages, &std::cout);
}

void echo_file(const std::string& path) {
  std::ifstream in(path);
  std::cout << in.rdbuf();
}

// Characterization commands build single-volume reconstruction operators at
// zero phase (the response is phase-covariant, so this is the canonical
// probe) with uniform edge weights for the joint variant.
struct CharacterizeSetup {
  GridDims d1;
  LinearReconOp conv;
  LinearReconOp joint;
};

CharacterizeSetup make_characterize_ops(const RunConfig& cfg, double lambda2, int cg_iters,
                                        double cg_tol) {
  CharacterizeSetup s{cfg.grid(), LinearReconOp{}, LinearReconOp{}};
  s.d1.nd = 1;
  const PhaseField zero_phase(s.d1);
  const NeighborSystem nbs(s.d1);
  const Eigen::VectorXd ones =
      Eigen::VectorXd::Ones(std::int64_t(nbs.volumetric_edges.size()));
  s.conv = LinearReconOp::conventional(s.d1, cfg.encoding(), cfg.partial_fourier(), cfg.tikhonov,
                                       zero_phase);
  s.joint = LinearReconOp::frozen_joint(s.d1, cfg.encoding(), cfg.partial_fourier(), zero_phase,
                                        lambda2, ones, nbs, cg_iters, cg_tol);
  return s;
}

int cmd_srf(const RunConfig& cfg, const std::string& which, int z, int r, int c, int oversample,
            double lambda2, int cg_iters, double cg_tol) {
  const CharacterizeSetup s = make_characterize_ops(cfg, lambda2, cg_iters, cg_tol);
  const GridDims& d = s.d1;
  if (z < 0) z = (d.ns / 2) * d.k_enc + d.k_enc / 2;
  if (r < 0) r = d.n1 / 2;
  if (c < 0) c = d.n2 / 2;

  const LinearReconOp& op = which == "joint" ? s.joint : s.conv;
  const SrfVolume srf = compute_srf(op, z, r, c, 0);
  const SrfProfiles prof = srf_profiles(srf);
  const double vol_plain = fvhm(srf);
  const double vol_fine = fvhm_oversampled(srf, oversample);

  std::filesystem::create_directories(cfg.out_dir);
  const std::string path = cfg.out_dir + "/srf_" + which + ".tsv";
  std::ofstream out(path, std::ios::trunc);
  out.precision(17);
  out << "axis\tindex\tvalue\n";
  for (std::size_t i = 0; i < std::size_t(prof.along_z.size()); ++i)
    out << "z\t" << i << '\t' << prof.along_z[std::int64_t(i)] << '\n';
  for (std::size_t i = 0; i < std::size_t(prof.along_rows.size()); ++i)
    out << "row\t" << i << '\t' << prof.along_rows[std::int64_t(i)] << '\n';
  for (std::size_t i = 0; i < std::size_t(prof.along_cols.size()); ++i)
    out << "col\t" << i << '\t' << prof.along_cols[std::int64_t(i)] << '\n';
  if (!out) throw IoError("srf: cannot write '" + path + "'");

  std::cout << "operator=" << which << " target_z=" << z << " target_row=" << r
            << " target_col=" << c << '\n';
  std::cout << "peak_z=" << prof.peak_z << " peak_row=" << prof.peak_r
            << " peak_col=" << prof.peak_c << " peak_value=" << srf.peak_value << '\n';
  std::cout << "half_maximum_volume_mm3=" << vol_fine << " (voxel-counting " << vol_plain
            << ", nominal " << d.voxel_volume() << ", oversample " << oversample << ")\n";
  std::cout << "profiles=" << path << '\n';
  return 0;
}

int cmd_noisemap(const RunConfig& cfg, double sigma, int trials, double lambda2, int cg_iters,
                 double cg_tol) {
  if (!(sigma > 0)) throw InputError("noisemap: --sigma must be positive");
  const CharacterizeSetup s = make_characterize_ops(cfg, lambda2, cg_iters, cg_tol);

  const ImageStack var_conv = noise_variance_map(s.conv, sigma, trials, cfg.seed);
  const ImageStack var_joint = noise_variance_map(s.joint, sigma, trials, cfg.seed);
  const RatioMap ratio = variance_reduction_map(var_conv, var_joint);

  std::filesystem::create_directories(cfg.out_dir);
  nlohmann::json prov;
  prov["command"] = "noisemap";
  prov["seed"] = cfg.seed;
  prov["params"] = {{"sigma", sigma},       {"trials", trials},     {"lambda2", lambda2},
                    {"cg_iters", cg_iters}, {"cg_tol", cg_tol}};
  write_container(cfg.out_dir + "/var_conv.gsv", var_conv, prov);
  write_container(cfg.out_dir + "/var_joint.gsv", var_joint, prov);
  write_container(cfg.out_dir + "/var_ratio.gsv", ratio.ratio, prov);
  write_pgm(cfg.out_dir + "/var_ratio.pgm", tile_volume(ratio.ratio, 0));

  const double mean_ratio =
      ratio.ratio.data.sum() / double(std::max<std::int64_t>(1, ratio.ratio.data.size()));
  std::cout << "sigma=" << sigma << " trials=" << trials << " lambda2=" << lambda2 << '\n';
  std::cout << "mean_variance_reduction=" << mean_ratio << " flagged_voxels=" << ratio.n_flagged
            << '\n';
  std::cout << "maps=" << cfg.out_dir << "/var_{conv,joint,ratio}.gsv montage=" << cfg.out_dir
            << "/var_ratio.pgm\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "gser: simulate RF-slab-encoded diffusion acquisitions, reconstruct them "
      "(independent or joint), denoise, fit tensors, and characterize the operators"};
  app.require_subcommand(1);

  ConfigCli st;

  // artifact-producing stages share the config surface
  CLI::App* c_sim = app.add_subcommand("simulate", "generate phantom ground truth and raw data");
  CLI::App* c_rg =
      app.add_subcommand("recon-gslider", "slab-by-slab Tikhonov reconstruction + averaged gold");
  CLI::App* c_rs =
      app.add_subcommand("recon-ser", "joint reconstruction with shared edge regularization");
  CLI::App* c_dm = app.add_subcommand("denoise-mppca", "patchwise random-matrix denoising");
  CLI::App* c_dl =
      app.add_subcommand("denoise-lpca", "patchwise oracle-rank denoising (needs gold)");
  CLI::App* c_dg = app.add_subcommand("denoise-gpca", "global oracle-rank denoising (needs gold)");
  CLI::App* c_df = app.add_subcommand("dti-fit", "tensor fits + MD/FA/color-FA maps");
  CLI::App* c_me = app.add_subcommand("metrics", "error table against the averaged gold standard");
  CLI::App* c_pl = app.add_subcommand("pipeline", "run several stages in order");
  CLI::App* c_srf = app.add_subcommand("srf", "spatial response profile + half-maximum volume");
  CLI::App* c_nm = app.add_subcommand("noisemap", "Monte Carlo noise variance and reduction maps");

  std::vector<std::string> stages = pipeline_stage_names();
  c_pl->add_option("--stages", stages, "stages to run, in order")
      ->delimiter(',')
      ->capture_default_str();

  std::string srf_op = "conv";
  int srf_z = -1, srf_r = -1, srf_c = -1, srf_os = 8;
  c_srf->add_option("--operator", srf_op, "conv|joint")->check(CLI::IsMember({"conv", "joint"}));
  c_srf->add_option("--z", srf_z, "target sub-slice (default: volume center)");
  c_srf->add_option("--row", srf_r, "target row (default: center)");
  c_srf->add_option("--col", srf_c, "target column (default: center)");
  c_srf->add_option("--oversample", srf_os, "in-plane interpolation factor for volume counting");

  double nm_sigma = -1.0;
  int nm_trials = 256;
  c_nm->add_option("--sigma", nm_sigma, "noise std per channel (default: phantom.noise_sigma)");
  c_nm->add_option("--trials", nm_trials, "Monte Carlo trials");

  double ch_lambda2 = -1.0;
  int ch_cg_iters = 600;
  double ch_cg_tol = 1e-10;
  for (CLI::App* c : {c_srf, c_nm}) {
    c->add_option("--lambda2", ch_lambda2, "edge weight for the joint operator "
                                           "(default: ser.lambda2)");
    c->add_option("--cg-iters", ch_cg_iters, "CG iteration cap for the joint operator");
    c->add_option("--cg-tol", ch_cg_tol, "CG relative tolerance for the joint operator");
  }

  for (CLI::App* c : {c_sim, c_rg, c_rs, c_dm, c_dl, c_dg, c_df, c_me, c_pl, c_srf, c_nm})
    add_config_options(c, st);

  CLI11_PARSE(app, argc, argv);

  try {
    const CLI::App* active = app.get_subcommands().front();
    const RunConfig cfg = resolve_config(active, st);
    if (cfg.threads > 0) set_max_threads(cfg.threads);

    if (active == c_pl) return run_stages(cfg, stages);
    if (active == c_sim) return run_stages(cfg, {"simulate"});
    if (active == c_rg) return run_stages(cfg, {"recon-gslider"});
    if (active == c_dm) return run_stages(cfg, {"denoise-mppca"});
    if (active == c_dl) return run_stages(cfg, {"denoise-lpca"});
    if (active == c_dg) return run_stages(cfg, {"denoise-gpca"});
    if (active == c_df) return run_stages(cfg, {"dti-fit"});
    if (active == c_rs) {
      const int status = run_stages(cfg, {"recon-ser"});
      if (status == 0) echo_file(cfg.out_dir + "/ser_log.tsv");
      return status;
    }
    if (active == c_me) {
      const int status = run_stages(cfg, {"metrics"});
      if (status == 0) echo_file(cfg.out_dir + "/metrics.txt");
      return status;
    }
    if (active == c_srf)
      return cmd_srf(cfg, srf_op, srf_z, srf_r, srf_c, srf_os,
                     ch_lambda2 < 0 ? cfg.ser.lambda2 : ch_lambda2, ch_cg_iters, ch_cg_tol);
    if (active == c_nm)
      return cmd_noisemap(cfg, nm_sigma < 0 ? cfg.noise_sigma : nm_sigma, nm_trials,
                          ch_lambda2 < 0 ? cfg.ser.lambda2 : ch_lambda2, ch_cg_iters, ch_cg_tol);
    return 1;  // unreachable: require_subcommand(1)
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
