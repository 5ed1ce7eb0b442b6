#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "gser/config.hpp"
#include "gser/container.hpp"
#include "gser/conventional.hpp"
#include "gser/dti.hpp"
#include "gser/image_io.hpp"
#include "gser/lowrank.hpp"
#include "gser/parallel.hpp"
#include "gser/phantom.hpp"
#include "gser/ser.hpp"

namespace gser {

// Stage orchestration. Every stage is a pure function of (config, input
// containers); all artifacts live under config.out_dir with fixed names, so
// a rerun with the same config and seed reproduces every byte. A failing
// stage writes out_dir/error.json with the stage name and message and stops
// the run with a nonzero status.
inline const std::vector<std::string>& pipeline_stage_names() {
  static const std::vector<std::string> names = {
      "simulate",      "recon-gslider", "recon-ser", "denoise-mppca",
      "denoise-lpca",  "denoise-gpca",  "dti-fit",   "metrics"};
  return names;
}

namespace detail {

inline std::string stage_path(const RunConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

// Provenance records what produced a container: the stage, the seed, and the
// content parameters. Execution details (thread cap, output directory) are
// excluded so they cannot perturb output bytes.
inline nlohmann::json stage_provenance(const RunConfig& cfg, const std::string& stage) {
  nlohmann::json prov;
  prov["command"] = stage;
  prov["seed"] = cfg.seed;
  nlohmann::json params = cfg.to_json();
  params.erase("threads");
  params.erase("paths");
  prov["params"] = std::move(params);
  return prov;
}

inline ImageStack require_image(const RunConfig& cfg, const std::string& file,
                                const std::string& stage) {
  const std::string path = stage_path(cfg, file);
  if (!std::filesystem::exists(path))
    throw IoError("stage '" + stage + "': missing input container '" + path + "'");
  return read_image_container(path);
}

inline SlabStack require_slab(const RunConfig& cfg, const std::string& file,
                              const std::string& stage) {
  const std::string path = stage_path(cfg, file);
  if (!std::filesystem::exists(path))
    throw IoError("stage '" + stage + "': missing input container '" + path + "'");
  return read_slab_container(path);
}

inline ImageStack conventional_reconstruct(const SlabStack& b, const EncodingModel& enc,
                                           const PartialFourierModel& pf,
                                           const TikhonovParams& tik) {
  const int n1 = b.dims.n1, n2 = b.dims.n2;
  const double frac = pf.is_identity() ? 1.0 : pf.pf_fraction;
  const int hw = std::clamp(symmetric_band_halfwidth(n2, frac), 1, std::min(n1, n2) / 2);
  const PhaseField phase = estimate_phase_lowres(b, hw);
  return tikhonov_recon(phase_correct(b, phase), enc, tik);
}

// Brain mask = ground-truth support (any voxel with signal in volume 0).
inline std::vector<std::uint8_t> support_mask(const ImageStack& truth) {
  std::vector<std::uint8_t> mask(std::size_t(truth.dims.image_voxels()), 0);
  for (std::int64_t vox = 0; vox < truth.dims.image_voxels(); ++vox)
    if (truth.data[truth.dims.image_at(0, vox)] > 0.0) mask[std::size_t(vox)] = 1;
  return mask;
}

inline void stage_simulate(const RunConfig& cfg) {
  const PhantomSpec spec = cfg.phantom_spec();
  const SimulatedDataset data = simulate_dataset(spec, cfg.encoding(), cfg.partial_fourier());
  const nlohmann::json prov = stage_provenance(cfg, "simulate");
  write_container(stage_path(cfg, "truth.gsv"), data.truth, prov, &spec.scheme);
  write_container(stage_path(cfg, "truth_phase.gsv"), data.truth_phase, prov);
  for (std::size_t r = 0; r < data.repetitions.size(); ++r)
    write_container(stage_path(cfg, "data_rep" + std::to_string(r) + ".gsv"),
                    data.repetitions[r], prov, &spec.scheme);
}

inline void stage_recon_gslider(const RunConfig& cfg) {
  const EncodingModel enc = cfg.encoding();
  const PartialFourierModel pf = cfg.partial_fourier();
  std::vector<ImageStack> recons;
  for (int r = 0; r < cfg.repetitions; ++r) {
    const SlabStack b =
        require_slab(cfg, "data_rep" + std::to_string(r) + ".gsv", "recon-gslider");
    recons.push_back(conventional_reconstruct(b, enc, pf, cfg.tikhonov));
  }
  const nlohmann::json prov = stage_provenance(cfg, "recon-gslider");
  const DiffusionScheme scheme = cfg.phantom_spec().scheme;
  write_container(stage_path(cfg, "conv.gsv"), recons.front(), prov, &scheme);
  write_container(stage_path(cfg, "gold.gsv"), average_repetitions(recons), prov, &scheme);
}

inline void stage_recon_ser(const RunConfig& cfg) {
  const SlabStack b = require_slab(cfg, "data_rep0.gsv", "recon-ser");
  const SerResult res = ser_reconstruct(b, cfg.encoding(), cfg.partial_fourier(), cfg.ser);
  const nlohmann::json prov = stage_provenance(cfg, "recon-ser");
  const DiffusionScheme scheme = cfg.phantom_spec().scheme;
  write_container(stage_path(cfg, "ser.gsv"), res.f, prov, &scheme);

  // line-delimited objective trace: one record per outer iteration
  std::ofstream log(stage_path(cfg, "ser_log.tsv"), std::ios::trunc);
  log << "iter\tdata\tphase_penalty\tedge_penalty\ttotal\n";
  log.precision(17);
  for (std::size_t i = 0; i < res.history.size(); ++i)
    log << i << '\t' << res.history[i].data << '\t' << res.history[i].r_phase << '\t'
        << res.history[i].j_edge << '\t' << res.history[i].total << '\n';
  if (!log) throw IoError("stage 'recon-ser': cannot write ser_log.tsv");
}

inline void stage_denoise_mppca(const RunConfig& cfg) {
  const ImageStack conv = require_image(cfg, "conv.gsv", "denoise-mppca");
  const ImageStack out = mppca_denoise(conv, cfg.patch);
  const DiffusionScheme scheme = cfg.phantom_spec().scheme;
  write_container(stage_path(cfg, "mppca.gsv"), out, stage_provenance(cfg, "denoise-mppca"),
                  &scheme);
}

inline void stage_denoise_lpca(const RunConfig& cfg) {
  const ImageStack conv = require_image(cfg, "conv.gsv", "denoise-lpca");
  const ImageStack gold = require_image(cfg, "gold.gsv", "denoise-lpca");
  const ImageStack out = lpca_oracle_denoise(conv, gold, cfg.patch);
  const DiffusionScheme scheme = cfg.phantom_spec().scheme;
  write_container(stage_path(cfg, "lpca.gsv"), out, stage_provenance(cfg, "denoise-lpca"),
                  &scheme);
}

inline void stage_denoise_gpca(const RunConfig& cfg) {
  const ImageStack conv = require_image(cfg, "conv.gsv", "denoise-gpca");
  const ImageStack gold = require_image(cfg, "gold.gsv", "denoise-gpca");
  const ImageStack out = gpca_oracle_denoise(conv, gold);
  const DiffusionScheme scheme = cfg.phantom_spec().scheme;
  write_container(stage_path(cfg, "gpca.gsv"), out, stage_provenance(cfg, "denoise-gpca"),
                  &scheme);
}

// The reconstruction variants a run may have produced, in report order.
inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {"conv", "ser", "mppca", "lpca", "gpca"};
  return names;
}

inline void stage_dti_fit(const RunConfig& cfg) {
  const ImageStack truth = require_image(cfg, "truth.gsv", "dti-fit");
  const std::vector<std::uint8_t> mask = support_mask(truth);
  const DiffusionScheme scheme = cfg.phantom_spec().scheme;
  const nlohmann::json prov = stage_provenance(cfg, "dti-fit");

  std::vector<std::string> inputs = {"gold"};
  for (const std::string& v : variant_names())
    if (std::filesystem::exists(stage_path(cfg, v + ".gsv"))) inputs.push_back(v);

  for (const std::string& name : inputs) {
    const ImageStack dwis = require_image(cfg, name + ".gsv", "dti-fit");
    const TensorField field = fit_dti(dwis, scheme, mask);
    GridDims d1 = dwis.dims;
    d1.nd = 1;
    ImageStack md_stack(d1), fa_stack(d1);
    std::vector<std::array<double, 3>> rgb(std::size_t(d1.image_voxels()), {0.0, 0.0, 0.0});
    const Eigen::VectorXd md_v = md_map(field);
    const Eigen::VectorXd fa_v = fa_map(field);
    for (std::int64_t vox = 0; vox < d1.image_voxels(); ++vox) {
      md_stack.data[vox] = md_v[vox];
      fa_stack.data[vox] = fa_v[vox];
      if (mask[std::size_t(vox)]) {
        const Eigen::Vector3d c = color_fa(field.tensor_at(vox));
        rgb[std::size_t(vox)] = {c[0], c[1], c[2]};
      }
    }
    write_container(stage_path(cfg, "md_" + name + ".gsv"), md_stack, prov);
    write_container(stage_path(cfg, "fa_" + name + ".gsv"), fa_stack, prov);
    write_pgm(stage_path(cfg, "fa_" + name + ".pgm"), tile_volume(fa_stack, 0), 0.0, 1.0);
    write_ppm(stage_path(cfg, "cfa_" + name + ".ppm"), tile_rgb_volume(d1, rgb), 0.0, 1.0);
  }
}

inline void stage_metrics(const RunConfig& cfg) {
  const ImageStack truth = require_image(cfg, "truth.gsv", "metrics");
  const ImageStack gold = require_image(cfg, "gold.gsv", "metrics");
  const std::vector<std::uint8_t> mask = support_mask(truth);
  const DiffusionScheme scheme = cfg.phantom_spec().scheme;

  std::vector<std::pair<std::string, ImageStack>> variants;
  for (const std::string& v : variant_names())
    if (std::filesystem::exists(stage_path(cfg, v + ".gsv")))
      variants.emplace_back(v, read_image_container(stage_path(cfg, v + ".gsv")));
  if (variants.empty())
    throw IoError("stage 'metrics': no reconstructed variants found under '" + cfg.out_dir + "'");

  const EvaluationReport rep = evaluation_report(variants, gold, scheme, mask, cfg.fa_threshold);
  {
    std::ofstream out(stage_path(cfg, "metrics.tsv"), std::ios::trunc);
    out << rep.to_delimited();
    if (!out) throw IoError("stage 'metrics': cannot write metrics.tsv");
  }
  {
    std::ofstream out(stage_path(cfg, "metrics.txt"), std::ios::trunc);
    out << rep.to_text();
    if (!out) throw IoError("stage 'metrics': cannot write metrics.txt");
  }
}

}  // namespace detail

// Runs the requested stages in order. Returns 0 on success; on the first
// stage failure writes out_dir/error.json {"stage", "error"} and returns 1.
// `log` (optional) receives one line per completed stage.
inline int run_pipeline(const RunConfig& cfg, const std::vector<std::string>& stages,
                        std::ostream* log = nullptr) {
  cfg.validate();
  if (stages.empty()) throw InputError("run_pipeline: no stages requested");
  for (const std::string& s : stages) {
    const auto& known = pipeline_stage_names();
    if (std::find(known.begin(), known.end(), s) == known.end())
      throw InputError("run_pipeline: unknown stage '" + s + "'");
  }
  std::filesystem::create_directories(cfg.out_dir);
  if (cfg.threads > 0) set_max_threads(cfg.threads);

  for (const std::string& stage : stages) {
    try {
      if (stage == "simulate") detail::stage_simulate(cfg);
      else if (stage == "recon-gslider") detail::stage_recon_gslider(cfg);
      else if (stage == "recon-ser") detail::stage_recon_ser(cfg);
      else if (stage == "denoise-mppca") detail::stage_denoise_mppca(cfg);
      else if (stage == "denoise-lpca") detail::stage_denoise_lpca(cfg);
      else if (stage == "denoise-gpca") detail::stage_denoise_gpca(cfg);
      else if (stage == "dti-fit") detail::stage_dti_fit(cfg);
      else if (stage == "metrics") detail::stage_metrics(cfg);
      if (log) (*log) << "stage=" << stage << " status=ok\n";
    } catch (const std::exception& e) {
      nlohmann::json err;
      err["stage"] = stage;
      err["error"] = e.what();
      std::ofstream out(detail::stage_path(cfg, "error.json"), std::ios::trunc);
      out << err.dump(2) << '\n';
      if (log) (*log) << "stage=" << stage << " status=error message=" << e.what() << '\n';
      return 1;
    }
  }
  return 0;
}

}  // namespace gser
