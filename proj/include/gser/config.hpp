#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "gser/conventional.hpp"
#include "gser/encoding.hpp"
#include "gser/lowrank.hpp"
#include "gser/partial_fourier.hpp"
#include "gser/phantom.hpp"
#include "gser/ser.hpp"

namespace gser {

// One config object drives every pipeline stage. Each section mirrors the
// parameter struct of the module it feeds; absent sections keep the
// desk-scale defaults below. Unknown keys anywhere in the file are an error
// so typos cannot silently fall back to defaults.
struct RunConfig {
  // grid
  int n1 = 32;
  int n2 = 32;
  int ns = 4;
  int k_enc = 5;
  std::array<double, 3> voxel_size = {1.0, 1.0, 1.0};

  // diffusion scheme
  double b_value = 1000.0;
  int n_dirs = 12;

  // phantom / acquisition
  double noise_sigma = 0.05;
  double center_noise_boost = 0.0;
  double center_noise_width = 0.25;
  double phase_amplitude = 0.6;
  double phase_corr_length = 4.0;
  int repetitions = 1;
  std::uint64_t seed = 1;

  double pf_fraction = 0.75;

  TikhonovParams tikhonov;
  SerParams ser;
  PatchConfig patch;

  double fa_threshold = 0.3;
  int threads = 0;  // 0: library default
  std::string out_dir = "out";

  void validate() const {
    if (n1 < 2 || n2 < 2 || ns < 1 || k_enc < 1) throw InputError("config: grid too small");
    if (n_dirs < 6) throw InputError("config: scheme.n_dirs must be >= 6 for tensor fitting");
    if (!(b_value > 0)) throw InputError("config: scheme.b_value must be positive");
    if (noise_sigma < 0) throw InputError("config: phantom.noise_sigma must be >= 0");
    if (repetitions < 1) throw InputError("config: phantom.repetitions must be >= 1");
    if (!(pf_fraction > 0.5 && pf_fraction <= 1.0))
      throw InputError("config: pf_fraction must lie in (0.5, 1]");
    if (!(fa_threshold >= 0)) throw InputError("config: fa_threshold must be >= 0");
    if (threads < 0) throw InputError("config: threads must be >= 0");
    if (out_dir.empty()) throw InputError("config: paths.out_dir must not be empty");
    tikhonov.validate();
    patch.validate();
    // ser is validated in resolved form inside ser_reconstruct
  }

  GridDims grid() const {
    GridDims d;
    d.n1 = n1;
    d.n2 = n2;
    d.ns = ns;
    d.k_enc = k_enc;
    d.nd = 1 + n_dirs;
    d.voxel_size = voxel_size;
    d.validate();
    return d;
  }

  PhantomSpec phantom_spec() const {
    PhantomSpec spec = PhantomSpec::standard(grid(), b_value, n_dirs);
    spec.noise_sigma = noise_sigma;
    spec.center_noise_boost = center_noise_boost;
    spec.center_noise_width = center_noise_width;
    spec.phase.amplitude = phase_amplitude;
    spec.phase.corr_length = phase_corr_length;
    spec.repetitions = repetitions;
    spec.seed = seed;
    spec.validate();
    return spec;
  }

  EncodingModel encoding() const { return EncodingModel::default_gslider(k_enc); }

  PartialFourierModel partial_fourier() const {
    if (pf_fraction >= 1.0) return PartialFourierModel{};
    return PartialFourierModel(n1, n2, pf_fraction);
  }

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                                const std::string& prefix) {
  if (!j.is_object()) throw InputError("config: " + (prefix.empty() ? "root" : prefix) +
                                       " must be a JSON object");
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      const std::string path = prefix.empty() ? item.key() : prefix + "." + item.key();
      throw InputError("config: unknown key '" + path + "'");
    }
  }
}

template <class T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["grid"] = {{"n1", n1}, {"n2", n2}, {"ns", ns}, {"k_enc", k_enc}, {"voxel_size", voxel_size}};
  j["scheme"] = {{"b_value", b_value}, {"n_dirs", n_dirs}};
  j["phantom"] = {{"noise_sigma", noise_sigma},
                  {"center_noise_boost", center_noise_boost},
                  {"center_noise_width", center_noise_width},
                  {"phase_amplitude", phase_amplitude},
                  {"phase_corr_length", phase_corr_length},
                  {"repetitions", repetitions},
                  {"seed", seed}};
  j["pf_fraction"] = pf_fraction;
  j["tikhonov"] = {{"lambda", tikhonov.lambda}};
  j["ser"] = {{"lambda1", ser.lambda1},
              {"lambda2", ser.lambda2},
              {"xi", ser.xi},
              {"xi_quantile", ser.xi_quantile},
              {"outer_iters", ser.outer_iters},
              {"irls_iters", ser.irls_iters},
              {"ncg_iters", ser.ncg_iters},
              {"cg_iters", ser.cg_iters},
              {"cg_tol", ser.cg_tol},
              {"objective_tol", ser.objective_tol},
              {"phase_halfwidth", ser.phase_halfwidth}};
  j["patch"] = {{"patch_edge_mm", patch.patch_edge_mm}, {"stride", patch.stride}};
  j["fa_threshold"] = fa_threshold;
  j["threads"] = threads;
  j["paths"] = {{"out_dir", out_dir}};
  return j;
}

inline RunConfig RunConfig::from_json(const nlohmann::json& j) {
  using detail::reject_unknown_keys;
  using detail::take;
  RunConfig c;
  try {
    reject_unknown_keys(j, {"grid", "scheme", "phantom", "pf_fraction", "tikhonov", "ser",
                            "patch", "fa_threshold", "threads", "paths"},
                        "");
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      reject_unknown_keys(g, {"n1", "n2", "ns", "k_enc", "voxel_size"}, "grid");
      take(g, "n1", c.n1);
      take(g, "n2", c.n2);
      take(g, "ns", c.ns);
      take(g, "k_enc", c.k_enc);
      if (g.contains("voxel_size")) {
        const auto vs = g.at("voxel_size").get<std::vector<double>>();
        if (vs.size() != 3) throw InputError("config: grid.voxel_size must have three entries");
        c.voxel_size = {vs[0], vs[1], vs[2]};
      }
    }
    if (j.contains("scheme")) {
      const auto& s = j.at("scheme");
      reject_unknown_keys(s, {"b_value", "n_dirs"}, "scheme");
      take(s, "b_value", c.b_value);
      take(s, "n_dirs", c.n_dirs);
    }
    if (j.contains("phantom")) {
      const auto& p = j.at("phantom");
      reject_unknown_keys(p,
                          {"noise_sigma", "center_noise_boost", "center_noise_width",
                           "phase_amplitude", "phase_corr_length", "repetitions", "seed"},
                          "phantom");
      take(p, "noise_sigma", c.noise_sigma);
      take(p, "center_noise_boost", c.center_noise_boost);
      take(p, "center_noise_width", c.center_noise_width);
      take(p, "phase_amplitude", c.phase_amplitude);
      take(p, "phase_corr_length", c.phase_corr_length);
      take(p, "repetitions", c.repetitions);
      take(p, "seed", c.seed);
    }
    take(j, "pf_fraction", c.pf_fraction);
    if (j.contains("tikhonov")) {
      const auto& t = j.at("tikhonov");
      reject_unknown_keys(t, {"lambda"}, "tikhonov");
      take(t, "lambda", c.tikhonov.lambda);
    }
    if (j.contains("ser")) {
      const auto& s = j.at("ser");
      reject_unknown_keys(s,
                          {"lambda1", "lambda2", "xi", "xi_quantile", "outer_iters", "irls_iters",
                           "ncg_iters", "cg_iters", "cg_tol", "objective_tol", "phase_halfwidth"},
                          "ser");
      take(s, "lambda1", c.ser.lambda1);
      take(s, "lambda2", c.ser.lambda2);
      take(s, "xi", c.ser.xi);
      take(s, "xi_quantile", c.ser.xi_quantile);
      take(s, "outer_iters", c.ser.outer_iters);
      take(s, "irls_iters", c.ser.irls_iters);
      take(s, "ncg_iters", c.ser.ncg_iters);
      take(s, "cg_iters", c.ser.cg_iters);
      take(s, "cg_tol", c.ser.cg_tol);
      take(s, "objective_tol", c.ser.objective_tol);
      take(s, "phase_halfwidth", c.ser.phase_halfwidth);
    }
    if (j.contains("patch")) {
      const auto& p = j.at("patch");
      reject_unknown_keys(p, {"patch_edge_mm", "stride"}, "patch");
      take(p, "patch_edge_mm", c.patch.patch_edge_mm);
      take(p, "stride", c.patch.stride);
    }
    take(j, "fa_threshold", c.fa_threshold);
    take(j, "threads", c.threads);
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      reject_unknown_keys(p, {"out_dir"}, "paths");
      take(p, "out_dir", c.out_dir);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("config: malformed value: ") + e.what());
  }
  c.validate();
  return c;
}

inline RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("config: parse error in '" + path + "': " + e.what());
  }
  return from_json(j);
}

}  // namespace gser
