#pragma once

#include "gser/encoding.hpp"
#include "gser/partial_fourier.hpp"
#include "gser/stacks.hpp"

namespace gser {

namespace detail {
inline void check_forward_dims(const GridDims& dims, const EncodingModel& enc,
                               const PartialFourierModel& pf, const std::string& where) {
  check_encoding_dims(dims, enc, where);
  if (!pf.is_identity() && (pf.n1 != dims.n1 || pf.n2 != dims.n2))
    throw ShapeError(where + ": partial-Fourier plane size mismatch");
}
}  // namespace detail

// Applies G (partial Fourier) to every (slab, encoding, dwi) plane in place.
inline void apply_partial_fourier_stack(Eigen::VectorXcd& b, const GridDims& dims,
                                        const PartialFourierModel& pf) {
  if (pf.is_identity()) return;
  const std::int64_t planes = std::int64_t(dims.ns) * dims.k_enc * dims.nd;
  parallel_for(0, planes, [&](std::int64_t p) {
    apply_partial_fourier_plane(b.data() + p * dims.plane(), pf);
  });
}

// Forward model b = G(exp(i p) . A f), linear in f for fixed p.
inline Eigen::VectorXcd forward_model_raw(const Eigen::VectorXd& f, const Eigen::VectorXd& p,
                                          const GridDims& dims, const EncodingModel& enc,
                                          const PartialFourierModel& pf) {
  detail::check_forward_dims(dims, enc, pf, "forward_model");
  if (p.size() != dims.slab_size()) throw ShapeError("forward_model: phase size mismatch");
  if (!p.allFinite()) throw InputError("forward_model: non-finite phase");
  Eigen::VectorXcd b = apply_rf_encoding_raw(f, dims, enc);
  parallel_for(0, b.size(), [&](std::int64_t i) { b[i] *= cplx(std::cos(p[i]), std::sin(p[i])); });
  apply_partial_fourier_stack(b, dims, pf);
  return b;
}

inline SlabStack forward_model(const ImageStack& f, const PhaseField& p, const EncodingModel& enc,
                               const PartialFourierModel& pf) {
  f.check("forward_model");
  p.check("forward_model");
  check_same_dims(f.dims, p.dims, "forward_model");
  SlabStack out(f.dims);
  out.data = forward_model_raw(f.data, p.data, f.dims, enc, pf);
  return out;
}

// Adjoint of the forward map at fixed phase: A^H (exp(-i p) . G y), since G
// is self-adjoint. Returns a complex image-domain vector.
inline Eigen::VectorXcd forward_model_adjoint_raw(const Eigen::VectorXcd& y,
                                                  const Eigen::VectorXd& p, const GridDims& dims,
                                                  const EncodingModel& enc,
                                                  const PartialFourierModel& pf) {
  detail::check_forward_dims(dims, enc, pf, "forward_model_adjoint");
  if (y.size() != dims.slab_size() || p.size() != dims.slab_size())
    throw ShapeError("forward_model_adjoint: size mismatch");
  Eigen::VectorXcd g = y;
  apply_partial_fourier_stack(g, dims, pf);
  parallel_for(0, g.size(), [&](std::int64_t i) { g[i] *= cplx(std::cos(p[i]), -std::sin(p[i])); });
  return apply_rf_adjoint(g, dims, enc);
}

}  // namespace gser
