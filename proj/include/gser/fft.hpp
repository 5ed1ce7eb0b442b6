#pragma once

#include <complex>
#include <cstdint>
#include <map>
#include <mutex>
#include <vector>

#include <fftw3.h>

namespace gser {

using cplx = std::complex<double>;

// Centered unitary 2D FFT on row-major n1 x n2 planes: the DC sample sits at
// (n1/2, n2/2) in both domains, and forward/inverse are each scaled by
// 1/sqrt(n1*n2) so both directions are unitary. Implemented as
// fftshift o FFT o ifftshift with FFTW underneath. Plan creation is guarded
// by a mutex; execution runs on per-call buffers and is thread safe.
namespace fftdetail {

struct PlanPair {
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;
};

inline std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

inline PlanPair get_plans(int n1, int n2) {
  static std::map<std::pair<int, int>, PlanPair> cache;
  std::lock_guard<std::mutex> lock(plan_mutex());
  auto key = std::make_pair(n1, n2);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  // Plan once on scratch buffers; later calls execute on other fftw_malloc'd
  // arrays of identical alignment via fftw_execute_dft.
  fftw_complex* a = fftw_alloc_complex(std::size_t(n1) * n2);
  fftw_complex* b = fftw_alloc_complex(std::size_t(n1) * n2);
  PlanPair p;
  p.fwd = fftw_plan_dft_2d(n1, n2, a, b, FFTW_FORWARD, FFTW_ESTIMATE);
  p.inv = fftw_plan_dft_2d(n1, n2, a, b, FFTW_BACKWARD, FFTW_ESTIMATE);
  fftw_free(a);
  fftw_free(b);
  cache[key] = p;
  return p;
}

struct Scratch {
  fftw_complex* in = nullptr;
  fftw_complex* out = nullptr;
  std::size_t size = 0;
  ~Scratch() {
    if (in) fftw_free(in);
    if (out) fftw_free(out);
  }
  void ensure(std::size_t n) {
    if (size >= n) return;
    if (in) fftw_free(in);
    if (out) fftw_free(out);
    in = fftw_alloc_complex(n);
    out = fftw_alloc_complex(n);
    size = n;
  }
};

inline Scratch& scratch() {
  thread_local Scratch s;
  return s;
}

// index shift helpers (numpy conventions): fftshift moves sample 0 to n/2.
inline int fftshift_src(int dst, int n) { return (dst + n - n / 2) % n; }
inline int ifftshift_src(int dst, int n) { return (dst + n / 2) % n; }

inline void transform_centered(const cplx* in, cplx* out, int n1, int n2, bool forward) {
  const std::size_t n = std::size_t(n1) * n2;
  PlanPair plans = get_plans(n1, n2);
  Scratch& s = scratch();
  s.ensure(n);
  // ifftshift into FFTW input
  for (int r = 0; r < n1; ++r) {
    const int sr = ifftshift_src(r, n1);
    for (int c = 0; c < n2; ++c) {
      const cplx v = in[std::size_t(sr) * n2 + ifftshift_src(c, n2)];
      s.in[std::size_t(r) * n2 + c][0] = v.real();
      s.in[std::size_t(r) * n2 + c][1] = v.imag();
    }
  }
  fftw_execute_dft(forward ? plans.fwd : plans.inv, s.in, s.out);
  const double scale = 1.0 / std::sqrt(double(n));
  // fftshift out of FFTW output
  for (int r = 0; r < n1; ++r) {
    const int sr = fftshift_src(r, n1);
    for (int c = 0; c < n2; ++c) {
      const fftw_complex& v = s.out[std::size_t(sr) * n2 + fftshift_src(c, n2)];
      out[std::size_t(r) * n2 + c] = cplx(v[0] * scale, v[1] * scale);
    }
  }
}

}  // namespace fftdetail

inline void fft2_centered(const cplx* in, cplx* out, int n1, int n2) {
  fftdetail::transform_centered(in, out, n1, n2, true);
}

inline void ifft2_centered(const cplx* in, cplx* out, int n1, int n2) {
  fftdetail::transform_centered(in, out, n1, n2, false);
}

// In-place variants (the transform stages through scratch buffers, so
// aliasing input and output is safe).
inline void fft2_centered(cplx* inout, int n1, int n2) {
  fftdetail::transform_centered(inout, inout, n1, n2, true);
}

inline void ifft2_centered(cplx* inout, int n1, int n2) {
  fftdetail::transform_centered(inout, inout, n1, n2, false);
}

}  // namespace gser
