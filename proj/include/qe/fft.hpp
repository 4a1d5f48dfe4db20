#pragma once

#include <fftw3.h>

#include <span>
#include <vector>

#include "qe/core.hpp"

namespace qe::fft {

/// In-place 2-D DFT of an M x M row-major array.
/// sign = -1 computes sum_x f(x) e^{-2 pi i k x / M} (analysis),
/// sign = +1 computes sum_k c(k) e^{+2 pi i k x / M} (synthesis). Unnormalized.
inline void transform_2d(std::span<cplx> data, int m, int sign) {
  require(m > 0 && data.size() == static_cast<std::size_t>(m) * m, Errc::invalid_argument,
          "fft grid shape mismatch");
  auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan = fftw_plan_dft_2d(m, m, ptr, ptr, sign < 0 ? FFTW_FORWARD : FFTW_BACKWARD,
                                    FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
}

inline void transform_1d(std::span<cplx> data, int sign) {
  auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan = fftw_plan_dft_1d(static_cast<int>(data.size()), ptr, ptr,
                                    sign < 0 ? FFTW_FORWARD : FFTW_BACKWARD, FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
}

/// Index of wave number k on a length-m periodic FFT axis.
inline int wrap_index(int k, int m) {
  int r = k % m;
  return r < 0 ? r + m : r;
}

/// Signed wave number stored at FFT index i (range [-m/2, m/2)).
inline int signed_index(int i, int m) { return i < (m + 1) / 2 ? i : i - m; }

}  // namespace qe::fft
