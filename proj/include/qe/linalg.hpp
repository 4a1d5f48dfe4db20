#pragma once

#include <complex>

#ifndef lapack_complex_float
#define lapack_complex_float std::complex<float>
#endif
#ifndef lapack_complex_double
#define lapack_complex_double std::complex<double>
#endif
#include <lapacke.h>

#include <Eigen/Dense>

#include "qe/core.hpp"

namespace qe {

using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;

struct HermitianEigen {
  RealVector values;  ///< ascending
  Matrix vectors;     ///< orthonormal columns
};

/// Full eigendecomposition of a Hermitian matrix (divide and conquer).
inline HermitianEigen hermitian_eigen(Matrix h) {
  const auto n = static_cast<lapack_int>(h.rows());
  require(h.rows() == h.cols(), Errc::invalid_argument, "matrix must be square");
  HermitianEigen out;
  out.values.resize(n);
  if (n == 0) return out;
  const lapack_int info =
      LAPACKE_zheevd(LAPACK_COL_MAJOR, 'V', 'U', n, h.data(), n, out.values.data());
  if (info != 0) fail(Errc::convergence_failure, "zheevd info=" + std::to_string(info));
  out.vectors = std::move(h);
  return out;
}

/// Singular values, descending.
inline RealVector singular_values(Matrix a) {
  const auto m = static_cast<lapack_int>(a.rows());
  const auto n = static_cast<lapack_int>(a.cols());
  RealVector s(std::min(m, n));
  if (s.size() == 0) return s;
  const lapack_int info = LAPACKE_zgesdd(LAPACK_COL_MAJOR, 'N', m, n, a.data(), m, s.data(),
                                         nullptr, 1, nullptr, 1);
  if (info != 0) fail(Errc::convergence_failure, "zgesdd info=" + std::to_string(info));
  return s;
}

/// Spectral norm.
inline double spectral_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  return singular_values(a)(0);
}

}  // namespace qe
