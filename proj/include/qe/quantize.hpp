#pragma once

// Weyl quantization of torus symbols on C^N. A mode e_k quantizes to the
// symmetrically ordered product e^{i pi k1 k2 / N} Z^{k1} X^{k2}, with Z the
// clock diag(e^{2 pi i j/N}) and (X psi)(j) = psi(j+1). h = 1/(2 pi N).

#include <bit>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <string>

#include "qe/core.hpp"
#include "qe/linalg.hpp"
#include "qe/symbols.hpp"

namespace qe {

inline double planck_constant(int dim) { return 1.0 / (two_pi * dim); }

struct QuantizedOperator {
  int dim = 0;
  Matrix matrix;
  double h = 0.0;
  std::string label;

  QuantizedOperator() = default;
  QuantizedOperator(Matrix m, std::string lbl)
      : dim(static_cast<int>(m.rows())), matrix(std::move(m)), h(planck_constant(dim)),
        label(std::move(lbl)) {}
};

namespace detail {

inline void check_alias(const TorusSymbol& a, int n) {
  require(n >= 2, Errc::invalid_argument, "dimension must be at least 2");
  const int k = a.effective_bandwidth();
  require(n > 2 * k, Errc::aliasing,
          "N=" + std::to_string(n) + " <= 2*bandwidth=" + std::to_string(2 * k));
}

/// Weyl phase of mode k on row j: e^{i pi (k1 k2 + 2 k1 j) / N}.
inline cplx mode_phase(WaveVector k, long long j, int n) {
  return unit_phase(static_cast<long long>(k.k1) * k.k2 + 2LL * k.k1 * j, 2LL * n);
}

}  // namespace detail

/// `reject` enforces N > 2K so that distinct modes give distinct operators;
/// `allow` only needs N >= 2 and is meant for identities that survive
/// aliasing, such as the trace for K < N.
enum class AliasPolicy { reject, allow };

inline QuantizedOperator quantize(const TorusSymbol& a, int n, AliasPolicy policy = AliasPolicy::reject) {
  if (policy == AliasPolicy::reject)
    detail::check_alias(a, n);
  else
    require(n >= 2, Errc::invalid_argument, "dimension must be at least 2");
  Matrix m = Matrix::Zero(n, n);
  for (const auto& [k, c] : a.coefficients()) {
    const int shift = fft::wrap_index(k.k2, n);
    for (int j = 0; j < n; ++j) m(j, (j + shift) % n) += c * detail::mode_phase(k, j, n);
  }
  return {std::move(m), "Op_N(a)"};
}

/// <v_j, Op(a) v_j> for every column v_j of `vectors`, without forming Op(a).
inline Vector expectation_values(const TorusSymbol& a, const Matrix& vectors) {
  const int n = static_cast<int>(vectors.rows());
  detail::check_alias(a, n);
  Vector out = Vector::Zero(vectors.cols());
  std::vector<cplx> phase(n);
  for (const auto& [k, c] : a.coefficients()) {
    const int shift = fft::wrap_index(k.k2, n);
    for (int j = 0; j < n; ++j) phase[j] = c * detail::mode_phase(k, j, n);
    for (Eigen::Index col = 0; col < vectors.cols(); ++col) {
      const cplx* v = vectors.col(col).data();
      cplx s{};
      for (int j = 0; j < n; ++j) {
        int jj = j + shift;
        if (jj >= n) jj -= n;
        s += std::conj(v[j]) * phase[j] * v[jj];
      }
      out(col) += s;
    }
  }
  return out;
}

inline double operator_norm(const QuantizedOperator& a) { return spectral_norm(a.matrix); }

struct CalculusDefects {
  double adjoint = 0.0;     ///< ||Op(a)^* - Op(conj a)||
  double product = 0.0;     ///< ||Op(a)Op(b) - Op(ab)||
  double commutator = 0.0;  ///< ||[Op(a),Op(b)] + i h Op({a,b})||
  /// ||Op(a)Op(b) - Op(ab - (i h / 2){a,b})||, the remainder after the first-order term.
  double product_second_order = 0.0;
};

inline CalculusDefects calculus_defects(const TorusSymbol& a, const TorusSymbol& b, int n) {
  const int ka = a.effective_bandwidth(), kb = b.effective_bandwidth();
  require(2 * (ka + kb) < n, Errc::aliasing, "need 2*(K_a+K_b) < N");
  const double h = planck_constant(n);
  const Matrix oa = quantize(a, n).matrix;
  const Matrix ob = quantize(b, n).matrix;
  const Matrix prod = oa * ob;
  const TorusSymbol ab = a * b;
  const TorusSymbol bracket = poisson_bracket(a, b);
  CalculusDefects d;
  d.adjoint = spectral_norm(oa.adjoint() - quantize(a.conj(), n).matrix);
  const Matrix op_ab = quantize(ab, n).matrix;
  const Matrix op_br = quantize(bracket, n).matrix;
  d.product = spectral_norm(prod - op_ab);
  d.commutator = spectral_norm(prod - ob * oa + cplx(0.0, h) * op_br);
  d.product_second_order = spectral_norm(prod - op_ab + cplx(0.0, 0.5 * h) * op_br);
  return d;
}

struct TraceAverage {
  cplx trace;               ///< Tr A
  double normalized = 0.0;  ///< Re N^{-1} Tr A
  double mean = 0.0;        ///< Re coeff(0)
  double defect = 0.0;      ///< |N^{-1} Tr A - coeff(0)|
};

inline TraceAverage trace_average(const QuantizedOperator& op, const TorusSymbol& a) {
  TraceAverage t;
  t.trace = op.matrix.trace();
  const cplx avg = t.trace / static_cast<double>(op.dim);
  t.normalized = avg.real();
  t.mean = a.mean().real();
  t.defect = std::abs(avg - a.mean());
  return t;
}

// ---------------------------------------------------------------------------
// Export: binary "QOP1" (16-byte header: magic, u32 N, 8 reserved zero bytes),
// then N*N row-major little-endian float64 (re, im) pairs. CSV: row,col,re,im.

namespace detail {

template <class T>
void write_le(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace detail

inline void write_binary(const Matrix& m, const std::string& path) {
  require(m.rows() == m.cols(), Errc::invalid_argument, "matrix must be square");
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), Errc::io, "cannot open " + path);
  os.write("QOP1", 4);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
  detail::write_le<std::uint64_t>(os, 0);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      detail::write_le<double>(os, m(r, c).real());
      detail::write_le<double>(os, m(r, c).imag());
    }
  require(static_cast<bool>(os), Errc::io, "write failed for " + path);
}

inline Matrix read_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), Errc::io, "cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  require(is && std::string(magic, 4) == "QOP1", Errc::io, "bad magic in " + path);
  const auto n = detail::read_le<std::uint32_t>(is);
  detail::read_le<std::uint64_t>(is);
  Matrix m(n, n);
  for (std::uint32_t r = 0; r < n; ++r)
    for (std::uint32_t c = 0; c < n; ++c) {
      const double re = detail::read_le<double>(is);
      const double im = detail::read_le<double>(is);
      m(r, c) = {re, im};
    }
  require(static_cast<bool>(is), Errc::io, "truncated matrix file " + path);
  return m;
}

inline void write_binary(const QuantizedOperator& op, const std::string& path) {
  write_binary(op.matrix, path);
}

inline void write_csv(const QuantizedOperator& op, const std::string& path) {
  require(op.dim <= 64, Errc::invalid_argument, "CSV export is limited to N <= 64");
  std::ofstream os(path);
  require(static_cast<bool>(os), Errc::io, "cannot open " + path);
  os << "row,col,re,im\n" << std::setprecision(17);
  for (int r = 0; r < op.dim; ++r)
    for (int c = 0; c < op.dim; ++c)
      os << r << ',' << c << ',' << op.matrix(r, c).real() << ',' << op.matrix(r, c).imag() << '\n';
}

}  // namespace qe
