#pragma once

// Quantized cat map: metaplectic propagator, Egorov defects, eigenbases and
// the statistics of diagonal matrix elements over them.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "qe/anosov.hpp"
#include "qe/core.hpp"
#include "qe/linalg.hpp"
#include "qe/quantize.hpp"
#include "qe/symbols.hpp"

namespace qe {

inline double ehrenfest_time(int dim, double lyapunov) { return std::log(static_cast<double>(dim)) / lyapunov; }

// ---------------------------------------------------------------------------
// Propagator.

/// Unitary U with U^-1 Op(a) U = Op(a o G) for G = kick o A. The linear part
/// has kernel sum_s exp(i pi/(N b) (a m^2 - 2 j m + d j^2)), m = k + sN,
/// s = 0..b-1 (b = A12), scaled to unit columns. The kick multiplies by
/// diag exp(2 pi i N eps V(j/N)).
inline QuantizedOperator propagator(const AnosovMap& map, int dim) {
  require(dim >= 2, Errc::invalid_argument, "dimension must be at least 2");
  const auto& m = map.matrix();
  if (!map.quantizable()) fail(Errc::parity, "A11*A12 and A21*A22 must both be even");
  const long long a = m[0][0], b = m[0][1], d = m[1][1];
  if (b == 0) fail(Errc::singular, "A12 = 0 has no kernel representation");
  const long long n = dim;
  const long long bb = std::llabs(b);
  const long long den = 2 * n * b;  // phase = 2 pi * num / den
  Matrix u(dim, dim);
  for (long long j = 0; j < n; ++j)
    for (long long k = 0; k < n; ++k) {
      cplx s{};
      for (long long q = 0; q < bb; ++q) {
        const long long mm = k + q * n;
        // Reduce modulo |den| in 128 bits; a*mm^2 can exceed 64 bits for large b.
        const __int128 num = static_cast<__int128>(a) * mm * mm - 2 * static_cast<__int128>(j) * mm +
                             static_cast<__int128>(d) * j * j;
        const long long md = std::llabs(den);
        long long r = static_cast<long long>(num % md);
        s += unit_phase(den > 0 ? r : -r, md);
      }
      u(j, k) = s;
    }
  const double scale = u.col(0).norm();
  require(scale > 1e-12, Errc::singular, "degenerate kernel");
  u /= scale;
  if (!map.linear()) {
    for (int j = 0; j < dim; ++j) {
      const double v = map.kick_potential(static_cast<double>(j) / dim);
      u.row(j) *= std::polar(1.0, two_pi * dim * map.epsilon() * v);
    }
  }
  const double defect = (u.adjoint() * u - Matrix::Identity(dim, dim)).cwiseAbs().maxCoeff();
  if (defect > 1e-10) fail(Errc::not_unitary, "propagator unitarity defect " + std::to_string(defect));
  return {std::move(u), "U"};
}

/// U^t for integer t; negative powers use the adjoint.
inline Matrix unitary_power(const Matrix& u, int t) {
  Matrix base = t >= 0 ? u : Matrix(u.adjoint());
  Matrix out = Matrix::Identity(u.rows(), u.cols());
  for (int e = std::abs(t); e > 0; e >>= 1) {
    if (e & 1) out = out * base;
    if (e > 1) base = base * base;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Egorov defect ||U^-t Op(a) U^t - Op(a o G^t)||.

struct EgorovDefect {
  int t = 0;
  double defect = 0.0;
  double truncation_residual = 0.0;  ///< perturbed map: mass lost projecting a o G^t
  int bandwidth = 0;                 ///< bandwidth of the quantized pullback
};

inline EgorovDefect egorov_defect(const TorusSymbol& a, const AnosovMap& map, const Matrix& u, int t) {
  const int n = static_cast<int>(u.rows());
  EgorovDefect out{t, 0.0, 0.0, 0};
  Pullback pb;
  if (map.linear()) {
    try {
      pb = pullback(a, map, t, {.bandwidth_out = 0, .bandwidth_cap = 1 << 30});
    } catch (const Error& e) {
      if (e.code() == Errc::bandwidth_overflow) fail(Errc::alias_limited, "pullback left the lattice");
      throw;
    }
    if (2 * pb.symbol.effective_bandwidth() >= n)
      fail(Errc::alias_limited, "pullback bandwidth " + std::to_string(pb.symbol.effective_bandwidth()) +
                                    " >= N/2 at t=" + std::to_string(t));
  } else {
    pb = pullback(a, map, t, {.bandwidth_out = (n - 1) / 2});
  }
  out.truncation_residual = pb.residual;
  out.bandwidth = pb.symbol.effective_bandwidth();
  const Matrix ut = unitary_power(u, t);
  const Matrix evolved = ut.adjoint() * quantize(a, n).matrix * ut;
  out.defect = spectral_norm(evolved - quantize(pb.symbol, n).matrix);
  return out;
}

inline EgorovDefect egorov_defect(const TorusSymbol& a, const AnosovMap& map, int dim, int t) {
  return egorov_defect(a, map, propagator(map, dim).matrix, t);
}

/// Defects for t = 0, 1, ... until the pullback aliases (exact map) or t_max.
inline std::vector<EgorovDefect> egorov_sweep(const TorusSymbol& a, const AnosovMap& map, int dim, int t_max) {
  const Matrix u = propagator(map, dim).matrix;
  std::vector<EgorovDefect> out;
  for (int t = 0; t <= t_max; ++t) {
    try {
      out.push_back(egorov_defect(a, map, u, t));
    } catch (const Error& e) {
      if (e.code() == Errc::alias_limited) break;
      throw;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Eigendecomposition of a unitary matrix.

struct EigenSystem {
  int dim = 0;
  RealVector phases;  ///< in [0, 2 pi)
  Matrix vectors;     ///< orthonormal columns
  double residual = 0.0;     ///< max_j ||U v_j - e^{i theta_j} v_j||
  double gram_defect = 0.0;  ///< max |V^* V - I|
};

/// Eigenvectors of (U + U^*)/2, with every cluster of nearly equal
/// eigenvalues re-diagonalized through the restriction of (U - U^*)/2i. This
/// separates the pairs e^{+-i theta} that share a cosine.
inline EigenSystem eigensolve(const Matrix& u, double cluster_gap = 1e-6) {
  const int n = static_cast<int>(u.rows());
  require(u.rows() == u.cols(), Errc::invalid_argument, "matrix must be square");
  const double udefect = (u.adjoint() * u - Matrix::Identity(n, n)).cwiseAbs().maxCoeff();
  if (udefect > 1e-8) fail(Errc::not_unitary, "unitarity defect " + std::to_string(udefect));
  const Matrix herm = (u + u.adjoint()) * 0.5;
  const Matrix skew = (u - u.adjoint()) * cplx(0.0, -0.5);
  auto he = hermitian_eigen(herm);
  Matrix v = std::move(he.vectors);
  int start = 0;
  while (start < n) {
    int stop = start + 1;
    while (stop < n && he.values(stop) - he.values(stop - 1) < cluster_gap) ++stop;
    if (stop - start > 1) {
      const Matrix block = v.middleCols(start, stop - start);
      const Matrix s = block.adjoint() * skew * block;
      const auto se = hermitian_eigen((s + s.adjoint()) * 0.5);
      v.middleCols(start, stop - start) = block * se.vectors;
    }
    start = stop;
  }
  EigenSystem out;
  out.dim = n;
  out.phases.resize(n);
  const Matrix uv = u * v;
  double res = 0.0;
  for (int j = 0; j < n; ++j) {
    const cplx lam = v.col(j).dot(uv.col(j));
    double th = std::arg(lam);
    if (th < 0) th += two_pi;
    if (th >= two_pi) th -= two_pi;
    out.phases(j) = th;
    res = std::max(res, (uv.col(j) - std::polar(1.0, th) * v.col(j)).norm());
  }
  out.residual = res;
  out.gram_defect = (v.adjoint() * v - Matrix::Identity(n, n)).cwiseAbs().maxCoeff();
  out.vectors = std::move(v);
  if (out.residual > 1e-8 || out.gram_defect > 1e-10)
    fail(Errc::convergence_failure, "eigensolve residual " + std::to_string(out.residual) + ", gram defect " +
                                        std::to_string(out.gram_defect) + ", cluster gap " +
                                        std::to_string(cluster_gap));
  return out;
}

// ---------------------------------------------------------------------------
// Variance of diagonal matrix elements.

/// beta = (1 - alpha n)/2 and beta~ = (beta - alpha n)/3.
inline double default_beta(double alpha, int n = 1) { return (1.0 - alpha * n) / 2.0; }
inline double default_beta_tilde(double alpha, int n = 1) { return (default_beta(alpha, n) - alpha * n) / 3.0; }

struct VarianceReport {
  int dim = 0;
  double alpha = 0.0;
  double beta_tilde = 0.0;
  double delta = 1.0;  ///< (log N)^-alpha
  double v1 = 0.0;
  double v2 = 0.0;
  double mean_a = 0.0;
  double threshold = 0.0;  ///< tau
  std::vector<double> deviations;
  std::vector<int> gamma_set;
  std::vector<int> lambda_set;

  double density_gamma() const {
    return dim == 0 ? 0.0 : static_cast<double>(gamma_set.size()) / dim;
  }
  double h() const { return planck_constant(dim); }

  nlohmann::json to_json(bool with_deviations = true) const {
    nlohmann::json j{{"N", dim},          {"alpha", alpha},
                     {"beta_tilde", beta_tilde}, {"delta", delta},
                     {"v1", v1},          {"v2", v2},
                     {"mean_a", mean_a},  {"threshold", threshold},
                     {"density_gamma", density_gamma()},
                     {"gamma_size", gamma_set.size()}, {"lambda_set", lambda_set}};
    if (with_deviations) j["per_j_deviations"] = deviations;
    return j;
  }
};

/// <Op(a) u_j, u_j> for all eigenvectors, choosing the cheaper route.
inline Vector diagonal_elements(const TorusSymbol& a, const Matrix& vectors) {
  const auto n = vectors.rows();
  if (static_cast<Eigen::Index>(a.size()) * 4 < n) return expectation_values(a, vectors);
  const Matrix av = quantize(a, static_cast<int>(n)).matrix * vectors;
  Vector out(vectors.cols());
  for (Eigen::Index j = 0; j < vectors.cols(); ++j) out(j) = vectors.col(j).dot(av.col(j));
  return out;
}

inline VarianceReport variance_from_elements(const Vector& elements, const TorusSymbol& a, int dim, double alpha,
                                             double beta_tilde, int n_dim = 1) {
  VarianceReport r;
  r.dim = dim;
  r.alpha = alpha;
  r.beta_tilde = beta_tilde;
  const double logn = std::log(static_cast<double>(dim));
  r.delta = std::pow(logn, -alpha);
  r.threshold = std::pow(r.delta, n_dim) * std::pow(logn, -beta_tilde);
  const cplx mean = a.mean();
  r.mean_a = mean.real();
  r.deviations.resize(elements.size());
  double s1 = 0.0, s2 = 0.0;
  for (Eigen::Index j = 0; j < elements.size(); ++j) {
    const double d = std::abs(elements(j) - mean);
    r.deviations[j] = d;
    s1 += d;
    s2 += d * d;
    (d >= r.threshold ? r.lambda_set : r.gamma_set).push_back(static_cast<int>(j));
  }
  r.v1 = s1 / dim;
  r.v2 = s2 / dim;
  return r;
}

inline VarianceReport variance(const TorusSymbol& a, const EigenSystem& eig, double alpha, double beta_tilde,
                               int n_dim = 1) {
  require(2 * a.effective_bandwidth() < eig.dim, Errc::aliasing, "bandwidth must be below N/2");
  return variance_from_elements(diagonal_elements(a, eig.vectors), a, eig.dim, alpha, beta_tilde, n_dim);
}

inline void write_variance_sweep_csv(const std::vector<VarianceReport>& reports, const std::string& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), Errc::io, "cannot open " + path);
  os << "N,delta,v1,v2,v2_log_n,density_gamma\n" << std::setprecision(17);
  for (const auto& r : reports)
    os << r.dim << ',' << r.delta << ',' << r.v1 << ',' << r.v2 << ',' << r.v2 * std::log(double(r.dim)) << ','
       << r.density_gamma() << '\n';
}

// ---------------------------------------------------------------------------
// Position-space arc masses.

struct MassReport {
  double x0 = 0.0;
  double radius = 0.0;
  double arc_length = 0.0;  ///< measure of the arc, min(2r, 1)
  std::vector<double> masses;

  /// Fraction of eigenvectors with mass / arc_length in [lo, hi].
  double fraction_within(double lo, double hi) const {
    if (masses.empty()) return 0.0;
    std::size_t c = 0;
    for (double m : masses) c += (m / arc_length >= lo && m / arc_length <= hi);
    return static_cast<double>(c) / masses.size();
  }
};

/// Sum of |u(j)|^2 over sites with periodic distance |j/N - x0| < r.
inline MassReport small_scale_mass(const Matrix& vectors, double x0, double r) {
  const int n = static_cast<int>(vectors.rows());
  if (r < 2.0 / n) fail(Errc::radius_too_small, "radius below 2/N");
  MassReport out{x0, r, std::min(2.0 * r, 1.0), {}};
  std::vector<int> sites;
  for (int j = 0; j < n; ++j)
    if (std::abs(periodic_delta(static_cast<double>(j) / n - x0)) < r) sites.push_back(j);
  out.masses.resize(vectors.cols());
  for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
    double s = 0.0;
    for (int j : sites) s += std::norm(vectors(j, c));
    out.masses[c] = s;
  }
  return out;
}

inline MassReport small_scale_mass(const EigenSystem& eig, double x0, double r) {
  return small_scale_mass(eig.vectors, x0, r);
}

// ---------------------------------------------------------------------------
// Density-one extraction over windows h in (h_{m+1}, h_m].

/// h_1 = 1, h_{m+1} = (h_m^-2 + h_m^-1)^{-1/2}.
inline std::vector<double> window_recurrence(int count) {
  std::vector<double> h;
  if (count <= 0) return h;
  h.push_back(1.0);
  while (static_cast<int>(h.size()) < count) {
    const double x = h.back();
    h.push_back(1.0 / std::sqrt(1.0 / (x * x) + 1.0 / x));
  }
  return h;
}

/// Index m (1-based) of the window containing h.
inline int window_index(double h) {
  require(h > 0.0 && h <= 1.0, Errc::invalid_argument, "h must lie in (0, 1]");
  double x = 1.0;
  int m = 1;
  while (true) {
    const double next = 1.0 / std::sqrt(1.0 / (x * x) + 1.0 / x);
    if (h > next) return m;
    x = next;
    ++m;
  }
}

struct DensityWindow {
  int m = 0;
  double h_hi = 0.0;  ///< h_m
  double h_lo = 0.0;  ///< h_{m+1}
  std::size_t members = 0;
  std::size_t selected = 0;
  double density = 0.0;
  double cumulative_density = 0.0;
};

struct DensityExtraction {
  std::vector<DensityWindow> windows;
  std::vector<std::vector<int>> selected;  ///< Gamma set of each input report
  bool monotone = false;                   ///< cumulative density nondecreasing

  nlohmann::json to_json() const {
    nlohmann::json w = nlohmann::json::array();
    for (const auto& d : windows)
      w.push_back({{"m", d.m},
                   {"h_hi", d.h_hi},
                   {"h_lo", d.h_lo},
                   {"members", d.members},
                   {"selected", d.selected},
                   {"density", d.density},
                   {"cumulative_density", d.cumulative_density}});
    return {{"windows", w}, {"monotone", monotone}};
  }
};

/// Groups reports by the window of h = 1/(2 pi N) (or the supplied h values)
/// and reports the density of the selected sets per window and cumulatively.
inline DensityExtraction density_one_extract(const std::vector<VarianceReport>& reports,
                                             std::vector<double> hs = {}) {
  if (hs.empty())
    for (const auto& r : reports) hs.push_back(r.h());
  require(hs.size() == reports.size(), Errc::invalid_argument, "one h per report");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < reports.size(); ++i) groups[window_index(hs[i])].push_back(i);
  require(groups.size() >= 3, Errc::invalid_argument, "need at least three windows");
  DensityExtraction out;
  for (const auto& r : reports) out.selected.push_back(r.gamma_set);
  std::size_t total = 0, chosen = 0;
  // windows in order of decreasing h (increasing m)
  for (const auto& [m, idx] : groups) {
    DensityWindow w;
    w.m = m;
    const auto rec = window_recurrence(m + 1);
    w.h_hi = rec[m - 1];
    w.h_lo = rec[m];
    for (std::size_t i : idx) {
      w.members += reports[i].deviations.size();
      w.selected += reports[i].gamma_set.size();
    }
    if (w.members == 0) fail(Errc::empty_window, "window " + std::to_string(m) + " has no eigenvectors");
    w.density = static_cast<double>(w.selected) / w.members;
    total += w.members;
    chosen += w.selected;
    w.cumulative_density = static_cast<double>(chosen) / total;
    out.windows.push_back(w);
  }
  out.monotone = true;
  for (std::size_t i = 1; i < out.windows.size(); ++i)
    out.monotone = out.monotone && out.windows[i].cumulative_density >= out.windows[i - 1].cumulative_density;
  return out;
}

}  // namespace qe
