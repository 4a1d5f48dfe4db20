#pragma once

// Observables on the 2-torus phase space: band-limited Fourier symbols,
// shrinking bump symbols at scale delta, Hoelder norms and symbol-class
// seminorm measurements.

#include <algorithm>
#include <cmath>
#include <compare>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qe/core.hpp"
#include "qe/fft.hpp"

namespace qe {

struct WaveVector {
  int k1 = 0;
  int k2 = 0;

  auto operator<=>(const WaveVector&) const = default;

  WaveVector operator-() const { return {-k1, -k2}; }
  WaveVector operator+(WaveVector o) const { return {k1 + o.k1, k2 + o.k2}; }
  int sup_norm() const { return std::max(std::abs(k1), std::abs(k2)); }
};

/// Symplectic pairing k1*l2 - k2*l1.
inline long long wedge(WaveVector k, WaveVector l) {
  return static_cast<long long>(k.k1) * l.k2 - static_cast<long long>(k.k2) * l.k1;
}

/// Band-limited observable a(x, xi) = sum_k c_k exp(2 pi i (k1 x + k2 xi)),
/// stored sparsely in wave-vector order. Every stored k satisfies
/// |k|_inf <= bandwidth().
class TorusSymbol {
 public:
  using Coefficients = std::map<WaveVector, cplx>;

  TorusSymbol() = default;
  explicit TorusSymbol(int bandwidth) : bandwidth_(bandwidth) {
    require(bandwidth >= 0, Errc::invalid_argument, "bandwidth must be nonnegative");
  }

  static TorusSymbol constant(cplx c) {
    TorusSymbol a(0);
    a.set({0, 0}, c);
    return a;
  }

  static TorusSymbol mode(int k1, int k2, cplx amplitude = 1.0) {
    TorusSymbol a(std::max(std::abs(k1), std::abs(k2)));
    a.set({k1, k2}, amplitude);
    return a;
  }

  int bandwidth() const { return bandwidth_; }

  /// Largest |k|_inf carrying a nonzero coefficient (0 for the zero symbol).
  int effective_bandwidth() const {
    int k = 0;
    for (const auto& [wv, c] : coeffs_)
      if (c != cplx{}) k = std::max(k, wv.sup_norm());
    return k;
  }

  const Coefficients& coefficients() const { return coeffs_; }
  std::size_t size() const { return coeffs_.size(); }

  cplx coeff(WaveVector k) const {
    auto it = coeffs_.find(k);
    return it == coeffs_.end() ? cplx{} : it->second;
  }

  void set(WaveVector k, cplx value) {
    require(k.sup_norm() <= bandwidth_, Errc::invalid_argument,
            "wave vector outside declared bandwidth");
    if (value == cplx{})
      coeffs_.erase(k);
    else
      coeffs_[k] = value;
  }

  void add(WaveVector k, cplx value) { set(k, coeff(k) + value); }

  /// Phase-space mean, the zero mode.
  cplx mean() const { return coeff({0, 0}); }

  cplx operator()(double x, double xi) const {
    if (coeffs_.empty()) return {};
    const int kx = bandwidth_;
    std::vector<cplx> ex(2 * kx + 1), exi(2 * kx + 1);
    for (int k = -kx; k <= kx; ++k) {
      ex[k + kx] = std::polar(1.0, two_pi * k * x);
      exi[k + kx] = std::polar(1.0, two_pi * k * xi);
    }
    cplx sum{};
    for (const auto& [k, c] : coeffs_) sum += c * ex[k.k1 + kx] * exi[k.k2 + kx];
    return sum;
  }

  /// Hermitian coefficient symmetry c(-k) = conj(c(k)), i.e. real values.
  bool is_real(double tol = 1e-14) const {
    for (const auto& [k, c] : coeffs_)
      if (std::abs(coeff(-k) - std::conj(c)) > tol * std::max(1.0, std::abs(c))) return false;
    return true;
  }

  double l2_norm() const {
    double s = 0.0;
    for (const auto& [k, c] : coeffs_) s += std::norm(c);
    return std::sqrt(s);
  }

  double coefficient_l1() const {
    double s = 0.0;
    for (const auto& [k, c] : coeffs_) s += std::abs(c);
    return s;
  }

  TorusSymbol conj() const {
    TorusSymbol out(bandwidth_);
    for (const auto& [k, c] : coeffs_) out.set(-k, std::conj(c));
    return out;
  }

  TorusSymbol without_mean() const {
    TorusSymbol out = *this;
    out.coeffs_.erase({0, 0});
    return out;
  }

  /// Drop coefficients with |c| <= tol.
  TorusSymbol pruned(double tol) const {
    TorusSymbol out(bandwidth_);
    for (const auto& [k, c] : coeffs_)
      if (std::abs(c) > tol) out.coeffs_[k] = c;
    return out;
  }

  /// Same coefficients, bandwidth redeclared (must still cover every entry).
  TorusSymbol with_bandwidth(int k) const {
    require(k >= effective_bandwidth(), Errc::invalid_argument, "bandwidth below support");
    TorusSymbol out(k);
    for (const auto& [wv, c] : coeffs_)
      if (c != cplx{}) out.coeffs_[wv] = c;
    return out;
  }

  /// d^dx/dx^dx d^dxi/dxi^dxi applied termwise.
  TorusSymbol derivative(int dx, int dxi) const {
    TorusSymbol out(bandwidth_);
    for (const auto& [k, c] : coeffs_) {
      const cplx f = ipow(cplx(0.0, two_pi * k.k1), dx) * ipow(cplx(0.0, two_pi * k.k2), dxi);
      out.set(k, c * f);
    }
    return out;
  }

  TorusSymbol& operator+=(const TorusSymbol& o) {
    bandwidth_ = std::max(bandwidth_, o.bandwidth_);
    for (const auto& [k, c] : o.coeffs_) add(k, c);
    return *this;
  }
  TorusSymbol& operator-=(const TorusSymbol& o) {
    bandwidth_ = std::max(bandwidth_, o.bandwidth_);
    for (const auto& [k, c] : o.coeffs_) add(k, -c);
    return *this;
  }
  TorusSymbol& operator*=(cplx s) {
    if (s == cplx{}) {
      coeffs_.clear();
      return *this;
    }
    for (auto& [k, c] : coeffs_) c *= s;
    return *this;
  }

  friend TorusSymbol operator+(TorusSymbol a, const TorusSymbol& b) { return a += b; }
  friend TorusSymbol operator-(TorusSymbol a, const TorusSymbol& b) { return a -= b; }
  friend TorusSymbol operator*(cplx s, TorusSymbol a) { return a *= s; }
  friend TorusSymbol operator*(TorusSymbol a, cplx s) { return a *= s; }

  /// Pointwise product (coefficient convolution).
  friend TorusSymbol operator*(const TorusSymbol& a, const TorusSymbol& b) {
    TorusSymbol out(a.bandwidth_ + b.bandwidth_);
    for (const auto& [k, c] : a.coeffs_)
      for (const auto& [l, d] : b.coeffs_) out.add(k + l, c * d);
    return out;
  }

  friend bool operator==(const TorusSymbol&, const TorusSymbol&) = default;

 private:
  static cplx ipow(cplx z, int n) {
    cplx r = 1.0;
    for (int i = 0; i < n; ++i) r *= z;
    return r;
  }

  int bandwidth_ = 0;
  Coefficients coeffs_;
};

/// L2(dx dxi) inner product <a, b> = sum_k a_k conj(b_k).
inline cplx inner(const TorusSymbol& a, const TorusSymbol& b) {
  cplx s{};
  const auto& small = a.size() <= b.size() ? a : b;
  for (const auto& [k, c] : small.coefficients()) s += a.coeff(k) * std::conj(b.coeff(k));
  return s;
}

/// Max coefficient difference.
inline double coefficient_distance(const TorusSymbol& a, const TorusSymbol& b) {
  double d = 0.0;
  for (const auto& [k, c] : a.coefficients()) d = std::max(d, std::abs(c - b.coeff(k)));
  for (const auto& [k, c] : b.coefficients()) d = std::max(d, std::abs(c - a.coeff(k)));
  return d;
}

/// Poisson bracket {a,b} = d_xi a d_x b - d_x a d_xi b. Sign chosen so that
/// [Op(a), Op(b)] = -i h Op({a,b}) + O(h^3) for the Weyl quantization.
inline TorusSymbol poisson_bracket(const TorusSymbol& a, const TorusSymbol& b) {
  TorusSymbol out(a.bandwidth() + b.bandwidth());
  for (const auto& [k, c] : a.coefficients())
    for (const auto& [l, d] : b.coefficients()) {
      // (2 pi i)^2 (k2 l1 - k1 l2) = 4 pi^2 (k1 l2 - k2 l1)
      const double w = static_cast<double>(wedge(k, l));
      if (w != 0.0) out.add(k + l, c * d * (4.0 * pi * pi * w));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Grid sampling and analysis.

/// Values a(i/m, j/m), row-major in (i, j). Exact when m > 2 * bandwidth.
inline std::vector<cplx> sample_grid(const TorusSymbol& a, int m) {
  std::vector<cplx> grid(static_cast<std::size_t>(m) * m);
  for (const auto& [k, c] : a.coefficients())
    grid[static_cast<std::size_t>(fft::wrap_index(k.k1, m)) * m + fft::wrap_index(k.k2, m)] += c;
  fft::transform_2d(grid, m, +1);
  return grid;
}

struct GridProjection {
  TorusSymbol symbol;
  double residual = 0.0;  ///< L2 norm of the discarded coefficients
};

/// Coefficients of grid data on the m x m lattice, truncated to |k|_inf <= k_out.
inline GridProjection project_grid(std::vector<cplx> values, int m, int k_out) {
  require(values.size() == static_cast<std::size_t>(m) * m, Errc::invalid_argument,
          "grid size mismatch");
  fft::transform_2d(values, m, -1);
  const double norm = 1.0 / (static_cast<double>(m) * m);
  GridProjection out{TorusSymbol(k_out), 0.0};
  double dropped = 0.0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      cplx c = values[static_cast<std::size_t>(i) * m + j] * norm;
      WaveVector k{fft::signed_index(i, m), fft::signed_index(j, m)};
      if (k.sup_norm() <= k_out)
        out.symbol.set(k, c);
      else
        dropped += std::norm(c);
    }
  out.residual = std::sqrt(dropped);
  return out;
}

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

// ---------------------------------------------------------------------------
// Bump profiles and delta-scale symbols.

/// Base profile b on [-1, 1]. The smooth family is exp(-sigma s^2 / (1 - s^2));
/// sigma = 1 is the classical mollifier exp(1 - 1/(1 - s^2)).
struct BumpProfile {
  enum class Kind { smooth, unit };

  Kind kind = Kind::smooth;
  double sharpness = 4.0;

  static BumpProfile smooth(double sigma = 4.0) { return {Kind::smooth, sigma}; }
  static BumpProfile unit() { return {Kind::unit, 0.0}; }

  double operator()(double s) const {
    if (kind == Kind::unit) return 1.0;
    const double u = s * s;
    if (u >= 1.0) return 0.0;
    return std::exp(-sharpness * u / (1.0 - u));
  }

  double sup() const { return 1.0; }

  /// Cosine transform int_{-1}^{1} b(s) cos(omega s) ds for each omega.
  /// Trapezoid on the open interval: b is flat to all orders at +-1.
  std::vector<double> cosine_transform(const std::vector<double>& omegas) const {
    double omax = 0.0;
    for (double w : omegas) omax = std::max(omax, std::abs(w));
    const int n = std::max(8192, 64 * static_cast<int>(std::ceil(omax)));
    const double ds = 2.0 / n;
    std::vector<double> nodes, weights;
    nodes.reserve(n);
    for (int i = 1; i < n; ++i) {
      double s = -1.0 + i * ds;
      double v = (*this)(s);
      if (v > 1e-300) {
        nodes.push_back(s);
        weights.push_back(v * ds);
      }
    }
    std::vector<double> out;
    out.reserve(omegas.size());
    for (double w : omegas) {
      double acc = 0.0;
      for (std::size_t i = 0; i < nodes.size(); ++i) acc += weights[i] * std::cos(w * nodes[i]);
      out.push_back(acc);
    }
    return out;
  }

  double integral() const { return kind == Kind::unit ? 2.0 : cosine_transform({0.0})[0]; }
};

enum class Localization { localized, microlocalized };

/// Bump observable centred at (x0, xi0) with width `scale` in the localized
/// variables. `alpha` and `rho` record the scale law delta = |log h|^-alpha and
/// the admissibility exponent when the spec was built from h.
struct DeltaSymbolSpec {
  Localization kind = Localization::localized;
  double x0 = 0.0;
  double xi0 = 0.0;
  double scale = 1.0;
  double alpha = 0.0;
  double rho = 0.0;
  BumpProfile profile = BumpProfile::smooth();

  /// delta = (log 1/h)^-alpha, checked against h^rho <= delta <= 1.
  static DeltaSymbolSpec from_h(double h, double alpha, double rho, Localization kind,
                                double x0 = 0.0, double xi0 = 0.0) {
    require(h > 0.0 && h < 1.0, Errc::invalid_argument, "h must lie in (0, 1)");
    require(rho >= 0.0 && rho < 0.5, Errc::invalid_scale, "rho must lie in [0, 1/2)");
    require(alpha >= 0.0, Errc::invalid_scale, "alpha must be nonnegative");
    DeltaSymbolSpec s;
    s.kind = kind;
    s.x0 = x0;
    s.xi0 = xi0;
    s.alpha = alpha;
    s.rho = rho;
    s.scale = std::pow(std::log(1.0 / h), -alpha);
    require(s.scale <= 1.0 + 1e-15 && s.scale >= std::pow(h, rho), Errc::invalid_scale,
            "scale is not rho-admissible for this h");
    s.scale = std::min(s.scale, 1.0);
    return s;
  }

  bool admissible(double h) const { return scale <= 1.0 && scale >= std::pow(h, rho); }
};

inline int min_bandwidth(double delta) { return static_cast<int>(std::ceil(4.0 / delta - 1e-12)); }

namespace detail {

/// 1-D coefficients c_k = delta e^{-2 pi i k x0} bhat(2 pi k delta), k = 0..kmax.
inline std::vector<cplx> bump_coefficients_1d(const BumpProfile& b, double delta, double x0,
                                              int kmax) {
  std::vector<double> omegas(kmax + 1);
  for (int k = 0; k <= kmax; ++k) omegas[k] = two_pi * k * delta;
  auto bhat = b.cosine_transform(omegas);
  std::vector<cplx> c(kmax + 1);
  for (int k = 0; k <= kmax; ++k) c[k] = delta * bhat[k] * std::polar(1.0, -two_pi * k * x0);
  return c;
}

inline double tail_l1_1d(const BumpProfile& b, double delta, int k) {
  if (b.kind == BumpProfile::Kind::unit) return 0.0;
  const int kmax = k + std::max(64, static_cast<int>(std::ceil(48.0 / delta)));
  std::vector<double> omegas;
  for (int q = k + 1; q <= kmax; ++q) omegas.push_back(two_pi * q * delta);
  auto bhat = b.cosine_transform(omegas);
  double s = 0.0;
  for (double v : bhat) s += delta * std::abs(v);
  return 2.0 * s;
}

}  // namespace detail

/// Fourier truncation of b((x-x0)/delta) [localized] or
/// b((x-x0)/delta) b((xi-xi0)/delta) [microlocalized], periodized on the torus.
inline TorusSymbol make_delta_symbol(const DeltaSymbolSpec& spec, int bandwidth) {
  require(spec.scale > 0.0 && spec.scale <= 1.0, Errc::invalid_scale,
          "scale must lie in (0, 1]");
  require(bandwidth >= min_bandwidth(spec.scale), Errc::bandwidth_too_small,
          "bandwidth " + std::to_string(bandwidth) + " < 4/delta");
  if (spec.profile.kind == BumpProfile::Kind::unit) {
    TorusSymbol a(bandwidth);
    a.set({0, 0}, 1.0);
    return a;
  }
  const auto cx = detail::bump_coefficients_1d(spec.profile, spec.scale, spec.x0, bandwidth);
  TorusSymbol a(bandwidth);
  auto coef = [](const std::vector<cplx>& c, int k) { return k >= 0 ? c[k] : std::conj(c[-k]); };
  if (spec.kind == Localization::localized) {
    for (int k = -bandwidth; k <= bandwidth; ++k) a.set({k, 0}, coef(cx, k));
  } else {
    const auto cxi =
        detail::bump_coefficients_1d(spec.profile, spec.scale, spec.xi0, bandwidth);
    for (int k1 = -bandwidth; k1 <= bandwidth; ++k1)
      for (int k2 = -bandwidth; k2 <= bandwidth; ++k2) a.set({k1, k2}, coef(cx, k1) * coef(cxi, k2));
  }
  return a;
}

/// Upper bound on sup |b_delta - truncation| from the discarded coefficient mass.
inline double delta_truncation_bound(const DeltaSymbolSpec& spec, int bandwidth) {
  const double t = detail::tail_l1_1d(spec.profile, spec.scale, bandwidth);
  if (spec.kind == Localization::localized) return t;
  return t * spec.profile.sup() + (spec.profile.sup() + t) * t;
}

/// Exact (untruncated) bump value, periodized.
inline double delta_bump_value(const DeltaSymbolSpec& spec, double x, double xi) {
  auto periodic = [&](double u, double c) {
    double v = 0.0;
    for (int n = -2; n <= 2; ++n) v += spec.profile((u - c - n) / spec.scale);
    return v;
  };
  if (spec.profile.kind == BumpProfile::Kind::unit) return 1.0;
  double v = periodic(x, spec.x0);
  if (spec.kind == Localization::microlocalized) v *= periodic(xi, spec.xi0);
  return v;
}

// ---------------------------------------------------------------------------
// Hoelder norm and seminorm measurements.

/// Estimate of ||a||_gamma = sup|a| + sup |a(p)-a(q)| / d(p,q)^gamma using every
/// grid point paired with axis and diagonal partners at dyadic cell offsets.
/// Always a lower bound on the true norm; nondecreasing along grid doublings.
inline double holder_norm(const TorusSymbol& a, double gamma, int grid) {
  require(gamma > 0.0 && gamma < 1.0, Errc::invalid_gamma, "gamma must lie in (0, 1)");
  require(grid >= 8 * std::max(1, a.bandwidth()) && grid >= 8, Errc::invalid_argument,
          "grid must be at least 8 * bandwidth");
  const int m = grid;
  const auto v = sample_grid(a, m);
  double sup = 0.0;
  for (const auto& z : v) sup = std::max(sup, std::abs(z));
  double semi = 0.0;
  const int dirs[4][2] = {{1, 0}, {0, 1}, {1, 1}, {1, -1}};
  for (int step = 1; step <= m / 2; step *= 2) {
    for (const auto& d : dirs) {
      const int di = d[0] * step, dj = d[1] * step;
      const double dist = std::hypot(static_cast<double>(di), static_cast<double>(dj)) / m;
      const double inv = 1.0 / std::pow(dist, gamma);
      for (int i = 0; i < m; ++i) {
        const int i2 = fft::wrap_index(i + di, m);
        const cplx* row = &v[static_cast<std::size_t>(i) * m];
        const cplx* row2 = &v[static_cast<std::size_t>(i2) * m];
        for (int j = 0; j < m; ++j) {
          const int j2 = fft::wrap_index(j + dj, m);
          semi = std::max(semi, std::abs(row[j] - row2[j2]) * inv);
        }
      }
    }
  }
  return sup + semi;
}

struct SeminormEntry {
  int dx = 0;
  int dxi = 0;
  double constant = 0.0;  ///< delta^{dx+dxi} sup |d_x^dx d_xi^dxi a|
};

struct SeminormReport {
  double delta = 1.0;
  int order = 0;
  std::vector<SeminormEntry> entries;

  double constant(int dx, int dxi) const {
    for (const auto& e : entries)
      if (e.dx == dx && e.dxi == dxi) return e.constant;
    fail(Errc::invalid_argument, "multi-index not measured");
  }

  /// Largest constant among multi-indices of total order `total`.
  double max_of_order(int total) const {
    double m = 0.0;
    for (const auto& e : entries)
      if (e.dx + e.dxi == total) m = std::max(m, e.constant);
    return m;
  }
};

/// Best constants C_{alpha,beta} with sup |d^alpha_x d^beta_xi a| <= C delta^{-|alpha|-|beta|},
/// for all |alpha| + |beta| <= order, measured on a grid.
/// `grid` = 0 picks 16 samples per shortest wavelength.
inline SeminormReport seminorm_check(const TorusSymbol& a, double delta, int order, int grid = 0) {
  require(delta > 0.0, Errc::invalid_scale, "delta must be positive");
  require(order >= 0, Errc::invalid_argument, "order must be nonnegative");
  SeminormReport rep{delta, order, {}};
  const int m = grid > 0 ? grid : next_pow2(std::max(64, 16 * (a.effective_bandwidth() + 1)));
  for (int total = 0; total <= order; ++total)
    for (int dx = total; dx >= 0; --dx) {
      const int dxi = total - dx;
      const auto g = sample_grid(a.derivative(dx, dxi), m);
      double sup = 0.0;
      for (const auto& z : g) sup = std::max(sup, std::abs(z));
      rep.entries.push_back({dx, dxi, sup * std::pow(delta, total)});
    }
  return rep;
}

// ---------------------------------------------------------------------------
// Serialization.

inline nlohmann::json to_json(const TorusSymbol& a) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [k, c] : a.coefficients())
    entries.push_back({k.k1, k.k2, c.real(), c.imag()});
  return {{"bandwidth", a.bandwidth()}, {"entries", std::move(entries)}};
}

inline TorusSymbol symbol_from_json(const nlohmann::json& j) {
  try {
    TorusSymbol a(j.at("bandwidth").get<int>());
    for (const auto& e : j.at("entries")) {
      require(e.size() == 4, Errc::io, "symbol entry must be [k1,k2,re,im]");
      a.add({e[0].get<int>(), e[1].get<int>()}, {e[2].get<double>(), e[3].get<double>()});
    }
    return a;
  } catch (const nlohmann::json::exception& ex) {
    fail(Errc::io, std::string("malformed symbol json: ") + ex.what());
  }
}

/// Parsed form of a --symbol string such as "loc:x0=0.3,delta=0.25" or
/// "micro:x0=0.5,xi0=0.5,alpha=0.3". When only alpha is given the scale is
/// resolved against a dimension later.
struct SymbolArgument {
  DeltaSymbolSpec spec;
  std::optional<double> delta;
  std::optional<double> alpha;
  std::optional<int> bandwidth;

  /// Scale resolved with delta = (log N)^-alpha when no explicit delta was given.
  DeltaSymbolSpec resolve(int dim) const {
    DeltaSymbolSpec s = spec;
    if (delta) {
      s.scale = *delta;
    } else if (alpha) {
      require(dim >= 3, Errc::invalid_argument, "alpha-scaled symbol needs N >= 3");
      s.scale = std::min(1.0, std::pow(std::log(static_cast<double>(dim)), -*alpha));
    }
    return s;
  }
};

inline SymbolArgument parse_symbol_spec(const std::string& text) {
  const auto colon = text.find(':');
  require(colon != std::string::npos, Errc::invalid_argument,
          "symbol spec must look like kind:key=value,...");
  const std::string kind = text.substr(0, colon);
  SymbolArgument out;
  if (kind == "loc")
    out.spec.kind = Localization::localized;
  else if (kind == "micro")
    out.spec.kind = Localization::microlocalized;
  else
    fail(Errc::invalid_argument, "unknown symbol kind '" + kind + "'");
  std::stringstream ss(text.substr(colon + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    require(eq != std::string::npos, Errc::invalid_argument, "expected key=value in '" + item + "'");
    const std::string key = item.substr(0, eq);
    double value = 0.0;
    try {
      value = std::stod(item.substr(eq + 1));
    } catch (const std::exception&) {
      fail(Errc::invalid_argument, "bad number in '" + item + "'");
    }
    if (key == "x0")
      out.spec.x0 = value;
    else if (key == "xi0")
      out.spec.xi0 = value;
    else if (key == "delta")
      out.delta = value;
    else if (key == "alpha")
      out.alpha = value, out.spec.alpha = value;
    else if (key == "rho")
      out.spec.rho = value;
    else if (key == "sigma")
      out.spec.profile = BumpProfile::smooth(value);
    else if (key == "K")
      out.bandwidth = static_cast<int>(value);
    else
      fail(Errc::invalid_argument, "unknown symbol key '" + key + "'");
  }
  require(out.delta || out.alpha, Errc::invalid_argument, "symbol spec needs delta or alpha");
  return out;
}

/// --symbol value: a JSON file path if it exists, otherwise a spec string.
inline TorusSymbol load_symbol_argument(const std::string& arg, int dim) {
  std::ifstream in(arg);
  if (in) {
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& ex) {
      fail(Errc::io, "cannot parse " + arg + ": " + ex.what());
    }
    return symbol_from_json(j);
  }
  const auto parsed = parse_symbol_spec(arg);
  const auto spec = parsed.resolve(dim);
  return make_delta_symbol(spec, parsed.bandwidth.value_or(min_bandwidth(spec.scale)));
}

}  // namespace qe
