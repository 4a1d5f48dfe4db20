#pragma once

// Discrete-time Anosov dynamics on the 2-torus: a hyperbolic SL(2,Z) map A,
// optionally followed by the shear kick (x, xi) -> (x, xi + eps V'(x)).

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "qe/core.hpp"
#include "qe/fit.hpp"
#include "qe/symbols.hpp"

namespace qe {

using IntMatrix2 = std::array<std::array<long long, 2>, 2>;

inline constexpr IntMatrix2 default_cat_matrix{{{2, 1}, {3, 2}}};

struct PhasePoint {
  double x = 0.0;
  double xi = 0.0;
};

class AnosovMap {
 public:
  /// V(x) defaults to cos(2 pi x); the kick is only active for epsilon > 0.
  explicit AnosovMap(IntMatrix2 a = default_cat_matrix, double epsilon = 0.0,
                     std::optional<TorusSymbol> potential = std::nullopt)
      : a_(a), epsilon_(epsilon) {
    require(det() == 1, Errc::invalid_argument, "map matrix must have determinant 1");
    require(std::llabs(trace()) > 2, Errc::invalid_argument, "map matrix must be hyperbolic");
    require(epsilon >= 0.0, Errc::invalid_argument, "epsilon must be nonnegative");
    if (potential) {
      for (const auto& [k, c] : potential->coefficients())
        require(k.k2 == 0, Errc::invalid_argument, "kick potential must depend on x only");
      potential_ = *potential;
    } else {
      potential_ = TorusSymbol(1);
      potential_.set({1, 0}, 0.5);
      potential_.set({-1, 0}, 0.5);
    }
    force_ = potential_.derivative(1, 0);
    curvature_ = potential_.derivative(2, 0);
  }

  const IntMatrix2& matrix() const { return a_; }
  double epsilon() const { return epsilon_; }
  const TorusSymbol& potential() const { return potential_; }
  bool linear() const { return epsilon_ == 0.0; }

  long long trace() const { return a_[0][0] + a_[1][1]; }
  long long det() const { return a_[0][0] * a_[1][1] - a_[0][1] * a_[1][0]; }

  /// log of the expanding eigenvalue of A.
  double lyapunov() const {
    const double t = std::fabs(static_cast<double>(trace()));
    return std::log((t + std::sqrt(t * t - 4.0)) / 2.0);
  }

  /// Parity condition for the metaplectic quantization.
  bool quantizable() const {
    return (a_[0][0] * a_[0][1]) % 2 == 0 && (a_[1][0] * a_[1][1]) % 2 == 0;
  }

  double kick_force(double x) const { return (epsilon_ == 0.0) ? 0.0 : epsilon_ * force_(x, 0).real(); }
  double kick_potential(double x) const { return potential_(x, 0).real(); }

  PhasePoint forward(PhasePoint p) const {
    const double x = wrap_unit(a_[0][0] * p.x + a_[0][1] * p.xi);
    double xi = a_[1][0] * p.x + a_[1][1] * p.xi;
    if (epsilon_ != 0.0) xi += kick_force(x);
    return {x, wrap_unit(xi)};
  }

  PhasePoint backward(PhasePoint p) const {
    const double xi0 = epsilon_ != 0.0 ? p.xi - kick_force(p.x) : p.xi;
    return {wrap_unit(a_[1][1] * p.x - a_[0][1] * xi0), wrap_unit(-a_[1][0] * p.x + a_[0][0] * xi0)};
  }

  PhasePoint iterate(PhasePoint p, int t) const {
    for (int s = 0; s < t; ++s) p = forward(p);
    for (int s = 0; s < -t; ++s) p = backward(p);
    return p;
  }

  /// Jacobian of one forward step at p (row-major 2x2).
  std::array<double, 4> jacobian(PhasePoint p) const {
    std::array<double, 4> j{static_cast<double>(a_[0][0]), static_cast<double>(a_[0][1]),
                            static_cast<double>(a_[1][0]), static_cast<double>(a_[1][1])};
    if (epsilon_ != 0.0) {
      const double x = wrap_unit(a_[0][0] * p.x + a_[0][1] * p.xi);
      const double kappa = epsilon_ * curvature_(x, 0).real();
      j[2] += kappa * j[0];
      j[3] += kappa * j[1];
    }
    return j;
  }

  /// (A^T)^t k, exact in integers; t may be negative.
  WaveVector pull_mode(WaveVector k, int t) const {
    long long k1 = k.k1, k2 = k.k2;
    for (int s = 0; s < t; ++s) {
      const long long n1 = a_[0][0] * k1 + a_[1][0] * k2;
      const long long n2 = a_[0][1] * k1 + a_[1][1] * k2;
      k1 = n1, k2 = n2;
      check_range(k1, k2);
    }
    for (int s = 0; s < -t; ++s) {
      const long long n1 = a_[1][1] * k1 - a_[1][0] * k2;
      const long long n2 = -a_[0][1] * k1 + a_[0][0] * k2;
      k1 = n1, k2 = n2;
      check_range(k1, k2);
    }
    return {static_cast<int>(k1), static_cast<int>(k2)};
  }

 private:
  static void check_range(long long k1, long long k2) {
    if (std::llabs(k1) > (1LL << 30) || std::llabs(k2) > (1LL << 30))
      fail(Errc::bandwidth_overflow, "wave vector left the representable range");
  }

  IntMatrix2 a_;
  double epsilon_ = 0.0;
  TorusSymbol potential_;
  TorusSymbol force_;
  TorusSymbol curvature_;
};

// ---------------------------------------------------------------------------
// Fast repeated evaluation of a fixed symbol at scattered points.

class SymbolEvaluator {
 public:
  explicit SymbolEvaluator(const TorusSymbol& a) : k_(a.effective_bandwidth()) {
    for (const auto& [k, c] : a.coefficients()) {
      k1_.push_back(k.k1 + k_);
      k2_.push_back(k.k2 + k_);
      c_.push_back(c);
    }
    ex_.resize(2 * k_ + 1);
    exi_.resize(2 * k_ + 1);
  }

  cplx operator()(double x, double xi) const {
    powers(x, ex_);
    powers(xi, exi_);
    cplx s{};
    for (std::size_t i = 0; i < c_.size(); ++i) s += c_[i] * ex_[k1_[i]] * exi_[k2_[i]];
    return s;
  }

 private:
  void powers(double x, std::vector<cplx>& out) const {
    out[k_] = 1.0;
    if (k_ == 0) return;
    const cplx w = std::polar(1.0, two_pi * x);
    const cplx wc = std::conj(w);
    cplx p = 1.0, q = 1.0;
    for (int k = 1; k <= k_; ++k) {
      if ((k & 31) == 0) {
        p = std::polar(1.0, two_pi * k * x);
        q = std::conj(p);
      } else {
        p *= w;
        q *= wc;
      }
      out[k_ + k] = p;
      out[k_ - k] = q;
    }
  }

  int k_;
  std::vector<int> k1_, k2_;
  std::vector<cplx> c_;
  mutable std::vector<cplx> ex_, exi_;
};

// ---------------------------------------------------------------------------
// Symbol pullback a o G^t.

struct PullbackOptions {
  int bandwidth_out = 0;      ///< required for eps > 0
  int bandwidth_cap = 1 << 14;  ///< exact path overflow limit
};

struct Pullback {
  TorusSymbol symbol;
  double residual = 0.0;  ///< L2 mass discarded by truncation (0 on the exact path)
  bool truncation_warning = false;
};

inline constexpr double truncation_warning_level = 1e-4;

namespace detail {

/// Values of a o G^t on the m x m lattice (i/m, j/m).
inline std::vector<cplx> pullback_grid(const TorusSymbol& a, const AnosovMap& map, int t, int m) {
  SymbolEvaluator eval(a);
  std::vector<cplx> values(static_cast<std::size_t>(m) * m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const PhasePoint p = map.iterate({static_cast<double>(i) / m, static_cast<double>(j) / m}, t);
      values[static_cast<std::size_t>(i) * m + j] = eval(p.x, p.xi);
    }
  return values;
}

}  // namespace detail

inline Pullback pullback(const TorusSymbol& a, const AnosovMap& map, int t,
                         const PullbackOptions& opt = {}) {
  if (t == 0) return {a, 0.0, false};
  if (map.linear()) {
    std::map<WaveVector, cplx> moved;
    int k = 0;
    for (const auto& [wv, c] : a.coefficients()) {
      const WaveVector w = map.pull_mode(wv, t);
      if (w.sup_norm() > opt.bandwidth_cap)
        fail(Errc::bandwidth_overflow, "pullback bandwidth exceeds cap " +
                                           std::to_string(opt.bandwidth_cap));
      k = std::max(k, w.sup_norm());
      moved[w] += c;
    }
    TorusSymbol out(std::max(k, 0));
    for (const auto& [wv, c] : moved) out.set(wv, c);
    return {std::move(out), 0.0, false};
  }
  require(opt.bandwidth_out > 0, Errc::invalid_argument,
          "perturbed pullback needs a target bandwidth");
  const int m = next_pow2(2 * opt.bandwidth_out + 2);
  auto proj = project_grid(detail::pullback_grid(a, map, t, m), m, opt.bandwidth_out);
  return {std::move(proj.symbol), proj.residual, proj.residual > truncation_warning_level};
}

/// Av_T a = (1/T) sum_{t=0}^{T-1} a o G^t.
inline Pullback time_average(const TorusSymbol& a, const AnosovMap& map, int horizon,
                             const PullbackOptions& opt = {}) {
  require(horizon >= 1, Errc::invalid_argument, "T must be at least 1");
  if (map.linear()) {
    std::map<WaveVector, cplx> acc;
    int k = 0;
    for (int t = 0; t < horizon; ++t) {
      const auto p = pullback(a, map, t, opt);
      for (const auto& [wv, c] : p.symbol.coefficients()) acc[wv] += c / static_cast<double>(horizon);
      k = std::max(k, p.symbol.effective_bandwidth());
    }
    TorusSymbol out(k);
    for (const auto& [wv, c] : acc) out.set(wv, c);
    return {std::move(out), 0.0, false};
  }
  require(opt.bandwidth_out > 0, Errc::invalid_argument,
          "perturbed time average needs a target bandwidth");
  const int m = next_pow2(2 * opt.bandwidth_out + 2);
  SymbolEvaluator eval(a);
  std::vector<cplx> values(static_cast<std::size_t>(m) * m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      PhasePoint p{static_cast<double>(i) / m, static_cast<double>(j) / m};
      cplx s{};
      for (int t = 0; t < horizon; ++t) {
        s += eval(p.x, p.xi);
        p = map.forward(p);
      }
      values[static_cast<std::size_t>(i) * m + j] = s / static_cast<double>(horizon);
    }
  auto proj = project_grid(std::move(values), m, opt.bandwidth_out);
  return {std::move(proj.symbol), proj.residual, proj.residual > truncation_warning_level};
}

// ---------------------------------------------------------------------------
// Correlations.

struct CorrelationOptions {
  int quadrature_grid = 1024;  ///< lattice size for the perturbed map
};

namespace detail {

/// Quadrature lattice shifted off the rational points (periodic orbits of A).
inline PhasePoint quadrature_node(int i, int j, int m) {
  constexpr double sx = 0.3819660112501051;  // 2 - golden ratio
  constexpr double sy = 0.4142135623730950;  // sqrt(2) - 1
  return {(i + sx) / m, (j + sy) / m};
}

}  // namespace detail

/// Largest t for which some nonzero k with |k|_inf <= K has (A^T)^t k inside
/// the same box; for eps = 0, C_{f,g}(t) vanishes for band-K symbols beyond it.
inline int correlation_horizon(const AnosovMap& map, int bandwidth) {
  int best = 0;
  for (int k1 = -bandwidth; k1 <= bandwidth; ++k1)
    for (int k2 = -bandwidth; k2 <= bandwidth; ++k2) {
      if (k1 == 0 && k2 == 0) continue;
      WaveVector w{k1, k2};
      int last_inside = 0;
      // Norms along a hyperbolic orbit dip at most once, so a run of escapes
      // longer than the dip ends the search.
      for (int s = 1; s < 200; ++s) {
        w = map.pull_mode(w, 1);
        if (w.sup_norm() <= bandwidth) last_inside = s;
        if (s - last_inside > 64 || w.sup_norm() > (1 << 24)) break;
      }
      best = std::max(best, last_inside);
    }
  return best;
}

/// ceil(log(2K)/l) + 1, the conservative escape time of a single mode.
inline int nominal_correlation_horizon(const AnosovMap& map, int bandwidth) {
  return static_cast<int>(std::ceil(std::log(2.0 * bandwidth) / map.lyapunov())) + 1;
}

/// C(t) = int f conj(g o G^t) dmu - mean(f) conj(mean(g)) for t = 0..t_max.
/// Exact on coefficients for eps = 0; lattice quadrature with the time split
/// between a backward image of f and a forward image of g otherwise.
inline std::vector<cplx> correlation_series(const TorusSymbol& f, const TorusSymbol& g,
                                            const AnosovMap& map, int t_max,
                                            const CorrelationOptions& opt = {}) {
  require(t_max >= 0, Errc::invalid_argument, "t_max must be nonnegative");
  const cplx means = f.mean() * std::conj(g.mean());
  std::vector<cplx> out;
  if (map.linear()) {
    // Past the horizon no mode of g lands in the band of f, so C(t) = 0 exactly
    // and the (possibly unrepresentable) wave vectors need not be formed.
    const int horizon =
        correlation_horizon(map, std::max(f.effective_bandwidth(), g.effective_bandwidth()));
    for (int t = 0; t <= t_max; ++t) {
      if (t > horizon) {
        out.push_back(0.0);
        continue;
      }
      const auto gt = pullback(g, map, t, {.bandwidth_out = 0, .bandwidth_cap = 1 << 30});
      out.push_back(inner(f, gt.symbol) - means);
    }
    return out;
  }
  const int m = opt.quadrature_grid;
  const std::size_t n = static_cast<std::size_t>(m) * m;
  std::vector<PhasePoint> back(n), fwd(n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) back[i * static_cast<std::size_t>(m) + j] = detail::quadrature_node(i, j, m);
  fwd = back;
  SymbolEvaluator ef(f), eg(g);
  std::vector<cplx> fv(n), gv(n);
  for (std::size_t p = 0; p < n; ++p) {
    fv[p] = ef(back[p].x, back[p].xi);
    gv[p] = std::conj(eg(fwd[p].x, fwd[p].xi));
  }
  int tb = 0, tf = 0;
  for (int t = 0; t <= t_max; ++t) {
    while (tb + tf < t) {
      if (tf <= tb) {
        for (std::size_t p = 0; p < n; ++p) {
          fwd[p] = map.forward(fwd[p]);
          gv[p] = std::conj(eg(fwd[p].x, fwd[p].xi));
        }
        ++tf;
      } else {
        for (std::size_t p = 0; p < n; ++p) {
          back[p] = map.backward(back[p]);
          fv[p] = ef(back[p].x, back[p].xi);
        }
        ++tb;
      }
    }
    cplx s{};
    for (std::size_t p = 0; p < n; ++p) s += fv[p] * gv[p];
    out.push_back(s / static_cast<double>(n) - means);
  }
  return out;
}

inline cplx correlation(const TorusSymbol& f, const TorusSymbol& g, const AnosovMap& map, int t,
                        const CorrelationOptions& opt = {}) {
  if (t >= 0) return correlation_series(f, g, map, t, opt).back();
  // C_{f,g}(t) = conj(C_{g,f}(-t))
  return std::conj(correlation_series(g, f, map, -t, opt).back());
}


struct CorrelationFit {
  double amplitude = 0.0;  ///< C in |C(t)| <= C e^{-c t}
  double rate = 0.0;       ///< c
  double r2 = 0.0;
  std::vector<int> used;   ///< times entering the fit
};

/// Fit of log |C(t)| over the times where |C(t)| exceeds `floor`.
inline CorrelationFit fit_correlation_decay(std::span<const double> times,
                                            std::span<const double> magnitudes, double floor) {
  std::vector<double> t, y;
  CorrelationFit fit;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (magnitudes[i] > floor) {
      t.push_back(times[i]);
      y.push_back(std::log(magnitudes[i]));
      fit.used.push_back(static_cast<int>(i));
    }
  require(t.size() >= 3, Errc::fit_degenerate, "fewer than three correlation values above floor");
  const auto line = fit_line(t, y);
  fit.amplitude = std::exp(line.intercept);
  fit.rate = -line.slope;
  fit.r2 = line.r2;
  return fit;
}

inline void write_correlation_csv(std::span<const cplx> series, const std::string& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), Errc::io, "cannot open " + path);
  os << "t,re,im,abs\n" << std::setprecision(17);
  for (std::size_t t = 0; t < series.size(); ++t)
    os << t << ',' << series[t].real() << ',' << series[t].imag() << ',' << std::abs(series[t]) << '\n';
}

// ---------------------------------------------------------------------------
// Rate of ergodicity via the correlation double sum
// ||Av_T f||^2 = T^-2 sum_{s,t<T} C(t-s).

struct ErgodicityRate {
  std::vector<int> horizons;
  std::vector<double> norms;  ///< ||Av_T f||_{L2}
  double slope = 0.0;         ///< d log||Av_T|| / d log T
  double exponent = 0.0;      ///< p = -slope
  double intercept = 0.0;
  double r2 = 0.0;
  bool exact_ergodic = false;  ///< f has no fluctuating part

  nlohmann::json to_json() const {
    return {{"T", horizons}, {"norm", norms},         {"slope", slope},
            {"intercept", intercept}, {"r2", r2}, {"exponent", exponent},
            {"exact_ergodic", exact_ergodic}};
  }
};

/// ||Av_T f||^2 from the autocorrelation sequence c[0..T-1].
inline double average_norm_sq(std::span<const cplx> autocorr, int horizon) {
  double s = horizon * autocorr[0].real();
  for (int tau = 1; tau < horizon; ++tau) s += 2.0 * (horizon - tau) * autocorr[tau].real();
  return std::max(0.0, s) / (static_cast<double>(horizon) * horizon);
}

inline ErgodicityRate ergodicity_rate(const TorusSymbol& f, const AnosovMap& map,
                                      std::vector<int> horizons,
                                      const CorrelationOptions& opt = {}) {
  require(horizons.size() >= 3, Errc::fit_degenerate, "need at least three horizons");
  for (int t : horizons) require(t >= 1, Errc::invalid_argument, "horizons must be positive");
  ErgodicityRate out;
  out.horizons = horizons;
  const TorusSymbol fluct = f.without_mean();
  if (fluct.coefficient_l1() == 0.0) {
    out.norms.assign(horizons.size(), 0.0);
    out.exact_ergodic = true;
    return out;
  }
  const int tmax = *std::max_element(horizons.begin(), horizons.end());
  const auto c = correlation_series(fluct, fluct, map, tmax - 1, opt);
  std::vector<double> ts, ns;
  for (int t : horizons) {
    const double n = std::sqrt(average_norm_sq(c, t));
    out.norms.push_back(n);
    ts.push_back(t);
    ns.push_back(n);
  }
  const auto line = fit_loglog(ts, ns);
  out.slope = line.slope;
  out.exponent = -line.slope;
  out.intercept = line.intercept;
  out.r2 = line.r2;
  return out;
}

// ---------------------------------------------------------------------------

/// Mean logarithmic growth rate of the separation of nearby orbit pairs,
/// renormalized after every step; the first `warmup` steps align the
/// separation with the unstable direction and are not counted.
inline double expansion_rate(const AnosovMap& map, int samples, std::uint64_t seed = 1,
                             int warmup = 10, int steps = 20) {
  require(samples >= 10, Errc::invalid_argument, "need at least 10 samples");
  constexpr double d0 = 1e-8;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double total = 0.0;
  for (int s = 0; s < samples; ++s) {
    PhasePoint p{unif(rng), unif(rng)};
    const double th = two_pi * unif(rng);
    double dx = d0 * std::cos(th), dxi = d0 * std::sin(th);
    double acc = 0.0;
    for (int n = 0; n < warmup + steps; ++n) {
      const PhasePoint q{wrap_unit(p.x + dx), wrap_unit(p.xi + dxi)};
      const PhasePoint p1 = map.forward(p), q1 = map.forward(q);
      const double ex = periodic_delta(q1.x - p1.x), exi = periodic_delta(q1.xi - p1.xi);
      const double d = std::hypot(ex, exi);
      if (n >= warmup) acc += std::log(d / d0);
      dx = ex * d0 / d;
      dxi = exi * d0 / d;
      p = p1;
    }
    total += acc / steps;
  }
  return total / samples;
}

}  // namespace qe
