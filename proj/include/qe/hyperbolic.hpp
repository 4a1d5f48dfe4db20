#pragma once

// Geodesic flow on the Bolza surface. Points of the unit tangent bundle are
// SL(2,R) matrices g acting on the upper half-plane: base point g.i, direction
// the image of the upward unit vector at i. The flow is right multiplication by
// diag(e^{t/2}, e^{-t/2}); deck transformations act on the left.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
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

// ---------------------------------------------------------------------------
// SL(2,R) and upper half-plane geometry.

struct SL2R {
  double a = 1, b = 0, c = 0, d = 1;

  double det() const { return a * d - b * c; }
  SL2R inverse() const { return {d, -b, -c, a}; }

  friend SL2R operator*(const SL2R& x, const SL2R& y) {
    return {x.a * y.a + x.b * y.c, x.a * y.b + x.b * y.d, x.c * y.a + x.d * y.c, x.c * y.b + x.d * y.d};
  }

  cplx apply(cplx z) const { return (a * z + b) / (c * z + d); }

  /// Renormalize det to 1 after long products.
  SL2R normalized() const {
    const double s = 1.0 / std::sqrt(det());
    return {a * s, b * s, c * s, d * s};
  }

  double max_abs_diff(const SL2R& o) const {
    return std::max({std::abs(a - o.a), std::abs(b - o.b), std::abs(c - o.c), std::abs(d - o.d)});
  }
};

inline SL2R geodesic_step(double t) { return {std::exp(t / 2), 0.0, 0.0, std::exp(-t / 2)}; }

/// Rotation about i turning directions by phi.
inline SL2R rotation(double phi) {
  const double c = std::cos(phi / 2), s = std::sin(phi / 2);
  return {c, s, -s, c};
}

/// Hyperbolic distance in the upper half-plane.
inline double hyp_distance(cplx z, cplx w) {
  const double s = std::abs(z - w) / (2.0 * std::sqrt(z.imag() * w.imag()));
  return 2.0 * std::asinh(s);
}

/// Cayley map to the unit disk, i -> 0.
inline cplx to_disk(cplx z) { return (z - cplx(0, 1)) / (z + cplx(0, 1)); }
inline cplx from_disk(cplx w) { return cplx(0, 1) * (1.0 + w) / (1.0 - w); }

/// Direction angle of the geodesic from z towards w, measured at z.
inline double direction_towards(cplx z, cplx w) {
  // move z to i by a real affine map, then read the angle in the disk
  const cplx u = (w - z.real()) / z.imag();
  return std::arg(to_disk(u)) + pi / 2;
}

inline double wrap_angle(double a) { return a - two_pi * std::floor((a + pi) / two_pi); }

/// Unit tangent vector as an SL(2,R) element.
struct UnitTangentFrame {
  SL2R g;
  bool reduced = false;

  cplx base() const { return g.apply(cplx(0, 1)); }

  /// Direction angle of the tangent vector at the base point.
  double angle() const {
    const cplx q = cplx(g.c, 0) * cplx(0, 1) + g.d;
    return std::arg(cplx(0, 1) / (q * q));
  }

  /// Frame at z pointing in direction theta.
  static UnitTangentFrame at(cplx z, double theta) {
    const double y = z.imag();
    require(y > 0.0, Errc::invalid_argument, "base point must lie in the upper half-plane");
    const double sy = std::sqrt(y);
    const SL2R affine{sy, z.real() / sy, 0.0, 1.0 / sy};
    return {affine * rotation(theta - pi / 2), false};
  }

  std::array<double, 4> entries() const { return {g.a, g.b, g.c, g.d}; }
};

// ---------------------------------------------------------------------------
// Bolza surface.

class FuchsianGroup {
 public:
  /// Side pairings of the regular octagon centred at i: in the disk model the
  /// translation [[1+sqrt2, sqrt(2+2sqrt2)], [same, 1+sqrt2]] conjugated by
  /// rotations k pi/4, k = 0..3, and their inverses.
  static FuchsianGroup bolza() {
    FuchsianGroup grp;
    const double al = 1.0 + std::sqrt(2.0);
    const double be = std::sqrt(2.0 + 2.0 * std::sqrt(2.0));
    using C = std::complex<double>;
    using M = std::array<C, 4>;
    auto mul = [](const M& x, const M& y) {
      return M{x[0] * y[0] + x[1] * y[2], x[0] * y[1] + x[1] * y[3], x[2] * y[0] + x[3] * y[2],
               x[2] * y[1] + x[3] * y[3]};
    };
    const M cay{C(1), C(0, -1), C(1), C(0, 1)};        // z -> (z - i)/(z + i)
    const M cay_inv{C(0, 0.5), C(0, 0.5), C(-0.5), C(0.5)};  // inverse up to scale
    for (int k = 0; k < 4; ++k) {
      const double th = k * pi / 4;
      const M rot{std::polar(1.0, th / 2), C(0), C(0), std::polar(1.0, -th / 2)};
      const M rot_inv{std::polar(1.0, -th / 2), C(0), C(0), std::polar(1.0, th / 2)};
      const M disk = mul(mul(rot, M{C(al), C(be), C(be), C(al)}), rot_inv);
      M uhp = mul(mul(cay_inv, disk), cay);
      // fix the scale so the matrix is real with det 1
      const C det = uhp[0] * uhp[3] - uhp[1] * uhp[2];
      C s = std::sqrt(det);
      for (auto& e : uhp) e /= s;
      if (std::abs(uhp[0].imag()) + std::abs(uhp[3].imag()) > 1e-9)
        for (auto& e : uhp) e *= C(0, 1);
      SL2R g{uhp[0].real(), uhp[1].real(), uhp[2].real(), uhp[3].real()};
      grp.generators_.push_back(g);
      grp.generators_.push_back(g.inverse());
    }
    grp.genus_ = 2;
    grp.systole_ = 2.0 * std::acosh(al);
    grp.inradius_ = std::acosh(al);
    grp.circumradius_ = std::acosh(3.0 + 2.0 * std::sqrt(2.0));
    grp.build_neighbors(2.0 * grp.circumradius_ + 2.1);
    return grp;
  }

  /// Trivial group: the whole hyperbolic plane.
  static FuchsianGroup trivial() {
    FuchsianGroup grp;
    grp.circumradius_ = std::numeric_limits<double>::infinity();
    grp.inradius_ = std::numeric_limits<double>::infinity();
    grp.systole_ = std::numeric_limits<double>::infinity();
    return grp;
  }

  const std::vector<SL2R>& generators() const { return generators_; }
  int genus() const { return genus_; }
  cplx center() const { return {0.0, 1.0}; }
  double systole() const { return systole_; }
  double injectivity_radius() const { return systole_ / 2; }
  double inradius() const { return inradius_; }
  double circumradius() const { return circumradius_; }
  double area() const { return genus_ >= 2 ? 4.0 * pi * (genus_ - 1) : std::numeric_limits<double>::infinity(); }
  bool is_trivial() const { return generators_.empty(); }

  /// Largest separation for which surface_distance is exact.
  double exact_distance_limit() const { return exact_limit_; }

  /// Inside the Dirichlet domain: no generator translate of i is closer.
  bool in_domain(cplx z, double tol = 1e-10) const {
    const double d0 = hyp_distance(z, center());
    for (const auto& s : generators_)
      if (hyp_distance(z, s.apply(center())) < d0 - tol) return false;
    return true;
  }

  /// Greedy reduction: apply the generator that most decreases d(z, i) until
  /// none does. Returns the accumulated deck transformation.
  SL2R reduce_point(cplx& z, int* steps = nullptr, int cap = 1000) const {
    SL2R acc;
    int n = 0;
    double d0 = hyp_distance(z, center());
    while (true) {
      int best = -1;
      double bd = d0;
      for (std::size_t k = 0; k < generators_.size(); ++k) {
        const double d = hyp_distance(generators_[k].apply(z), center());
        if (d < bd - 1e-12) {
          bd = d;
          best = static_cast<int>(k);
        }
      }
      if (best < 0) break;
      if (++n > cap) fail(Errc::reduction_failure, "reduction exceeded " + std::to_string(cap) + " steps");
      z = generators_[best].apply(z);
      acc = generators_[best] * acc;
      d0 = bd;
    }
    if (steps) *steps = n;
    return acc.normalized();
  }

  UnitTangentFrame reduce(const UnitTangentFrame& f, int* steps = nullptr) const {
    cplx z = f.base();
    const SL2R s = reduce_point(z, steps);
    return {(s * f.g).normalized(), true};
  }

  /// Distance on the surface between two points of the domain; exact up to
  /// exact_distance_limit(), an upper bound beyond.
  double surface_distance(cplx z, cplx w) const {
    double best = hyp_distance(z, w);
    for (const auto& g : neighbors_) best = std::min(best, hyp_distance(z, g.apply(w)));
    return best;
  }

  /// The deck transformation bringing w closest to z, and the distance.
  std::pair<SL2R, double> closest_lift(cplx z, cplx w) const { return closest_lift(z, w, neighbors_); }

  static std::pair<SL2R, double> closest_lift(cplx z, cplx w, const std::vector<SL2R>& candidates) {
    SL2R arg;
    double best = hyp_distance(z, w);
    for (const auto& g : candidates) {
      const double d = hyp_distance(z, g.apply(w));
      if (d < best) {
        best = d;
        arg = g;
      }
    }
    return {arg, best};
  }

  /// Group elements (other than the identity) moving i at most `radius`.
  const std::vector<SL2R>& neighbors() const { return neighbors_; }

 private:
  void build_neighbors(double radius) {
    // Breadth-first over words, deduplicated by the image of i. Tiles met by
    // the segment from i to g.i stay within radius + rho_v of i, so the
    // search runs to that depth and keeps only the elements inside radius.
    const double search = radius + circumradius_ + 0.1;
    std::vector<SL2R> frontier{SL2R{}};
    std::map<std::pair<long long, long long>, std::vector<cplx>> seen;
    auto key = [](cplx p) {
      const cplx w = to_disk(p);
      return std::make_pair(std::llround(w.real() * 1e4), std::llround(w.imag() * 1e4));
    };
    auto visited = [&](cplx p) {
      const auto k = key(p);
      for (long long dx = -1; dx <= 1; ++dx)
        for (long long dy = -1; dy <= 1; ++dy) {
          auto it = seen.find({k.first + dx, k.second + dy});
          if (it == seen.end()) continue;
          for (const auto& q : it->second)
            if (std::abs(to_disk(p) - to_disk(q)) < 1e-7) return true;
        }
      seen[k].push_back(p);
      return false;
    };
    visited(center());
    while (!frontier.empty()) {
      std::vector<SL2R> next;
      for (const auto& w : frontier)
        for (const auto& s : generators_) {
          const SL2R g = (s * w).normalized();
          const cplx p = g.apply(center());
          const double d = hyp_distance(p, center());
          if (d > search || visited(p)) continue;
          if (d <= radius) neighbors_.push_back(g);
          next.push_back(g);
        }
      frontier = std::move(next);
    }
    std::sort(neighbors_.begin(), neighbors_.end(), [&](const SL2R& x, const SL2R& y) {
      return hyp_distance(x.apply(center()), center()) < hyp_distance(y.apply(center()), center());
    });
    // a lift within D of z in the domain moves i by at most 2 rho_v + D
    exact_limit_ = radius - 2.0 * circumradius_;
  }

  std::vector<SL2R> generators_;
  std::vector<SL2R> neighbors_;
  int genus_ = 0;
  double systole_ = 0, inradius_ = 0, circumradius_ = 0, exact_limit_ = 0;
};

// ---------------------------------------------------------------------------
// Flow.

inline UnitTangentFrame flow(const UnitTangentFrame& f, double t, const FuchsianGroup& grp) {
  require(std::abs(t) <= 1e6, Errc::invalid_argument, "|t| exceeds the precision budget");
  UnitTangentFrame out{(f.g * geodesic_step(t)).normalized(), false};
  if (grp.is_trivial()) return out;
  // long flows leave the domain far behind; reduce along the way
  if (std::abs(t) > 2.0) {
    const int pieces = static_cast<int>(std::ceil(std::abs(t) / 2.0));
    UnitTangentFrame cur = grp.reduce(f);
    const SL2R step = geodesic_step(t / pieces);
    for (int k = 0; k < pieces; ++k) cur = grp.reduce({(cur.g * step).normalized(), false});
    return cur;
  }
  return grp.reduce(out);
}

// ---------------------------------------------------------------------------
// Liouville sampling.

/// Seeded generator for sample block `stream`; blocks are independent so
/// sampling can be split across workers without changing the output.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x9e3779b9u};
  return std::mt19937_64(seq);
}

struct LiouvilleSample {
  std::vector<UnitTangentFrame> frames;
  std::size_t proposals = 0;  ///< box proposals drawn
  double box_area = 0.0;      ///< hyperbolic area of the proposal box

  /// Area of the domain estimated from the acceptance rate.
  double area_estimate() const { return box_area * static_cast<double>(frames.size()) / proposals; }
  double area_stderr() const {
    const double p = static_cast<double>(frames.size()) / proposals;
    return box_area * std::sqrt(p * (1 - p) / proposals);
  }
};

/// Uniform base point in the domain (rejection from the box around the
/// circumscribed ball, density 1/y^2) and uniform direction.
inline LiouvilleSample liouville_sample(const FuchsianGroup& grp, std::size_t n, std::uint64_t seed) {
  require(n >= 1, Errc::invalid_argument, "need at least one sample");
  require(!grp.is_trivial(), Errc::invalid_argument, "sampling needs a compact quotient");
  const double rv = grp.circumradius();
  const double xmax = std::sinh(rv), y0 = std::exp(-rv), y1 = std::exp(rv);
  LiouvilleSample out;
  out.box_area = 2.0 * xmax * (1.0 / y0 - 1.0 / y1);
  out.frames.reserve(n);
  constexpr std::size_t block = 1024;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::uint64_t stream = 0; out.frames.size() < n; ++stream) {
    auto rng = stream_rng(seed, stream);
    for (std::size_t k = 0; k < block && out.frames.size() < n; ++k) {
      const double x = -xmax + 2.0 * xmax * u(rng);
      const double inv_y = 1.0 / y0 - u(rng) * (1.0 / y0 - 1.0 / y1);
      const double theta = two_pi * u(rng);
      ++out.proposals;
      const cplx z(x, 1.0 / inv_y);
      if (!grp.in_domain(z, 0.0)) continue;
      auto f = UnitTangentFrame::at(z, theta);
      f.reduced = true;
      out.frames.push_back(f);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Surface observables.

/// b(d(x, x0)/delta), times b(angle/delta) for the microlocalized variant where
/// angle is measured against the reference direction at x0 transported along
/// the shortest geodesic.
class SurfaceObservable {
 public:
  struct Spec {
    Localization kind = Localization::localized;
    cplx x0{0.0, 1.0};
    double theta0 = pi / 2;  ///< reference direction at x0
    double delta = 0.5;
    BumpProfile profile = BumpProfile::smooth();
  };

  static constexpr double scale_cap = 0.5;

  SurfaceObservable(const FuchsianGroup& grp, Spec spec) : grp_(&grp), spec_(spec) {
    require(spec.delta > 0.0, Errc::invalid_scale, "delta must be positive");
    if (spec.delta > scale_cap || spec.delta > grp.injectivity_radius())
      fail(Errc::scale_exceeds_injectivity, "delta exceeds the injectivity cap");
    ref_ = UnitTangentFrame::at(spec.x0, spec.theta0).g;
    // lifts of x0 that can come within delta of a point of the domain
    const double reach = grp.circumradius() + spec.delta + 1e-9;
    for (const auto& g : grp.neighbors())
      if (hyp_distance(grp.center(), g.apply(spec.x0)) <= reach) lifts_.push_back(g);
  }

  const Spec& spec() const { return spec_; }

  double operator()(const UnitTangentFrame& f) const {
    const cplx z = f.reduced || grp_->is_trivial() ? f.base() : grp_->reduce(f).base();
    const auto [lift, d] = FuchsianGroup::closest_lift(z, spec_.x0, lifts_);
    if (d >= spec_.delta) return 0.0;
    double v = spec_.profile(d / spec_.delta);
    if (spec_.kind == Localization::microlocalized) {
      const UnitTangentFrame g = f.reduced || grp_->is_trivial() ? f : grp_->reduce(f);
      v *= spec_.profile(relative_angle(g, lift) / spec_.delta);
    }
    return v;
  }

  /// Angle of f against the transported reference frame, in (-pi, pi].
  double relative_angle(const UnitTangentFrame& f, const SL2R& lift) const {
    const SL2R h = ((lift * ref_).inverse() * f.g).normalized();
    const cplx w = h.apply(cplx(0, 1));
    const double rho = hyp_distance(cplx(0, 1), w);
    const double phi1 = rho > 1e-12 ? direction_towards(cplx(0, 1), w) - pi / 2 : 0.0;
    const UnitTangentFrame along{rotation(phi1) * geodesic_step(rho), false};
    const UnitTangentFrame hf{h, false};
    return wrap_angle(hf.angle() - along.angle() + phi1);
  }

  /// Exact Liouville mean from the radial integral 2 pi int b(r/delta) sinh r dr.
  double mean() const {
    const int n = 4000;
    const double dr = spec_.delta / n;
    double s = 0.0;
    for (int k = 0; k < n; ++k) {
      const double r = (k + 0.5) * dr;
      s += spec_.profile(r / spec_.delta) * std::sinh(r);
    }
    double m = two_pi * s * dr / grp_->area();
    if (spec_.kind == Localization::microlocalized) m *= spec_.delta * spec_.profile.integral() / two_pi;
    return m;
  }

 private:
  const FuchsianGroup* grp_;
  Spec spec_;
  SL2R ref_;
  std::vector<SL2R> lifts_;
};

/// ||f||_gamma estimate for an observable of the base point: sup plus the
/// largest difference quotient over a polar lattice around `center` (radius
/// `extent`) paired with geodesic partners in eight directions at dyadic
/// distances from extent/resolution to extent. A lower bound on the norm.
template <class F>
double surface_holder_norm(const F& f, double gamma, cplx center, double extent, int resolution = 64) {
  require(gamma > 0.0 && gamma < 1.0, Errc::invalid_gamma, "gamma must lie in (0, 1)");
  require(resolution >= 8, Errc::invalid_argument, "resolution must be at least 8");
  const int n_r = resolution, n_th = 16;
  double sup = 0.0, semi = 0.0;
  for (int i = 0; i <= n_r; ++i)
    for (int j = 0; j < n_th; ++j) {
      const double r = extent * i / n_r;
      const double th = two_pi * (j + 0.5 * (i % 2)) / n_th;
      const UnitTangentFrame p = UnitTangentFrame::at(
          (UnitTangentFrame::at(center, th).g * geodesic_step(r)).apply(cplx(0, 1)), 0.0);
      const double fp = f(p);
      sup = std::max(sup, std::abs(fp));
      for (int k = 0; k < 8; ++k) {
        const UnitTangentFrame dir = UnitTangentFrame::at(p.base(), two_pi * k / 8);
        for (double s = extent / n_r; s <= extent * (1 + 1e-12); s *= 2) {
          const UnitTangentFrame q{(dir.g * geodesic_step(s)).normalized(), false};
          semi = std::max(semi, std::abs(fp - f(UnitTangentFrame::at(q.base(), 0.0))) / std::pow(s, gamma));
        }
      }
    }
  return sup + semi;
}

// ---------------------------------------------------------------------------
// Monte Carlo statistics.

struct McCorrelation {
  std::vector<double> times;
  std::vector<double> values;  ///< C(t)
  std::vector<double> stderr_;  ///< bootstrap standard errors
  double amplitude = 0.0;
  double rate = 0.0;
  double r2 = 0.0;
  std::vector<int> fit_range;
  bool signal_below_noise = false;

  nlohmann::json to_json() const {
    return {{"t", times}, {"C", values}, {"stderr", stderr_}, {"amplitude", amplitude}, {"rate", rate},
            {"r2", r2}, {"fit_range", fit_range}, {"signal_below_noise", signal_below_noise}};
  }

  void write_csv(const std::string& path) const {
    std::ofstream os(path);
    require(static_cast<bool>(os), Errc::io, "cannot open " + path);
    os << "t,C,stderr\n" << std::setprecision(17);
    for (std::size_t i = 0; i < times.size(); ++i) os << times[i] << ',' << values[i] << ',' << stderr_[i] << '\n';
  }
};

struct McOptions {
  std::size_t samples = 10000;
  std::uint64_t seed = 1;
  double dt = 0.1;  ///< time grid (correlations) or quadrature step (averages)
  int bootstrap = 200;
};

namespace detail {

/// Bootstrap resample indices shared across statistics.
inline std::vector<std::vector<std::uint32_t>> bootstrap_indices(std::size_t n, int reps, std::uint64_t seed) {
  auto rng = stream_rng(seed, 0xb007u);
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(n - 1));
  std::vector<std::vector<std::uint32_t>> out(reps, std::vector<std::uint32_t>(n));
  for (auto& v : out)
    for (auto& i : v) i = pick(rng);
  return out;
}

inline double stddev(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= v.size();
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / (v.size() - 1));
}

}  // namespace detail

/// C(t) = mu(f . g o G_t) - mu(f) mu(g) on t = 0, dt, ..., tmax with
/// bootstrap errors and a weighted exponential fit of |C| over the leading
/// run of times where |C| exceeds three standard errors.
template <class F, class G>
McCorrelation mixing_fit(const F& f, const G& g, const FuchsianGroup& grp, double tmax, const McOptions& opt = {}) {
  require(tmax > 0.0 && tmax <= 20.0, Errc::invalid_argument, "tmax must lie in (0, 20]");
  require(opt.samples >= 100, Errc::invalid_argument, "too few samples");
  const auto sample = liouville_sample(grp, opt.samples, opt.seed);
  const std::size_t n = sample.frames.size();
  const int steps = static_cast<int>(std::floor(tmax / opt.dt + 1e-9));
  std::vector<double> fv(n);
  std::vector<std::vector<double>> gv(steps + 1, std::vector<double>(n));
  for (std::size_t s = 0; s < n; ++s) {
    UnitTangentFrame cur = sample.frames[s];
    fv[s] = f(cur);
    const SL2R step = geodesic_step(opt.dt);
    for (int k = 0; k <= steps; ++k) {
      if (k > 0) cur = grp.reduce({(cur.g * step).normalized(), false});
      gv[k][s] = g(cur);
    }
  }
  const auto boot = detail::bootstrap_indices(n, opt.bootstrap, opt.seed);
  auto corr = [&](const std::vector<double>& gk, const std::vector<std::uint32_t>* idx) {
    double sfg = 0, sf = 0, sg = 0;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t i = idx ? (*idx)[s] : s;
      sfg += fv[i] * gk[i];
      sf += fv[i];
      sg += gk[i];
    }
    return sfg / n - (sf / n) * (sg / n);
  };
  McCorrelation out;
  for (int k = 0; k <= steps; ++k) {
    out.times.push_back(k * opt.dt);
    out.values.push_back(corr(gv[k], nullptr));
    std::vector<double> reps;
    for (const auto& idx : boot) reps.push_back(corr(gv[k], &idx));
    out.stderr_.push_back(detail::stddev(reps));
  }
  std::vector<double> t, y, w;
  for (int k = 0; k <= steps; ++k) {
    if (std::abs(out.values[k]) <= 3.0 * out.stderr_[k]) break;
    t.push_back(out.times[k]);
    y.push_back(std::log(std::abs(out.values[k])));
    const double rel = out.stderr_[k] / std::abs(out.values[k]);
    w.push_back(1.0 / (rel * rel + 1e-12));
    out.fit_range.push_back(k);
  }
  if (t.size() < 3) {
    out.signal_below_noise = true;
    return out;
  }
  const auto line = fit_line(t, y, w);
  out.amplitude = std::exp(line.intercept);
  out.rate = -line.slope;
  out.r2 = line.r2;
  return out;
}

struct McErgodicityRate {
  std::vector<double> horizons;
  std::vector<double> norms;
  std::vector<double> norm_stderr;
  double exponent = 0.0;  ///< p in ||Av_T f|| ~ T^-p
  double ci_low = 0.0, ci_high = 0.0;
  double r2 = 0.0;

  double ci_width() const { return ci_high - ci_low; }

  nlohmann::json to_json() const {
    return {{"T", horizons}, {"norm", norms}, {"stderr", norm_stderr}, {"exponent", exponent},
            {"ci", {ci_low, ci_high}}, {"r2", r2}};
  }
};

/// ||Av_T f||_{L2} from trajectory quadrature (trapezoid, step dt) over
/// Liouville-sampled initial frames; f must have zero mean. The exponent CI
/// is the 2.5..97.5 percentile range of bootstrap refits.
template <class F>
McErgodicityRate ergodicity_rate_mc(const F& f, const FuchsianGroup& grp, std::vector<double> horizons,
                                    const McOptions& opt = {}) {
  require(horizons.size() >= 3, Errc::fit_degenerate, "need at least three horizons");
  std::sort(horizons.begin(), horizons.end());
  require(horizons.front() > 0.0 && horizons.back() <= 1000.0, Errc::invalid_argument, "horizons must lie in (0, 1000]");
  const double dt = std::min(opt.dt, 0.05);
  const auto sample = liouville_sample(grp, opt.samples, opt.seed);
  const std::size_t n = sample.frames.size();
  std::vector<std::vector<double>> sq(horizons.size(), std::vector<double>(n));
  for (std::size_t s = 0; s < n; ++s) {
    UnitTangentFrame cur = sample.frames[s];
    double prev = f(cur), integral = 0.0, t = 0.0;
    std::size_t next = 0;
    while (next < horizons.size()) {
      const double h = std::min(dt, horizons[next] - t);
      cur = grp.reduce({(cur.g * geodesic_step(h)).normalized(), false});
      const double v = f(cur);
      integral += 0.5 * h * (prev + v);
      prev = v;
      t += h;
      if (t >= horizons[next] - 1e-12) {
        const double av = integral / horizons[next];
        sq[next][s] = av * av;
        ++next;
      }
    }
  }
  auto norms_for = [&](const std::vector<std::uint32_t>* idx) {
    std::vector<double> out;
    for (const auto& col : sq) {
      double acc = 0.0;
      for (std::size_t s = 0; s < n; ++s) acc += col[idx ? (*idx)[s] : s];
      out.push_back(std::sqrt(acc / n));
    }
    return out;
  };
  McErgodicityRate out;
  out.horizons = horizons;
  out.norms = norms_for(nullptr);
  const auto fit = fit_loglog(out.horizons, out.norms);
  out.exponent = -fit.slope;
  out.r2 = fit.r2;
  const auto boot = detail::bootstrap_indices(n, opt.bootstrap, opt.seed + 1);
  std::vector<double> exps;
  std::vector<std::vector<double>> norm_reps(horizons.size());
  for (const auto& idx : boot) {
    const auto nb = norms_for(&idx);
    for (std::size_t k = 0; k < nb.size(); ++k) norm_reps[k].push_back(nb[k]);
    exps.push_back(-fit_loglog(out.horizons, nb).slope);
  }
  for (const auto& r : norm_reps) out.norm_stderr.push_back(detail::stddev(r));
  std::sort(exps.begin(), exps.end());
  out.ci_low = exps[static_cast<std::size_t>(0.025 * (exps.size() - 1))];
  out.ci_high = exps[static_cast<std::size_t>(std::ceil(0.975 * (exps.size() - 1)))];
  return out;
}

// ---------------------------------------------------------------------------
// Export.

inline void write_frames_csv(std::span<const UnitTangentFrame> frames, const std::string& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), Errc::io, "cannot open " + path);
  os << "a,b,c,d\n" << std::setprecision(17);
  for (const auto& f : frames) os << f.g.a << ',' << f.g.b << ',' << f.g.c << ',' << f.g.d << '\n';
}

/// Trajectory samples (t, re_base, im_base, angle) at spacing dt.
inline void write_trajectory_csv(const UnitTangentFrame& start, const FuchsianGroup& grp, double tmax, double dt,
                                 const std::string& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), Errc::io, "cannot open " + path);
  os << "t,re_base,im_base,angle\n" << std::setprecision(17);
  UnitTangentFrame cur = grp.is_trivial() ? start : grp.reduce(start);
  const int steps = static_cast<int>(std::floor(tmax / dt + 1e-9));
  for (int k = 0; k <= steps; ++k) {
    if (k > 0) cur = flow(cur, dt, grp);
    const cplx z = cur.base();
    os << k * dt << ',' << z.real() << ',' << z.imag() << ',' << cur.angle() << '\n';
  }
}

}  // namespace qe
