#pragma once

// Greedy maximal separated sets on the Bolza surface and on the flat torus,
// with cover, containment and overlap certificates.
//
// A space exposes a chart of the universal cover (upper half-plane or R^2),
// the images of a domain point that reach near the domain, and a Euclidean
// bucket radius bounding every ball of the chart metric.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "qe/core.hpp"
#include "qe/hyperbolic.hpp"

namespace qe {

/// Radical inverse of k in base b (Halton coordinate).
inline double radical_inverse(std::uint64_t k, unsigned base) {
  double inv = 1.0 / base, f = inv, out = 0.0;
  while (k > 0) {
    out += f * static_cast<double>(k % base);
    k /= base;
    f *= inv;
  }
  return out;
}

/// Intersection points of two Euclidean circles.
inline std::vector<cplx> circle_intersections(cplx c1, double r1, cplx c2, double r2) {
  const double d = std::abs(c2 - c1);
  if (d == 0.0 || d > r1 + r2 || d < std::abs(r1 - r2)) return {};
  const double a = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d);
  const double h2 = r1 * r1 - a * a;
  const cplx u = (c2 - c1) / d;
  const cplx m = c1 + a * u;
  if (h2 <= 0.0) return {m};
  const double h = std::sqrt(h2);
  return {m + h * cplx(0, 1) * u, m - h * cplx(0, 1) * u};
}

// ---------------------------------------------------------------------------
// Spaces.

class BolzaSpace {
 public:
  explicit BolzaSpace(const FuchsianGroup& grp) : grp_(&grp) {
    require(!grp.is_trivial(), Errc::invalid_argument, "covering needs a compact quotient");
  }

  std::string name() const { return "bolza"; }
  double volume() const { return grp_->area(); }
  double max_radius() const { return 0.5; }
  double diameter() const { return 2.0 * grp_->circumradius(); }
  double ball_volume(double rho) const { return two_pi * (std::cosh(rho) - 1.0); }

  cplx reference_point() const { return grp_->center(); }
  double plane_distance(cplx a, cplx b) const { return hyp_distance(a, b); }
  cplx chart(cplx z) const { return to_disk(z); }

  /// Euclidean radius in the disk chart containing the hyperbolic R-ball at z.
  double chart_radius(cplx z, double R) const {
    const double r0 = hyp_distance(z, grp_->center());
    return std::tanh((r0 + R) / 2) - std::tanh((r0 - R) / 2);
  }

  cplx reduce(cplx z) const {
    grp_->reduce_point(z);
    return z;
  }

  /// Images of a domain point within R of the domain.
  std::vector<cplx> images(cplx p, double R) const {
    require(R <= grp_->exact_distance_limit(), Errc::invalid_argument, "query radius beyond the exact range");
    const double reach = grp_->circumradius() + R;
    std::vector<cplx> out{p};
    for (const auto& g : grp_->neighbors()) {
      const cplx q = g.apply(p);
      if (hyp_distance(q, grp_->center()) <= reach) out.push_back(q);
    }
    return out;
  }

  /// Hyperbolic circle as a Euclidean circle in the upper half-plane.
  std::pair<cplx, double> euclidean_circle(cplx c, double R) const {
    return {cplx(c.real(), c.imag() * std::cosh(R)), c.imag() * std::sinh(R)};
  }
  cplx circle_point(cplx c, double R) const { return cplx(c.real(), c.imag() * std::exp(R)); }

  template <class Rng>
  cplx sample(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    while (true) {
      const double a = u(rng);
      const cplx z = from_box(a, u(rng));
      if (grp_->in_domain(z, 0.0)) return z;
    }
  }

  /// Low-discrepancy points of the domain: Halton (2, 3) pushed to the
  /// hyperbolic measure on the circumscribed box, kept inside the domain.
  std::vector<cplx> quasi_grid(std::size_t n) const {
    std::vector<cplx> out;
    out.reserve(n);
    for (std::uint64_t k = 1; out.size() < n; ++k) {
      const cplx z = from_box(radical_inverse(k, 2), radical_inverse(k, 3));
      if (grp_->in_domain(z, 0.0)) out.push_back(z);
    }
    return out;
  }

  nlohmann::json point_json(cplx z) const { return {z.real(), z.imag()}; }

 private:
  cplx from_box(double u, double v) const {
    const double rv = grp_->circumradius();
    const double xmax = std::sinh(rv), y0 = std::exp(-rv), y1 = std::exp(rv);
    const double inv_y = 1.0 / y0 - v * (1.0 / y0 - 1.0 / y1);
    return {-xmax + 2.0 * xmax * u, 1.0 / inv_y};
  }

  const FuchsianGroup* grp_;
};

/// Unit square with periodic Euclidean metric.
class FlatTorusSpace {
 public:
  std::string name() const { return "flat-torus"; }
  double volume() const { return 1.0; }
  double max_radius() const { return std::numeric_limits<double>::infinity(); }
  double diameter() const { return std::sqrt(0.5); }
  double ball_volume(double rho) const { return rho <= 0.5 ? pi * rho * rho : 1.0; }

  cplx reference_point() const { return {0.5, 0.5}; }
  double plane_distance(cplx a, cplx b) const { return std::abs(a - b); }
  cplx chart(cplx z) const { return z; }
  double chart_radius(cplx, double R) const { return R; }

  cplx reduce(cplx z) const {
    auto m = [](double v) {
      v -= std::floor(v);
      return v >= 1.0 ? 0.0 : v;
    };
    return {m(z.real()), m(z.imag())};
  }

  std::vector<cplx> images(cplx p, double R) const {
    const int m = static_cast<int>(std::ceil(R)) + 1;
    std::vector<cplx> out{p};
    for (int a = -m; a <= m; ++a)
      for (int b = -m; b <= m; ++b) {
        if (a == 0 && b == 0) continue;
        const cplx q = p + cplx(a, b);
        const double dx = std::max({0.0, -q.real(), q.real() - 1.0});
        const double dy = std::max({0.0, -q.imag(), q.imag() - 1.0});
        if (std::hypot(dx, dy) <= R) out.push_back(q);
      }
    return out;
  }

  std::pair<cplx, double> euclidean_circle(cplx c, double R) const { return {c, R}; }
  cplx circle_point(cplx c, double R) const { return c + R; }

  template <class Rng>
  cplx sample(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double x = u(rng);
    return {x, u(rng)};
  }

  std::vector<cplx> quasi_grid(std::size_t n) const {
    std::vector<cplx> out;
    out.reserve(n);
    for (std::uint64_t k = 1; k <= n; ++k) out.emplace_back(radical_inverse(k, 2), radical_inverse(k, 3));
    return out;
  }

  nlohmann::json point_json(cplx z) const { return {z.real(), z.imag()}; }
};

// ---------------------------------------------------------------------------
// Spatial index over center images.

template <class Space>
class CenterIndex {
 public:
  /// `reach`: largest query radius that will be used; `typical`: the radius
  /// most queries use, which sets the bucket size.
  CenterIndex(const Space& space, double reach, double typical) : space_(&space), reach_(reach) {
    cell_ = std::max(space.chart_radius(space.reference_point(), std::min(typical, reach)), 1e-9);
  }

  std::size_t size() const { return centers_.size(); }
  const std::vector<cplx>& centers() const { return centers_; }

  void insert(cplx p) {
    const int id = static_cast<int>(centers_.size());
    centers_.push_back(p);
    for (const cplx& q : space_->images(p, reach_)) {
      const cplx c = space_->chart(q);
      cells_[key(cell_of(c.real()), cell_of(c.imag()))].push_back({q, id});
    }
  }

  /// Calls fn(id, image, distance) for every center image within R of the
  /// domain point z.
  template <class Fn>
  void for_each_within(cplx z, double R, Fn&& fn) const {
    const cplx c = space_->chart(z);
    const double rb = space_->chart_radius(z, R);
    const long long x0 = cell_of(c.real() - rb), x1 = cell_of(c.real() + rb);
    const long long y0 = cell_of(c.imag() - rb), y1 = cell_of(c.imag() + rb);
    for (long long ix = x0; ix <= x1; ++ix)
      for (long long iy = y0; iy <= y1; ++iy) {
        auto it = cells_.find(key(ix, iy));
        if (it == cells_.end()) continue;
        for (const auto& e : it->second) {
          const double d = space_->plane_distance(z, e.image);
          if (d <= R) fn(e.id, e.image, d);
        }
      }
  }

  /// Distance to the nearest center (infinity if none within R).
  double nearest(cplx z, double R) const {
    double best = std::numeric_limits<double>::infinity();
    for_each_within(z, R, [&](int, cplx, double d) { best = std::min(best, d); });
    return best;
  }

  /// Number of distinct centers within R of z.
  int count_within(cplx z, double R) const {
    std::vector<int> ids;
    for_each_within(z, R, [&](int id, cplx, double) { ids.push_back(id); });
    std::sort(ids.begin(), ids.end());
    return static_cast<int>(std::unique(ids.begin(), ids.end()) - ids.begin());
  }

 private:
  struct Entry {
    cplx image;
    int id;
  };
  long long cell_of(double v) const { return static_cast<long long>(std::floor(v / cell_)); }
  static long long key(long long x, long long y) { return (x << 32) ^ (y & 0xffffffffLL); }

  const Space* space_;
  double reach_;
  double cell_ = 1.0;
  std::vector<cplx> centers_;
  std::unordered_map<long long, std::vector<Entry>> cells_;
};

// ---------------------------------------------------------------------------
// Greedy cover.

struct CoverOptions {
  std::size_t testgrid = 10000;
  std::size_t candidates = 0;  ///< random candidate stream length; 0 picks spacing r/8
};

struct CoverReport {
  std::string space;
  double radius = 0.0;
  std::vector<cplx> centers;
  std::size_t count = 0;
  double c1_hat = 0.0;          ///< N r^2
  int c2_hat = 0;               ///< sup over x of #centers within 2r
  bool cover_ok = false;        ///< test grid within r of a center
  bool containment_ok = false;  ///< test grid within 2r/3 of a center
  std::size_t testgrid_size = 0;
  double min_separation = 0.0;
  double grid_covering_radius = 0.0;  ///< max over the test grid of the nearest-center distance
  double volume_ratio = 0.0;          ///< N Vol(B(r/3)) / Vol(M)
  std::size_t refinement_insertions = 0;
  std::size_t arrangement_vertices = 0;

  nlohmann::json to_json() const {
    nlohmann::json c = nlohmann::json::array();
    for (const auto& z : centers) c.push_back({z.real(), z.imag()});
    return {{"space", space},
            {"radius", radius},
            {"count", count},
            {"c1_hat", c1_hat},
            {"c2_hat", c2_hat},
            {"cover_ok", cover_ok},
            {"containment_ok", containment_ok},
            {"testgrid_size", testgrid_size},
            {"min_separation", min_separation},
            {"grid_covering_radius", grid_covering_radius},
            {"volume_ratio", volume_ratio},
            {"refinement_insertions", refinement_insertions},
            {"arrangement_vertices", arrangement_vertices},
            {"centers", c}};
  }
};

namespace detail {

/// Points where the circles of radius R about center `id` meet other center
/// circles, plus one point on the circle itself; all reduced to the domain.
template <class Space>
std::vector<cplx> arrangement_points(const Space& space, const CenterIndex<Space>& index, int id, double R) {
  const cplx c = index.centers()[id];
  const auto [e1, r1] = space.euclidean_circle(c, R);
  std::vector<cplx> out{space.reduce(space.circle_point(c, R))};
  index.for_each_within(c, 2.0 * R, [&](int other, cplx image, double d) {
    if (other == id && d < 1e-12) return;
    const auto [e2, r2] = space.euclidean_circle(image, R);
    for (const cplx& p : circle_intersections(e1, r1, e2, r2)) out.push_back(space.reduce(p));
  });
  return out;
}

}  // namespace detail

/// Maximal (2r/3)-separated set by greedy insertion over a seeded random
/// candidate stream, completed by insertion at uncovered arrangement vertices
/// so that the (2r/3)-balls cover the whole space, not only the test grid.
template <class Space>
CoverReport greedy_cover(const Space& space, double r, std::uint64_t seed, const CoverOptions& opt = {}) {
  require(r > 0.0 && r <= space.max_radius(), Errc::invalid_scale,
          "radius must lie in (0, " + std::to_string(space.max_radius()) + "]");
  require(opt.testgrid >= 10000, Errc::invalid_argument, "test grid needs at least 10^4 points");
  const double sep = 2.0 * r / 3.0;
  const double vol = space.volume();
  std::size_t n_cand = opt.candidates;
  if (n_cand == 0) n_cand = static_cast<std::size_t>(std::ceil(64.0 * vol / (r * r)));
  if (std::sqrt(vol / static_cast<double>(n_cand)) > r / 6.0)
    fail(Errc::grid_too_coarse, "candidate spacing exceeds r/6");

  CenterIndex<Space> index(space, 4.0 * r + 1e-6, 2.0 * r / 3.0);
  auto rng = stream_rng(seed, 0xc0fe);
  for (std::size_t k = 0; k < n_cand; ++k) {
    const cplx p = space.sample(rng);
    if (index.nearest(p, sep) >= sep) index.insert(p);
  }

  // complete to a cover by the closed (sep + eps)-balls
  CoverReport rep;
  const double eps = 1e-9 * std::max(r, 1e-3);
  std::vector<int> queue(index.size());
  for (std::size_t k = 0; k < queue.size(); ++k) queue[k] = static_cast<int>(k);
  for (std::size_t head = 0; head < queue.size(); ++head)
    for (const cplx& p : detail::arrangement_points(space, index, queue[head], sep + eps))
      if (index.nearest(p, sep) >= sep) {
        queue.push_back(static_cast<int>(index.size()));
        index.insert(p);
        ++rep.refinement_insertions;
      }

  rep.space = space.name();
  rep.radius = r;
  rep.centers = index.centers();
  rep.count = rep.centers.size();
  rep.c1_hat = static_cast<double>(rep.count) * r * r;
  rep.volume_ratio = static_cast<double>(rep.count) * space.ball_volume(r / 3.0) / vol;

  rep.min_separation = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < rep.count; ++k)
    index.for_each_within(rep.centers[k], 2.0 * r, [&](int id, cplx, double d) {
      if (id != static_cast<int>(k) || d > 1e-12) rep.min_separation = std::min(rep.min_separation, d);
    });

  const auto grid = space.quasi_grid(opt.testgrid);
  rep.testgrid_size = grid.size();
  rep.cover_ok = rep.containment_ok = true;
  const double R2 = 2.0 * r + 1e-9 * std::max(r, 1e-3);
  for (const cplx& x : grid) {
    const double d = index.nearest(x, 2.0 * r);
    rep.grid_covering_radius = std::max(rep.grid_covering_radius, d);
    if (d > r) rep.cover_ok = false;
    if (d > sep) rep.containment_ok = false;
    rep.c2_hat = std::max(rep.c2_hat, index.count_within(x, R2));
  }
  // the count is constant on the cells of the 2r-circle arrangement, and every
  // cell closure holds a vertex or a point of a bounding circle
  for (std::size_t k = 0; k < rep.count; ++k)
    for (const cplx& p : detail::arrangement_points(space, index, static_cast<int>(k), 2.0 * r)) {
      ++rep.arrangement_vertices;
      rep.c2_hat = std::max(rep.c2_hat, index.count_within(p, R2));
    }
  return rep;
}

struct CoverCertificate {
  std::size_t tested = 0;
  int max_count = 0;          ///< most centers within 2r of a test point
  double max_nearest = 0.0;   ///< largest distance to the nearest center
  nlohmann::json to_json() const {
    return {{"tested", tested}, {"max_count", max_count}, {"max_nearest", max_nearest}};
  }
};

/// Random test balls B(x, r): (1) at most c2_hat centers within 2r of x,
/// (2) some center within 2r/3 of x, so B(x_i, r/3) lies inside B(x, r).
template <class Space>
CoverCertificate verify_properties(const CoverReport& rep, const Space& space, std::size_t balls, std::uint64_t seed) {
  require(rep.count > 0, Errc::invalid_argument, "empty cover");
  const double r = rep.radius;
  CenterIndex<Space> index(space, 2.0 * r + 1e-6, 2.0 * r / 3.0);
  for (const cplx& c : rep.centers) index.insert(c);
  auto rng = stream_rng(seed, 0x7e57);
  CoverCertificate cert;
  for (std::size_t k = 0; k < balls; ++k) {
    const cplx x = space.sample(rng);
    const int n = index.count_within(x, 2.0 * r);
    const double d = index.nearest(x, 2.0 * r);
    ++cert.tested;
    cert.max_count = std::max(cert.max_count, n);
    cert.max_nearest = std::max(cert.max_nearest, d);
    auto where = [&] {
      return " at (" + std::to_string(x.real()) + ", " + std::to_string(x.imag()) + ")";
    };
    if (n > rep.c2_hat)
      fail(Errc::certificate_failure, std::to_string(n) + " centers within 2r exceed c2_hat" + where());
    if (d > 2.0 * r / 3.0) fail(Errc::certificate_failure, "no center within 2r/3" + where());
  }
  return cert;
}

inline void write_cover_sweep_csv(const std::vector<CoverReport>& reps, const std::string& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), Errc::io, "cannot open " + path);
  os << "r,N,c1_hat,c2_hat\n" << std::setprecision(17);
  for (const auto& r : reps) os << r.radius << ',' << r.count << ',' << r.c1_hat << ',' << r.c2_hat << '\n';
}

}  // namespace qe
