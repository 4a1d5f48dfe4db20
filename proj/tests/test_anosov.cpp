#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "qe/anosov.hpp"

using namespace qe;

namespace {

TorusSymbol random_symbol(int k, std::uint64_t seed, bool real = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  TorusSymbol a(k);
  for (int k1 = -k; k1 <= k; ++k1)
    for (int k2 = -k; k2 <= k; ++k2) a.set({k1, k2}, {g(rng), g(rng)});
  if (real) {
    TorusSymbol r = a + a.conj();
    return r;
  }
  return a;
}

TorusSymbol bump(double x0, double delta, int k) {
  DeltaSymbolSpec s;
  s.x0 = x0;
  s.scale = delta;
  return make_delta_symbol(s, k);
}

// Pointwise composition sampled on a lattice and transformed back.
TorusSymbol composition_oracle(const TorusSymbol& a, const AnosovMap& g, int t, int m, int k_out) {
  std::vector<cplx> v(static_cast<std::size_t>(m) * m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      PhasePoint p{double(i) / m, double(j) / m};
      for (int s = 0; s < t; ++s) {
        const double x = p.x, xi = p.xi;
        const auto& A = g.matrix();
        p = {wrap_unit(A[0][0] * x + A[0][1] * xi), wrap_unit(A[1][0] * x + A[1][1] * xi)};
      }
      v[i * m + j] = a(p.x, p.xi);
    }
  return project_grid(v, m, k_out).symbol;
}

}  // namespace

TEST(AnosovMap, Validation) {
  EXPECT_THROW(AnosovMap({{{2, 1}, {1, 2}}}), Error);   // det 3
  EXPECT_THROW(AnosovMap({{{1, 1}, {0, 1}}}), Error);   // parabolic
  EXPECT_THROW(AnosovMap(default_cat_matrix, -0.1), Error);
  const AnosovMap cat;
  EXPECT_NEAR(cat.lyapunov(), std::log(2 + std::sqrt(3.0)), 1e-15);
  EXPECT_TRUE(cat.quantizable());
  EXPECT_FALSE(AnosovMap({{{2, 1}, {1, 1}}}).quantizable());
}

TEST(AnosovMap, ForwardBackwardInverse) {
  for (double eps : {0.0, 0.05}) {
    const AnosovMap g(default_cat_matrix, eps);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u;
    for (int i = 0; i < 100; ++i) {
      const PhasePoint p{u(rng), u(rng)};
      const PhasePoint q = g.backward(g.forward(p));
      EXPECT_NEAR(periodic_delta(q.x - p.x), 0.0, 1e-12);
      EXPECT_NEAR(periodic_delta(q.xi - p.xi), 0.0, 1e-12);
    }
  }
}

TEST(AnosovMap, JacobianMatchesFiniteDifference) {
  const AnosovMap g(default_cat_matrix, 0.07);
  const PhasePoint p{0.31, 0.62};
  const auto j = g.jacobian(p);
  const double e = 1e-7;
  const auto fx = g.forward({p.x + e, p.xi}), bx = g.forward({p.x - e, p.xi});
  const auto fy = g.forward({p.x, p.xi + e}), by = g.forward({p.x, p.xi - e});
  EXPECT_NEAR(periodic_delta(fx.x - bx.x) / (2 * e), j[0], 1e-6);
  EXPECT_NEAR(periodic_delta(fy.x - by.x) / (2 * e), j[1], 1e-6);
  EXPECT_NEAR(periodic_delta(fx.xi - bx.xi) / (2 * e), j[2], 1e-6);
  EXPECT_NEAR(periodic_delta(fy.xi - by.xi) / (2 * e), j[3], 1e-6);
}

TEST(Pullback, IdentityAtTimeZero) {
  const auto a = random_symbol(3, 2);
  EXPECT_EQ(pullback(a, AnosovMap(), 0).symbol, a);
}

TEST(Pullback, SingleModeMatchesComposition) {
  const AnosovMap cat;
  const auto p = pullback(TorusSymbol::mode(1, 0), cat, 1).symbol;
  EXPECT_EQ(p.size(), 1u);
  EXPECT_EQ(p.coeff({2, 1}), cplx(1.0));
  const auto oracle = composition_oracle(TorusSymbol::mode(1, 0), cat, 1, 16, 7);
  EXPECT_LT(coefficient_distance(p, oracle), 1e-12);
  const auto a = random_symbol(2, 3);
  EXPECT_LT(coefficient_distance(pullback(a, cat, 2).symbol, composition_oracle(a, cat, 2, 128, 63)), 1e-10);
}

TEST(Pullback, InverseAndMeasurePreservation) {
  const AnosovMap cat;
  const auto a = random_symbol(3, 4);
  const auto fwd = pullback(a, cat, 1).symbol;
  EXPECT_LT(coefficient_distance(pullback(fwd, cat, -1).symbol, a), 1e-12);
  for (int t : {-3, 2, 5}) {
    const auto p = pullback(a, cat, t).symbol;
    EXPECT_NEAR(p.l2_norm(), a.l2_norm(), 1e-12);
    EXPECT_EQ(p.mean(), a.mean());
  }
}

TEST(Pullback, BandwidthOverflow) {
  try {
    pullback(TorusSymbol::mode(1, 0), AnosovMap(), 9, {.bandwidth_out = 0, .bandwidth_cap = 1 << 14});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::bandwidth_overflow);
  }
}

TEST(Pullback, PerturbedMatchesPointwiseComposition) {
  const AnosovMap g(default_cat_matrix, 0.05);
  const auto a = bump(0.4, 0.5, 8);
  const auto p = pullback(a, g, 1, {.bandwidth_out = 60});
  EXPECT_LT(p.residual, 1e-6);
  EXPECT_FALSE(p.truncation_warning);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u;
  for (int i = 0; i < 50; ++i) {
    const PhasePoint z{u(rng), u(rng)};
    const PhasePoint w = g.forward(z);
    EXPECT_NEAR(std::abs(p.symbol(z.x, z.xi) - a(w.x, w.xi)), 0.0, 1e-5);
  }
  EXPECT_NEAR(p.symbol.mean().real(), a.mean().real(), 1e-10);
  EXPECT_NEAR(p.symbol.l2_norm(), a.l2_norm(), 1e-6);
  // A narrow target band loses mass and raises the warning.
  const auto coarse = pullback(a, g, 3, {.bandwidth_out = 4});
  EXPECT_TRUE(coarse.truncation_warning);
  EXPECT_GT(coarse.residual, 1e-4);
}

TEST(Pullback, DerivativeGrowthFollowsLyapunov) {
  // |e_k| = 1 everywhere, so a coarse lattice already sees the exact sup.
  const AnosovMap cat;
  std::vector<double> ts, logs;
  for (int t = 0; t <= 8; ++t) {
    const auto p = pullback(TorusSymbol::mode(1, 0), cat, t, {.bandwidth_out = 0, .bandwidth_cap = 1 << 20});
    ts.push_back(t);
    logs.push_back(std::log(seminorm_check(p.symbol, 1.0, 1, 16).max_of_order(1)));
  }
  EXPECT_NEAR(fit_line(ts, logs).slope / cat.lyapunov(), 1.0, 0.15);
}

TEST(TimeAverage, ConstantAndSingleModes) {
  const AnosovMap cat;
  const auto c = TorusSymbol::constant(2.5);
  EXPECT_EQ(time_average(c, cat, 7).symbol.mean(), cplx(2.5));
  EXPECT_NEAR(time_average(TorusSymbol::mode(1, 0), cat, 4).symbol.l2_norm(), 0.5, 1e-15);
  for (int t : {1, 4, 16}) {
    const double n = time_average(TorusSymbol::mode(1, 0), cat, t, {.bandwidth_out = 0, .bandwidth_cap = 1 << 30})
                         .symbol.l2_norm();
    EXPECT_NEAR(n * n, 1.0 / t, 1e-12) << t;
  }
  // T = 64 leaves the representable lattice; the explicit sum overflows.
  EXPECT_THROW(time_average(TorusSymbol::mode(1, 0), cat, 64), Error);
}

TEST(TimeAverage, MeanInvariantAndNormNonincreasing) {
  const AnosovMap cat;
  const auto a = bump(0.3, 0.5, 8);
  double prev = 1e300;
  for (int t : {1, 2, 4}) {
    const auto av = time_average(a, cat, t).symbol;
    EXPECT_EQ(av.mean(), a.mean());
    const double n = av.without_mean().l2_norm();
    EXPECT_LE(n, prev + 1e-12);
    prev = n;
  }
  const AnosovMap kicked(default_cat_matrix, 0.05);
  const auto av = time_average(a, kicked, 3, {.bandwidth_out = 48});
  EXPECT_NEAR(av.symbol.mean().real(), a.mean().real(), 1e-9);
}

TEST(Correlation, ExactValues) {
  const AnosovMap cat;
  const auto e = TorusSymbol::mode(1, 0);
  EXPECT_EQ(correlation(e, e, cat, 0), cplx(1.0));
  EXPECT_EQ(correlation(e, e, cat, 1), cplx(0.0));
}

TEST(Correlation, Symmetry) {
  const auto f = random_symbol(2, 7), g = random_symbol(2, 8);
  const AnosovMap cat;
  for (int t : {-3, -1, 0, 2, 3})
    EXPECT_LT(std::abs(correlation(f, g, cat, t) - std::conj(correlation(g, f, cat, -t))), 1e-12);
  const AnosovMap kicked(default_cat_matrix, 0.05);
  const auto fr = bump(0.2, 0.5, 8), gr = bump(0.7, 0.5, 8);
  for (int t : {1, 2})
    EXPECT_LT(std::abs(correlation(fr, gr, kicked, t, {256}) - std::conj(correlation(gr, fr, kicked, -t, {256}))),
              1e-3);
}

TEST(Correlation, LinearMapAgreesWithQuadrature) {
  // The lattice path applied to the unperturbed map reproduces the exact values.
  const AnosovMap cat;
  const auto f = bump(0.25, 0.5, 8);
  const auto exact = correlation_series(f, f, cat, 3);
  // epsilon tiny but nonzero forces the quadrature path
  const AnosovMap almost(default_cat_matrix, 1e-12);
  const auto quad = correlation_series(f, f, almost, 3, {512});
  for (int t = 0; t <= 3; ++t) EXPECT_NEAR(std::abs(exact[t] - quad[t]), 0.0, 1e-6) << t;
}

TEST(Correlation, VanishesBeyondHorizon) {
  const AnosovMap cat;
  for (int k : {1, 2, 3, 5, 8}) {
    const auto f = random_symbol(k, 10 + k), g = random_symbol(k, 20 + k);
    const int th = correlation_horizon(cat, k);
    const auto c = correlation_series(f, g, cat, th + 4);
    EXPECT_GT(std::abs(c[th]), 1e-8) << k;
    for (int t = th + 1; t <= th + 4; ++t) EXPECT_LE(std::abs(c[t]), 1e-12) << k << " t=" << t;
  }
}

TEST(Correlation, HorizonVersusEscapeFormula) {
  // ceil(log 2K / l) + 1 covers K <= 18; from K = 19 on, lattice orbits that
  // pass close to the stable direction stay inside the band one step longer.
  const AnosovMap cat;
  for (int k = 1; k <= 18; ++k) EXPECT_LE(correlation_horizon(cat, k), nominal_correlation_horizon(cat, k)) << k;
  EXPECT_EQ(correlation_horizon(cat, 19), 5);
  EXPECT_EQ(nominal_correlation_horizon(cat, 19), 4);
  EXPECT_EQ(correlation_horizon(cat, 26), 6);
  TorusSymbol f(26), g(26);
  f.set({26, 15}, 1.0);
  g.set({26, -15}, 1.0);
  EXPECT_NEAR(std::abs(correlation(f, g, cat, 6)), 1.0, 1e-15);
}

TEST(Correlation, PerturbedDecay) {
  const AnosovMap kicked(default_cat_matrix, 0.05);
  const auto f = bump(0.5, 0.2, 20);
  const auto c = correlation_series(f, f, kicked, 12, {512});
  EXPECT_NEAR(c[0].real(), (f * f.conj()).mean().real() - std::norm(f.mean()), 1e-6);
  EXPECT_LT(std::abs(c[6]), 0.05 * std::abs(c[0]));
}

TEST(Ergodicity, SingleModeExponent) {
  const auto r = ergodicity_rate(TorusSymbol::mode(1, 0), AnosovMap(), {1, 2, 4, 8, 16, 32});
  EXPECT_NEAR(r.exponent, 0.5, 1e-3);
  EXPECT_NEAR(r.r2, 1.0, 1e-12);
  for (std::size_t i = 0; i < r.horizons.size(); ++i)
    EXPECT_NEAR(r.norms[i] * r.norms[i], 1.0 / r.horizons[i], 1e-12);
  const auto j = r.to_json();
  for (const char* key : {"T", "norm", "slope", "intercept", "r2"}) EXPECT_TRUE(j.contains(key)) << key;
}

TEST(Ergodicity, ConstantAndDegenerate) {
  const auto r = ergodicity_rate(TorusSymbol::constant(3.0), AnosovMap(), {1, 2, 4});
  EXPECT_TRUE(r.exact_ergodic);
  for (double n : r.norms) EXPECT_EQ(n, 0.0);
  try {
    ergodicity_rate(TorusSymbol::mode(1, 0), AnosovMap(), {1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::fit_degenerate);
  }
}

TEST(Ergodicity, DoubleSumMatchesDirectAverage) {
  const AnosovMap cat;
  const auto f = random_symbol(2, 30).without_mean();
  const auto r = ergodicity_rate(f, cat, {1, 3, 5});
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_NEAR(r.norms[i], time_average(f, cat, r.horizons[i]).symbol.l2_norm(), 1e-12);
}

TEST(Expansion, Rates) {
  EXPECT_NEAR(expansion_rate(AnosovMap(), 200, 1), std::log(2 + std::sqrt(3.0)), 0.013);
  EXPECT_NEAR(expansion_rate(AnosovMap({{{2, 1}, {1, 1}}}), 200, 2), std::log((3 + std::sqrt(5.0)) / 2), 0.01);
  const double base = expansion_rate(AnosovMap(), 500, 3);
  const double kicked = expansion_rate(AnosovMap(default_cat_matrix, 0.05), 500, 3);
  EXPECT_LT(std::abs(kicked - base) / base, 0.10);
  EXPECT_EQ(expansion_rate(AnosovMap(), 50, 9), expansion_rate(AnosovMap(), 50, 9));
}

TEST(Export, CorrelationCsv) {
  const auto path = (std::filesystem::temp_directory_path() / "qe_corr.csv").string();
  write_correlation_csv(correlation_series(TorusSymbol::mode(1, 0), TorusSymbol::mode(1, 0), AnosovMap(), 3), path);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "t,re,im,abs");
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 4), "0,1,");
}
